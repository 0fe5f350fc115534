#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivgd/cascade.hpp"
#include "ivgd/diffusion.hpp"
#include "ivgd/graph.hpp"
#include "ivgd/inversion.hpp"
#include "ivgd/params.hpp"

namespace ivgd {

/// Three affine layers n -> h -> h -> n with tanh between them. The network
/// computes the correction Q(z); compensate() adds the skip connection and
/// clamps. Weights live in a ParamSet owned elsewhere; this is a layout.
struct CompensationNet {
    std::size_t n = 0;
    std::size_t hidden = 0;
    std::size_t first_block = 0;  ///< W1, b1, W2, b2, W3, b3 follow in order

    /// Registers the six blocks under `prefix`. W3 and biases start at zero,
    /// so a fresh net computes Q = 0.
    static CompensationNet add_to(ParamSet& params, const std::string& prefix, std::size_t n, std::size_t hidden,
                                  std::uint64_t seed);
};

/// Activations kept for the backward pass of one compensation evaluation.
struct CompensationCache {
    Vector input;
    Vector h1;
    Vector h2;
    Vector pre_clamp;  ///< z + Q(z)
};

Vector compensation_q(const ParamSet& params, const CompensationNet& net, std::span<const double> z);
/// clamp(z + Q(z), 0, 1)
Vector compensate(const ParamSet& params, const CompensationNet& net, std::span<const double> z,
                  CompensationCache* cache = nullptr);
/// Backward of compensate(): adds parameter gradients into `params` and
/// returns d(loss)/dz. Clamp derivative is 1 on [0,1] and 0 outside.
Vector compensate_backward(ParamSet& params, const CompensationNet& net, const CompensationCache& cache,
                           std::span<const double> upstream);

struct LayerScalars {
    double rho = 1e-3;
    double tau = 10.0;
    double alpha = 1.0;
};

struct LayerStep {
    Vector x;
    double lambda = 0.0;
    double gamma = 0.0;  ///< lambda_k + rho * (a^T x_k - b), 0 when inactive
    double phi = 0.0;    ///< a^T x_k - b
};

/// Closed-form minimiser of
///   h(x) = tau/2 |x - c|^2 + gamma a^T (x - x_k) + alpha/2 |x - x_k|^2
/// followed by the dual ascent step. `c` is C^k(x_k). With `cs == nullptr`
/// the constraint is inactive and lambda is carried through unchanged.
LayerStep layer_forward(const LayerScalars& l, std::span<const double> c, std::span<const double> x_k, double lambda,
                        const ConstraintSpec* cs);

/// The linearised surrogate h evaluated at x.
double layer_objective(const LayerScalars& l, std::span<const double> c, std::span<const double> x_k, double gamma,
                       const ConstraintSpec* cs, std::span<const double> x);

/// One validity-aware layer: positive scalars through softplus of a free
/// 3-vector [s_rho, s_tau, s_alpha], plus the C^k it uses.
struct ValidityLayer {
    std::size_t scalar_block = 0;
    std::size_t comp = 0;  ///< index into IVGDModel::comps
};

/// Per-layer quantities of one inference run.
struct LayerTrace {
    std::vector<Vector> x;                   ///< x^0 .. x^K
    std::vector<double> lambda;              ///< lambda^0 .. lambda^K
    std::vector<double> constraint_residual; ///< |a^T x^k - b|, 0 if inactive
    std::vector<double> step_norm;           ///< |u^{k+1} - u^k|^2_{M^k}, k = 0..K-1
    bool constraint_active = false;
};

enum class Ablation { none, no_inversion, no_compensation, no_validity };
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);

struct LocalizerConfig {
    std::size_t layers = 10;
    std::size_t hidden = 64;
    double tau0 = 10.0;
    double alpha0 = 1.0;
    double rho0 = 1e-3;
    bool tied = true;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::none;
};

class IVGDModel {
public:
    ResidualDiffusionModel diffusion;
    ParamSet params;
    std::vector<CompensationNet> comps;  ///< comps[0] produces x^0
    std::vector<ValidityLayer> layers;
    bool tied = true;
    std::size_t hidden = 0;
    double threshold = 0.5;
    Ablation ablation = Ablation::none;
    InversionOptions inversion;

    static IVGDModel create(ResidualDiffusionModel diffusion, std::size_t n, const LocalizerConfig& cfg);

    std::size_t num_nodes() const { return comps.empty() ? 0 : comps.front().n; }
    LayerScalars scalars(std::size_t k) const;
    void set_scalars(std::size_t k, const LayerScalars& s);
    bool uses_compensation() const { return ablation != Ablation::no_compensation; }
};

/// Intermediate values of the head (everything after inversion).
struct HeadPass {
    Vector z;
    CompensationCache initial;
    std::vector<CompensationCache> layer_cache;
    std::vector<Vector> c;
    std::vector<LayerStep> steps;
    LayerTrace trace;
    Vector scores;
};

/// Runs compensation and the K layers from a raw estimate z.
HeadPass head_forward(const IVGDModel& m, std::span<const double> z, const ConstraintSpec* cs);
/// Accumulates gradients of a loss with d(loss)/d(scores) = upstream into m.params.
void head_backward(IVGDModel& m, const HeadPass& pass, const ConstraintSpec* cs, std::span<const double> upstream);

struct InferenceResult {
    Vector scores;
    Vector labels;
    LayerTrace trace;
    std::optional<InversionReport> inversion;
};

/// Raw source estimate for Y_T: P^{-1}(Y_T), or Y_T itself under no_inversion.
Vector raw_estimate(const IVGDModel& m, const Graph& g, std::span<const double> y,
                    InversionReport* report = nullptr);

/// Full pipeline. The constraint sum(x) = count is active only when a
/// source count is supplied.
InferenceResult ivgd_infer(const IVGDModel& m, const Graph& g, std::span<const double> y,
                           std::optional<double> known_source_count = std::nullopt);

enum class Observation { binary, mean };
std::string to_string(Observation o);
Observation parse_observation(const std::string& text);

struct LocalizerTrainConfig {
    std::size_t epochs = 100;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::sgd;
    bool constraint_in_training = true;
    Observation observation = Observation::binary;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> epoch_loss;  ///< mean per-sample loss seen during each epoch
};

/// Mean squared error between head scores and the true sources for one
/// sample; fills gradients when `with_grad`.
double head_loss(IVGDModel& m, std::span<const double> z, std::span<const double> truth, const ConstraintSpec* cs,
                 bool with_grad);

/// Per-sample SGD/Adam over the train split with the diffusion model frozen
/// and z cached once per sample.
TrainHistory ivgd_train(IVGDModel& m, const Graph& g, const CascadeDataset& ds, const LocalizerTrainConfig& cfg);

/// Observation vector fed to localisation for a sample.
std::span<const double> observed(const CascadeSample& s, Observation obs);

struct LayerCondition {
    double alpha = 0.0;
    double rho = 0.0;
    double margin = 0.0;  ///< alpha - rho * r(A^T A)
    bool alpha_positive = false;
    bool rho_positive = false;
    bool margin_positive = false;
    bool ok() const { return alpha_positive && rho_positive && margin_positive; }
};

LayerCondition check_layer_condition(double alpha, double rho, const ConstraintSpec& cs);
std::vector<LayerCondition> check_convergence_conditions(const IVGDModel& m, const ConstraintSpec& cs);

struct TraceDiagnostics {
    std::vector<double> step_norms;
    std::vector<double> constraint_residuals;
    bool monotone_tail = true;
};

/// monotone_tail holds when both sequences are nonincreasing over their
/// last half.
TraceDiagnostics diagnostics_from_trace(const LayerTrace& trace);

std::string serialize_localizer(const IVGDModel& m);
/// Restores the head; the diffusion model comes from its own checkpoint.
IVGDModel parse_localizer(const std::string& text, ResidualDiffusionModel diffusion);
void save_localizer(const IVGDModel& m, const std::string& path);
IVGDModel load_localizer(const std::string& path, ResidualDiffusionModel diffusion);

}  // namespace ivgd
