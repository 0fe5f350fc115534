#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivgd/cascade.hpp"
#include "ivgd/graph.hpp"
#include "ivgd/linalg.hpp"
#include "ivgd/params.hpp"

namespace ivgd {

using VectorMap = std::function<Vector(std::span<const double>)>;

enum class CertifyMethod { jacobian_power_iteration, sampled_pairs, both };
std::string to_string(CertifyMethod m);
CertifyMethod parse_certify_method(const std::string& text);

/// Empirical upper-bound estimate of an operator's Lipschitz constant (l2).
struct LipschitzCertificate {
    std::string operator_name;
    double estimate = 0.0;
    CertifyMethod method = CertifyMethod::jacobian_power_iteration;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

struct CertifyOptions {
    std::size_t n_samples = 64;
    std::uint64_t seed = 0;
    CertifyMethod method = CertifyMethod::jacobian_power_iteration;
    /// Sampling box for the probe points.
    double lo = 0.0;
    double hi = 1.0;
    double fd_step = 1e-5;
    std::size_t power_iters = 500;
    /// Probe the point lo + 2*fd_step first. For the IC operator every
    /// Jacobian entry is largest at the lower corner, so this sample hits
    /// the supremum.
    bool anchor_lower_corner = true;
};

/// Max over sampled points of the Jacobian spectral norm (Jacobian built by
/// central differences) and/or of the secant ratio |op(x)-op(x')|/|x-x'|.
/// Odd samples are vertices of the {0,1} lattice (clipped to the box), the
/// rest are uniform in the box. Sample i is drawn from its own stream
/// (seed, i), so the estimate is nondecreasing in n_samples.
LipschitzCertificate certify_lipschitz(const VectorMap& op, std::size_t dim, const CertifyOptions& opts,
                                       std::string name = "op");

/// Shared per-node network hidden = tanh(W1 feat + b1), out = W2 hidden + b2,
/// squashed to [0,1] by 0.5 * (1 + tanh(out)).
struct PerNodeNet {
    ParamSet params;
    std::size_t hidden = 6;
    double spectral_scale = 0.9;

    static constexpr std::size_t kInputs = 2;

    /// Xavier-style normal initialisation followed by spectral normalisation.
    static PerNodeNet create(std::size_t hidden, double spectral_scale, std::uint64_t seed);
    /// All weights and biases zero.
    static PerNodeNet zeros(std::size_t hidden = 6, double spectral_scale = 0.9);

    Matrix w1() const;
    Matrix w2() const;
    std::span<const double> b1() const { return params.values(1); }
    double b2() const { return params.values(3)[0]; }
};

/// Row i = [x_i, sum_{u in in(i)} p(u,i) x_u / (indeg(i) * max_edge_prob)]; the
/// second entry is 0 for nodes without in-edges.
Matrix node_features(const Graph& g, std::span<const double> x);

Vector f_forward(const PerNodeNet& net, const Graph& g, std::span<const double> x);
/// Accumulates d(loss)/d(params) into net.params grads given d(loss)/d(zeta).
void f_backward(PerNodeNet& net, const Graph& g, std::span<const double> x, std::span<const double> upstream);

/// Rescales each weight matrix by c / max(c, sigma_max). Matrices within
/// 1e-9 relative of c are left untouched so the operation is idempotent.
void spectral_normalize(PerNodeNet& net, double c);
PerNodeNet spectral_normalized(PerNodeNet net, double c);

/// Deterministic product-form IC influence operator.
struct ICOperator {
    std::size_t t_steps = 3;
    double damping = 1.0;
};

/// q0 = clamp(zeta, 0, 1); q_{t+1}(v) = 1 - (1 - q0(v)) * prod_{u in in(v)} (1 - p(u,v) q_t(u));
/// returns damping * q_T. The input clamp is a no-op on [0,1]^n and keeps the
/// operator's Lipschitz constant the same on all of R^n.
Vector g_forward(const ICOperator& ic, const Graph& g, std::span<const double> zeta);
/// Vector-Jacobian product of g_forward at zeta.
Vector g_vjp(const ICOperator& ic, const Graph& g, std::span<const double> zeta, std::span<const double> upstream);

/// The two residual maps plus their certificates, detached from concrete
/// models so test doubles can stand in for either side.
struct DiffusionOperators {
    VectorMap f;
    VectorMap g;
    std::optional<LipschitzCertificate> cert_f;
    std::optional<LipschitzCertificate> cert_g;
};

/// (f(x) + x) / 2
Vector residual_F(const DiffusionOperators& ops, std::span<const double> x);
/// (g(zeta) + zeta) / 2
Vector residual_G(const DiffusionOperators& ops, std::span<const double> zeta);
/// residual_G(residual_F(x))
Vector p_forward(const DiffusionOperators& ops, std::span<const double> x);

struct ResidualDiffusionModel {
    PerNodeNet f;
    ICOperator ic;
    std::optional<LipschitzCertificate> cert_f;
    std::optional<LipschitzCertificate> cert_g;

    /// Operators bound to `g`. Both the model and the graph must outlive the result.
    DiffusionOperators bind(const Graph& g) const;
    bool certified_invertible() const;
};

/// Certifies f and g on `g`. If g's estimate is >= 0.95 the damping is
/// multiplied by 0.9 / estimate and g is certified again, so a second call
/// leaves the damping unchanged. Calibrate before training f: the damping
/// is part of the forward model.
void certify_model(ResidualDiffusionModel& model, const Graph& g, const CertifyOptions& f_opts,
                   const CertifyOptions& g_opts);

enum class TargetKind { mean, binary };
std::string to_string(TargetKind t);
TargetKind parse_target_kind(const std::string& text);

struct ForwardTrainConfig {
    std::size_t epochs = 200;
    double lr = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    TargetKind target = TargetKind::mean;
};

struct ForwardReport {
    double untrained_test_mse = 0.0;
    double test_mse = 0.0;
    double test_mae = 0.0;
    std::vector<double> train_loss;  ///< per epoch, before the update
};

/// Mean squared error of p_forward over the given samples; fills the
/// parameter gradients of model.f when `with_grad` is set.
double forward_loss(ResidualDiffusionModel& model, const Graph& g, const CascadeDataset& ds,
                    std::span<const std::size_t> indices, TargetKind target, bool with_grad);

/// Full-batch training of f with spectral normalisation after every update.
ForwardReport train_forward(ResidualDiffusionModel& model, const Graph& g, const CascadeDataset& ds,
                            const ForwardTrainConfig& cfg);

/// Test-split regression metrics of p_forward against the chosen target.
std::pair<double, double> forward_test_metrics(const ResidualDiffusionModel& model, const Graph& g,
                                               const CascadeDataset& ds, TargetKind target);

std::string serialize_forward(const ResidualDiffusionModel& model);
ResidualDiffusionModel parse_forward(const std::string& text);
void save_forward(const ResidualDiffusionModel& model, const std::string& path);
ResidualDiffusionModel load_forward(const std::string& path);

}  // namespace ivgd
