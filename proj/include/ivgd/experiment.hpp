#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivgd/cascade.hpp"
#include "ivgd/diffusion.hpp"
#include "ivgd/graph.hpp"
#include "ivgd/localizer.hpp"
#include "ivgd/lpsi.hpp"
#include "ivgd/metrics.hpp"

namespace ivgd {

/// Every knob of an end-to-end run. Defaults follow the published parameter
/// settings except the compensation width (1000 there, 64 here).
struct ExperimentConfig {
    // [graph]
    std::string graph_name = "graph";
    std::string graph_source;  ///< edge-list path, or generator spec such as "er:20:0.2:7"
    bool directed = false;
    std::string prob_rule = "weighted_cascade";

    // [cascade]
    std::size_t n_groups = 10;
    double source_rate = 0.1;
    std::size_t runs = 60;
    std::size_t t_max = 0;  ///< 0: graph diameter (10 if the graph has no edges)
    double train_fraction = 0.8;

    // [forward]
    std::size_t forward_hidden = 6;
    double spectral_scale = 0.9;
    std::size_t t_steps = 0;  ///< 0: same as t_max
    std::size_t forward_epochs = 200;
    double forward_lr = 0.01;
    std::string forward_optimizer = "adam";
    std::string forward_target = "mean";
    std::size_t certify_samples = 64;
    std::string certify_method = "jacobian_power_iteration";

    // [localizer]
    std::size_t layers = 10;
    std::size_t comp_hidden = 64;
    double tau0 = 10.0;
    double alpha0 = 1.0;
    double rho0 = 1e-3;
    bool tied = true;
    std::size_t epochs = 100;
    double lr = 1e-3;
    std::string optimizer = "sgd";
    bool constraint_in_training = true;
    std::string observation = "binary";
    std::size_t inversion_iters = 20;
    double inversion_tol = 1e-6;
    double threshold = 0.5;

    // [lpsi]
    double lpsi_alpha = 0.01;

    // [experiment]
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "runs";
};

/// Reads an INI file ([section] / key = value). Relative graph paths are
/// resolved against the file's directory. Unknown keys are a ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
/// Canonical INI text for the config (what gets echoed next to artifacts).
std::string config_to_ini(const ExperimentConfig& cfg);

Graph load_graph(const ExperimentConfig& cfg);
std::size_t effective_t_max(const ExperimentConfig& cfg, const Graph& g);

CascadeDataset make_dataset(const ExperimentConfig& cfg, const Graph& g, std::uint64_t seed);

/// Calibrates g's damping, trains f, certifies both.
ResidualDiffusionModel make_forward(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds,
                                    std::uint64_t seed, ForwardReport* report = nullptr);

IVGDModel make_localizer(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds,
                         ResidualDiffusionModel forward, std::uint64_t seed, Ablation ablation = Ablation::none,
                         TrainHistory* history = nullptr);

struct EvaluationResult {
    MetricsReport ivgd;
    MetricsReport lpsi;
    std::vector<RocPoint> ivgd_roc;
};

/// Test-split metrics for the localizer and the LPSI baseline, pooled over
/// all test samples.
EvaluationResult evaluate(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds, const IVGDModel& m);
MetricsReport evaluate_lpsi(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds);

enum class Stage { generate, train_forward, train_localizer, evaluate, all };
Stage parse_stage(const std::string& text);

/// Runs the stages for one seed under out_dir/seed_<seed>/, reusing any
/// artifact whose stamp matches the config. Returns the metrics rows that
/// were written (empty unless the evaluate stage ran).
std::vector<std::string> run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed,
                                      const std::filesystem::path& out_dir, Stage stop_after = Stage::all);

/// Retrains the localizer with one component removed (reusing the dataset
/// and forward model of the base run) and returns its metrics row.
std::string run_ablation(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                         Ablation variant);

/// FNV-1a 64-bit; used to stamp artifacts with the config that made them.
std::uint64_t fnv1a(const std::string& text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ivgd
