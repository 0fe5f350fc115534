#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ivgd/graph.hpp"
#include "ivgd/linalg.hpp"
#include "ivgd/rng.hpp"

namespace ivgd {

/// One Monte-Carlo realisation of a cascade.
struct CascadeSample {
    Vector x;       ///< source indicator
    Vector y;       ///< activation indicator at the final step
    Vector y_mean;  ///< activation frequency over every run of the same group
    std::size_t group = 0;
    std::size_t run = 0;
};

struct CascadeConfig {
    std::size_t n_groups = 10;
    double source_rate = 0.1;
    std::size_t runs = 60;
    std::size_t t_max = 10;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
};

struct CascadeDataset {
    std::size_t n = 0;
    CascadeConfig config;
    std::string prob_rule;  ///< informational, e.g. "weighted_cascade"
    std::vector<CascadeSample> samples;
    std::vector<std::size_t> train;  ///< sample indices
    std::vector<std::size_t> test;
};

/// Independent Cascade: each newly activated node gets one chance to activate
/// every inactive out-neighbour. Runs at most `t_max` rounds.
Vector simulate_ic(const Graph& g, std::span<const double> x, std::size_t t_max, Rng& rng);

/// ceil(rate * n) with a guard against representation error (0.1 * 30 is
/// slightly above 3 in binary).
std::size_t source_count_for(std::size_t n, double rate);

/// Samples `n_groups` source sets and `runs` simulations of each, then splits
/// groups 8:2 (by default) into train and test. Fully determined by the seed.
CascadeDataset generate_dataset(const Graph& g, const CascadeConfig& cfg, const std::string& prob_rule = "");

/// Number of distinct groups in a sample index list, in first-seen order.
std::vector<std::size_t> groups_of(const CascadeDataset& ds, std::span<const std::size_t> indices);

/// Line-oriented text format: a JSON header with metadata and the split,
/// then one JSON object per sample holding index lists of sources and
/// activated nodes. y_mean is rebuilt on load.
std::string serialize_dataset(const CascadeDataset& ds);
CascadeDataset parse_dataset(const std::string& text);
void save_dataset(const CascadeDataset& ds, const std::string& path);
CascadeDataset load_dataset(const std::string& path);

/// Recomputes y_mean for every group from the stored binary vectors.
void recompute_group_means(CascadeDataset& ds);

}  // namespace ivgd
