#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ivgd {

/// Flat registry of named parameter blocks with matching gradient buffers.
class ParamSet {
public:
    struct Block {
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::size_t offset = 0;
        std::size_t size() const { return rows * cols; }
    };

    /// Appends a rows x cols block initialised to `fill`; returns its index.
    std::size_t add(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0);

    std::size_t num_blocks() const { return blocks_.size(); }
    const Block& block(std::size_t i) const { return blocks_[i]; }
    /// Index of a named block; throws ValidationError if absent.
    std::size_t index(const std::string& name) const;

    std::span<double> values(std::size_t i) { return {values_.data() + blocks_[i].offset, blocks_[i].size()}; }
    std::span<const double> values(std::size_t i) const {
        return {values_.data() + blocks_[i].offset, blocks_[i].size()};
    }
    std::span<double> grads(std::size_t i) { return {grads_.data() + blocks_[i].offset, blocks_[i].size()}; }
    std::span<const double> grads(std::size_t i) const {
        return {grads_.data() + blocks_[i].offset, blocks_[i].size()};
    }

    std::span<double> flat_values() { return values_; }
    std::span<const double> flat_values() const { return values_; }
    std::span<double> flat_grads() { return grads_; }
    std::span<const double> flat_grads() const { return grads_; }
    std::size_t size() const { return values_.size(); }

    void zero_grad();

    /// Layout equality (names and shapes), ignoring values.
    bool same_layout(const ParamSet& other) const;

private:
    std::vector<Block> blocks_;
    std::vector<double> values_;
    std::vector<double> grads_;
};

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// w <- w - lr * grad, then zeroes the gradients.
void sgd_step(ParamSet& p, OptimizerState& s);
/// Bias-corrected Adam update, then zeroes the gradients.
void adam_step(ParamSet& p, OptimizerState& s);
/// Dispatches on s.kind.
void optimizer_step(ParamSet& p, OptimizerState& s);

/// Central-difference gradient check against the gradients stored in `p`.
/// Returns the max over coordinates of |a - n| / max(1e-8, |a| + |n|).
/// `p` is restored to its original values on return.
double finite_diff_check(const std::function<double(const ParamSet&)>& loss, ParamSet& p, double eps = 1e-5);

/// Softplus and its inverse, used for positive reparameterisation.
double softplus(double s);
double softplus_inverse(double y);
double sigmoid(double s);

}  // namespace ivgd
