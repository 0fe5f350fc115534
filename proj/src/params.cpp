#include "ivgd/params.hpp"

#include <algorithm>
#include <cmath>

#include "ivgd/errors.hpp"

namespace ivgd {

std::size_t ParamSet::add(std::string name, std::size_t rows, std::size_t cols, double fill) {
    for (const auto& b : blocks_)
        if (b.name == name) throw ValidationError("duplicate parameter block: " + name);
    blocks_.push_back({std::move(name), rows, cols, values_.size()});
    values_.resize(values_.size() + rows * cols, fill);
    grads_.resize(values_.size(), 0.0);
    return blocks_.size() - 1;
}

std::size_t ParamSet::index(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name) return i;
    throw ValidationError("no parameter block named " + name);
}

void ParamSet::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ParamSet::same_layout(const ParamSet& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& a = blocks_[i];
        const auto& b = other.blocks_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "adam") return OptimizerKind::adam;
    throw ValidationError("unknown optimizer: " + text);
}

namespace {

void check_shapes(const ParamSet& p, OptimizerState& s) {
    if (p.flat_grads().size() != p.flat_values().size()) throw ValidationError("gradient buffer shape mismatch");
    if (s.kind == OptimizerKind::adam) {
        if (s.m.empty() && s.v.empty() && s.step == 0) {
            s.m.assign(p.size(), 0.0);
            s.v.assign(p.size(), 0.0);
        }
        if (s.m.size() != p.size() || s.v.size() != p.size())
            throw ValidationError("optimizer moments do not match parameter shapes");
    }
}

}  // namespace

void sgd_step(ParamSet& p, OptimizerState& s) {
    check_shapes(p, s);
    auto w = p.flat_values();
    auto g = p.flat_grads();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= s.lr * g[i];
    ++s.step;
    p.zero_grad();
}

void adam_step(ParamSet& p, OptimizerState& s) {
    check_shapes(p, s);
    auto w = p.flat_values();
    auto g = p.flat_grads();
    ++s.step;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < w.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        w[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
    p.zero_grad();
}

void optimizer_step(ParamSet& p, OptimizerState& s) {
    if (s.kind == OptimizerKind::sgd)
        sgd_step(p, s);
    else
        adam_step(p, s);
}

double finite_diff_check(const std::function<double(const ParamSet&)>& loss, ParamSet& p, double eps) {
    double worst = 0.0;
    auto w = p.flat_values();
    auto g = p.flat_grads();
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double saved = w[i];
        w[i] = saved + eps;
        const double up = loss(p);
        w[i] = saved - eps;
        const double down = loss(p);
        w[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("non-finite loss in finite-difference check");
        const double numeric = (up - down) / (2.0 * eps);
        const double err = std::abs(g[i] - numeric) / std::max(1e-8, std::abs(g[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

double softplus(double s) { return s > 30.0 ? s : std::log1p(std::exp(s)); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw ValidationError("softplus inverse needs a positive argument");
    return y > 30.0 ? y : std::log(std::expm1(y));
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

}  // namespace ivgd
