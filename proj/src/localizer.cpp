#include "ivgd/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ivgd/errors.hpp"
#include "ivgd/rng.hpp"

namespace ivgd {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_inversion: return "no_inversion";
        case Ablation::no_compensation: return "no_compensation";
        case Ablation::no_validity: return "no_validity";
    }
    return "?";
}

Ablation parse_ablation(const std::string& text) {
    if (text == "none") return Ablation::none;
    if (text == "no_inversion") return Ablation::no_inversion;
    if (text == "no_compensation") return Ablation::no_compensation;
    if (text == "no_validity") return Ablation::no_validity;
    throw ValidationError("unknown ablation variant: " + text);
}

std::string to_string(Observation o) { return o == Observation::binary ? "binary" : "mean"; }

Observation parse_observation(const std::string& text) {
    if (text == "binary") return Observation::binary;
    if (text == "mean") return Observation::mean;
    throw ValidationError("unknown observation mode: " + text);
}

std::span<const double> observed(const CascadeSample& s, Observation obs) {
    return obs == Observation::binary ? std::span<const double>(s.y) : std::span<const double>(s.y_mean);
}

// ---------------------------------------------------------------------------
// Compensation network

namespace {

enum Block : std::size_t { W1 = 0, B1, W2, B2, W3, B3 };

/// out = W x + b for a rows x cols block.
void affine(std::span<const double> w, std::span<const double> b, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < rows; ++i) {
        double s = b[i];
        const double* row = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
        out[i] = s;
    }
}

/// grad_w += dout x^T, grad_b += dout, returns W^T dout.
Vector affine_backward(std::span<const double> w, std::span<double> gw, std::span<double> gb, std::size_t rows,
                       std::size_t cols, std::span<const double> x, std::span<const double> dout) {
    Vector dx(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double d = dout[i];
        if (d == 0.0) continue;
        gb[i] += d;
        const double* row = w.data() + i * cols;
        double* grow = gw.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            grow[j] += d * x[j];
            dx[j] += d * row[j];
        }
    }
    return dx;
}

bool inside_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

CompensationNet CompensationNet::add_to(ParamSet& params, const std::string& prefix, std::size_t n,
                                        std::size_t hidden, std::uint64_t seed) {
    CompensationNet net{n, hidden, params.num_blocks()};
    const auto w1 = params.add(prefix + ".W1", hidden, n);
    params.add(prefix + ".b1", hidden, 1);
    const auto w2 = params.add(prefix + ".W2", hidden, hidden);
    params.add(prefix + ".b2", hidden, 1);
    params.add(prefix + ".W3", n, hidden);
    params.add(prefix + ".b3", n, 1);
    Rng rng{seed, 0x434f4d50ULL};
    const double s1 = std::sqrt(1.0 / static_cast<double>(n));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    for (auto& v : params.values(w1)) v = s1 * rng.normal();
    for (auto& v : params.values(w2)) v = s2 * rng.normal();
    return net;
}

namespace {

Vector q_with_cache(const ParamSet& p, const CompensationNet& net, std::span<const double> z, CompensationCache* cache) {
    if (z.size() != net.n) throw ValidationError("compensation input length mismatch");
    const auto b = net.first_block;
    Vector h1(net.hidden);
    Vector h2(net.hidden);
    Vector q(net.n);
    affine(p.values(b + W1), p.values(b + B1), net.hidden, net.n, z, h1);
    for (auto& v : h1) v = std::tanh(v);
    affine(p.values(b + W2), p.values(b + B2), net.hidden, net.hidden, h1, h2);
    for (auto& v : h2) v = std::tanh(v);
    affine(p.values(b + W3), p.values(b + B3), net.n, net.hidden, h2, q);
    if (cache) {
        cache->input.assign(z.begin(), z.end());
        cache->h1 = std::move(h1);
        cache->h2 = std::move(h2);
    }
    return q;
}

}  // namespace

Vector compensation_q(const ParamSet& params, const CompensationNet& net, std::span<const double> z) {
    return q_with_cache(params, net, z, nullptr);
}

Vector compensate(const ParamSet& params, const CompensationNet& net, std::span<const double> z,
                  CompensationCache* cache) {
    Vector v = q_with_cache(params, net, z, cache);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += z[i];
    if (cache) cache->pre_clamp = v;
    for (auto& e : v) e = clamp01(e);
    return v;
}

Vector compensate_backward(ParamSet& params, const CompensationNet& net, const CompensationCache& cache,
                           std::span<const double> upstream) {
    const auto b = net.first_block;
    Vector dv(net.n);
    for (std::size_t i = 0; i < net.n; ++i) dv[i] = inside_unit(cache.pre_clamp[i]) ? upstream[i] : 0.0;
    Vector dh2 = affine_backward(params.values(b + W3), params.grads(b + W3), params.grads(b + B3), net.n, net.hidden,
                                 cache.h2, dv);
    for (std::size_t k = 0; k < net.hidden; ++k) dh2[k] *= 1.0 - cache.h2[k] * cache.h2[k];
    Vector dh1 = affine_backward(params.values(b + W2), params.grads(b + W2), params.grads(b + B2), net.hidden,
                                 net.hidden, cache.h1, dh2);
    for (std::size_t k = 0; k < net.hidden; ++k) dh1[k] *= 1.0 - cache.h1[k] * cache.h1[k];
    Vector dz = affine_backward(params.values(b + W1), params.grads(b + W1), params.grads(b + B1), net.hidden, net.n,
                                cache.input, dh1);
    for (std::size_t i = 0; i < net.n; ++i) dz[i] += dv[i];  // skip connection
    return dz;
}

// ---------------------------------------------------------------------------
// Validity-aware layer

LayerStep layer_forward(const LayerScalars& l, std::span<const double> c, std::span<const double> x_k, double lambda,
                        const ConstraintSpec* cs) {
    const double denom = l.tau + l.alpha;
    if (!(denom > 0.0) || !std::isfinite(denom)) throw NumericError("tau + alpha is not a positive finite number");
    LayerStep s;
    s.x.resize(x_k.size());
    if (cs) {
        s.phi = cs->residual(x_k);
        s.gamma = lambda + l.rho * s.phi;
    }
    for (std::size_t i = 0; i < x_k.size(); ++i) {
        const double pull = cs ? s.gamma * cs->a[i] : 0.0;
        s.x[i] = (l.tau * c[i] + l.alpha * x_k[i] - pull) / denom;
    }
    s.lambda = cs ? lambda + l.rho * cs->residual(s.x) : lambda;
    return s;
}

double layer_objective(const LayerScalars& l, std::span<const double> c, std::span<const double> x_k, double gamma,
                       const ConstraintSpec* cs, std::span<const double> x) {
    double prox = 0.0;
    double lin = 0.0;
    double damp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        prox += (x[i] - c[i]) * (x[i] - c[i]);
        if (cs) lin += cs->a[i] * (x[i] - x_k[i]);
        damp += (x[i] - x_k[i]) * (x[i] - x_k[i]);
    }
    return 0.5 * l.tau * prox + gamma * lin + 0.5 * l.alpha * damp;
}

// ---------------------------------------------------------------------------
// Model

IVGDModel IVGDModel::create(ResidualDiffusionModel diffusion, std::size_t n, const LocalizerConfig& cfg) {
    if (cfg.hidden == 0) throw ValidationError("compensation width must be positive");
    IVGDModel m;
    m.diffusion = std::move(diffusion);
    m.tied = cfg.tied;
    m.hidden = cfg.hidden;
    m.threshold = cfg.threshold;
    m.ablation = cfg.ablation;
    const std::size_t k_layers = cfg.ablation == Ablation::no_validity ? 0 : cfg.layers;
    m.comps.push_back(CompensationNet::add_to(m.params, "comp", n, cfg.hidden, cfg.seed));
    for (std::size_t k = 0; k < k_layers; ++k) {
        ValidityLayer layer;
        layer.scalar_block = m.params.add("layer" + std::to_string(k) + ".s", 3, 1);
        if (cfg.tied) {
            layer.comp = 0;
        } else {
            m.comps.push_back(
                CompensationNet::add_to(m.params, "layer" + std::to_string(k) + ".comp", n, cfg.hidden, cfg.seed + k + 1));
            layer.comp = m.comps.size() - 1;
        }
        m.layers.push_back(layer);
        m.set_scalars(k, {cfg.rho0, cfg.tau0, cfg.alpha0});
    }
    return m;
}

LayerScalars IVGDModel::scalars(std::size_t k) const {
    const auto s = params.values(layers[k].scalar_block);
    return {softplus(s[0]), softplus(s[1]), softplus(s[2])};
}

void IVGDModel::set_scalars(std::size_t k, const LayerScalars& l) {
    auto s = params.values(layers[k].scalar_block);
    s[0] = softplus_inverse(l.rho);
    s[1] = softplus_inverse(l.tau);
    s[2] = softplus_inverse(l.alpha);
}

namespace {

Vector apply_c(const IVGDModel& m, std::size_t comp, std::span<const double> x, CompensationCache& cache) {
    if (m.uses_compensation()) return compensate(m.params, m.comps[comp], x, &cache);
    cache.input.assign(x.begin(), x.end());
    cache.pre_clamp = cache.input;
    Vector out(x.begin(), x.end());
    for (auto& v : out) v = clamp01(v);
    return out;
}

Vector apply_c_backward(IVGDModel& m, std::size_t comp, const CompensationCache& cache, std::span<const double> up) {
    if (m.uses_compensation()) return compensate_backward(m.params, m.comps[comp], cache, up);
    Vector d(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) d[i] = inside_unit(cache.pre_clamp[i]) ? up[i] : 0.0;
    return d;
}

}  // namespace

HeadPass head_forward(const IVGDModel& m, std::span<const double> z, const ConstraintSpec* cs) {
    if (z.size() != m.num_nodes()) throw ValidationError("raw estimate length does not match model");
    if (cs && cs->a.size() != z.size()) throw ValidationError("constraint length does not match model");
    HeadPass p;
    p.z.assign(z.begin(), z.end());
    auto& tr = p.trace;
    tr.constraint_active = cs != nullptr;
    Vector x = apply_c(m, 0, z, p.initial);
    double lambda = 0.0;
    tr.x.push_back(x);
    tr.lambda.push_back(lambda);
    tr.constraint_residual.push_back(cs ? std::abs(cs->residual(x)) : 0.0);
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const auto l = m.scalars(k);
        p.layer_cache.emplace_back();
        p.c.push_back(apply_c(m, m.layers[k].comp, x, p.layer_cache.back()));
        auto step = layer_forward(l, p.c.back(), x, lambda, cs);
        if (!all_finite(step.x) || !std::isfinite(step.lambda)) throw NumericError("non-finite layer output");
        double dx2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) dx2 += (step.x[i] - x[i]) * (step.x[i] - x[i]);
        const double dl = step.lambda - lambda;
        tr.step_norm.push_back(dl * dl / l.rho + l.alpha * dx2);
        x = step.x;
        lambda = step.lambda;
        tr.x.push_back(x);
        tr.lambda.push_back(lambda);
        tr.constraint_residual.push_back(cs ? std::abs(cs->residual(x)) : 0.0);
        p.steps.push_back(std::move(step));
    }
    p.scores = x;
    for (auto& v : p.scores) v = clamp01(v);
    return p;
}

void head_backward(IVGDModel& m, const HeadPass& pass, const ConstraintSpec* cs, std::span<const double> upstream) {
    const auto n = m.num_nodes();
    const auto& xs = pass.trace.x;
    Vector dx(n);
    for (std::size_t i = 0; i < n; ++i) dx[i] = inside_unit(xs.back()[i]) ? upstream[i] : 0.0;
    double dlambda = 0.0;
    for (std::size_t k = m.layers.size(); k-- > 0;) {
        const auto l = m.scalars(k);
        const auto& x_k = xs[k];
        const auto& x_next = xs[k + 1];
        const auto& c = pass.c[k];
        const double denom = l.tau + l.alpha;
        double drho = 0.0;
        if (cs) {
            // lambda_{k+1} = lambda_k + rho (a^T x_{k+1} - b)
            for (std::size_t i = 0; i < n; ++i) dx[i] += dlambda * l.rho * cs->a[i];
            drho += dlambda * cs->residual(x_next);
        }
        Vector dc(n);
        Vector dx_prev(n);
        double dtau = 0.0;
        double dalpha = 0.0;
        double a_dot_u = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dc[i] = l.tau / denom * dx[i];
            dx_prev[i] = l.alpha / denom * dx[i];
            dtau += (c[i] - x_next[i]) * dx[i] / denom;
            dalpha += (x_k[i] - x_next[i]) * dx[i] / denom;
            if (cs) a_dot_u += cs->a[i] * dx[i];
        }
        if (cs) {
            // gamma = lambda_k + rho * phi_k enters as -gamma a / denom
            const double dgamma = -a_dot_u / denom;
            dlambda += dgamma;
            drho += dgamma * pass.steps[k].phi;
            for (std::size_t i = 0; i < n; ++i) dx_prev[i] += dgamma * l.rho * cs->a[i];
        }
        const Vector via_c = apply_c_backward(m, m.layers[k].comp, pass.layer_cache[k], dc);
        for (std::size_t i = 0; i < n; ++i) dx_prev[i] += via_c[i];
        const auto s = m.params.values(m.layers[k].scalar_block);
        auto gs = m.params.grads(m.layers[k].scalar_block);
        gs[0] += drho * sigmoid(s[0]);
        gs[1] += dtau * sigmoid(s[1]);
        gs[2] += dalpha * sigmoid(s[2]);
        dx.swap(dx_prev);
    }
    if (m.uses_compensation()) compensate_backward(m.params, m.comps[0], pass.initial, dx);
}

Vector raw_estimate(const IVGDModel& m, const Graph& g, std::span<const double> y, InversionReport* report) {
    if (y.size() != g.num_nodes()) throw ValidationError("observation length does not match graph");
    if (m.ablation == Ablation::no_inversion) return Vector(y.begin(), y.end());
    auto rep = invert_p(m.diffusion.bind(g), y, m.inversion);
    Vector z = rep.z;
    if (report) *report = std::move(rep);
    return z;
}

InferenceResult ivgd_infer(const IVGDModel& m, const Graph& g, std::span<const double> y,
                           std::optional<double> known_source_count) {
    InferenceResult out;
    InversionReport rep;
    const Vector z = raw_estimate(m, g, y, &rep);
    if (m.ablation != Ablation::no_inversion) out.inversion = std::move(rep);
    std::optional<ConstraintSpec> cs;
    if (known_source_count) cs = ConstraintSpec::source_count(g.num_nodes(), *known_source_count);
    auto pass = head_forward(m, z, cs ? &*cs : nullptr);
    out.scores = std::move(pass.scores);
    out.labels.resize(out.scores.size());
    for (std::size_t i = 0; i < out.scores.size(); ++i) out.labels[i] = out.scores[i] >= m.threshold ? 1.0 : 0.0;
    out.trace = std::move(pass.trace);
    return out;
}

// ---------------------------------------------------------------------------
// Training

double head_loss(IVGDModel& m, std::span<const double> z, std::span<const double> truth, const ConstraintSpec* cs,
                 bool with_grad) {
    const auto pass = head_forward(m, z, cs);
    const auto n = static_cast<double>(truth.size());
    double loss = 0.0;
    Vector up(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double r = pass.scores[i] - truth[i];
        loss += r * r;
        up[i] = 2.0 * r / n;
    }
    if (with_grad) head_backward(m, pass, cs, up);
    return loss / n;
}

TrainHistory ivgd_train(IVGDModel& m, const Graph& g, const CascadeDataset& ds, const LocalizerTrainConfig& cfg) {
    if (ds.train.empty()) throw ValidationError("localizer training needs a non-empty train split");
    const auto n = g.num_nodes();
    std::vector<Vector> z_cache;
    std::vector<ConstraintSpec> constraints;
    z_cache.reserve(ds.train.size());
    for (auto i : ds.train) {
        const auto& s = ds.samples[i];
        z_cache.push_back(raw_estimate(m, g, observed(s, cfg.observation)));
        const double count = std::accumulate(s.x.begin(), s.x.end(), 0.0);
        constraints.push_back(ConstraintSpec::source_count(n, count));
    }
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.lr = cfg.lr;
    m.params.zero_grad();
    TrainHistory hist;
    std::vector<std::size_t> order(ds.train.size());
    std::vector<double> losses(ds.train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng{cfg.seed, 0x45504f4348ULL, epoch};
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (auto j : order) {
            const auto& s = ds.samples[ds.train[j]];
            const ConstraintSpec* cs = cfg.constraint_in_training ? &constraints[j] : nullptr;
            const double loss = head_loss(m, z_cache[j], s.x, cs, true);
            if (!std::isfinite(loss) || !all_finite(m.params.flat_grads()))
                throw TrainingError("localizer loss is not finite", epoch);
            losses[j] = loss;
            optimizer_step(m.params, opt);
        }
        // Fixed summation order keeps the reported loss independent of the shuffle.
        double total = 0.0;
        for (double l : losses) total += l;
        hist.epoch_loss.push_back(total / static_cast<double>(losses.size()));
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Convergence conditions

LayerCondition check_layer_condition(double alpha, double rho, const ConstraintSpec& cs) {
    LayerCondition c;
    c.alpha = alpha;
    c.rho = rho;
    c.margin = alpha - rho * spectral_radius_ata(cs);
    c.alpha_positive = std::isfinite(alpha) && alpha > 0.0;
    c.rho_positive = std::isfinite(rho) && rho > 0.0;
    c.margin_positive = c.margin > 0.0;
    return c;
}

std::vector<LayerCondition> check_convergence_conditions(const IVGDModel& m, const ConstraintSpec& cs) {
    std::vector<LayerCondition> out;
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const auto l = m.scalars(k);
        out.push_back(check_layer_condition(l.alpha, l.rho, cs));
    }
    return out;
}

namespace {

bool nonincreasing_tail(const std::vector<double>& v) {
    if (v.size() < 2) return true;
    const std::size_t start = v.size() / 2;
    for (std::size_t i = start + 1; i < v.size(); ++i)
        if (v[i] > v[i - 1]) return false;
    return true;
}

}  // namespace

TraceDiagnostics diagnostics_from_trace(const LayerTrace& trace) {
    TraceDiagnostics d;
    d.step_norms = trace.step_norm;
    d.constraint_residuals = trace.constraint_residual;
    d.monotone_tail = nonincreasing_tail(d.step_norms) && nonincreasing_tail(d.constraint_residuals);
    return d;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kHeadMagic = "ivgd-localizer-checkpoint";
constexpr int kHeadVersion = 1;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T read_field(std::istream& in, const std::string& expect) {
    std::string key;
    T value{};
    if (!(in >> key >> value) || key != expect) throw FormatError("localizer checkpoint: expected '" + expect + "'");
    return value;
}

}  // namespace

std::string serialize_localizer(const IVGDModel& m) {
    std::ostringstream out;
    out << kHeadMagic << ' ' << kHeadVersion << '\n';
    out << "n " << m.num_nodes() << '\n';
    out << "layers " << m.layers.size() << '\n';
    out << "hidden " << m.hidden << '\n';
    out << "tied " << (m.tied ? 1 : 0) << '\n';
    out << "threshold " << fmt17(m.threshold) << '\n';
    out << "ablation " << to_string(m.ablation) << '\n';
    out << "inversion_max_iters " << m.inversion.max_iters << '\n';
    out << "inversion_tol " << fmt17(m.inversion.tol) << '\n';
    out << "constraint_default source_count\n";
    const auto vals = m.params.flat_values();
    out << "params " << vals.size() << '\n';
    for (double v : vals) out << fmt17(v) << '\n';
    return out.str();
}

IVGDModel parse_localizer(const std::string& text, ResidualDiffusionModel diffusion) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kHeadMagic) throw FormatError("not a localizer checkpoint");
    if (version != kHeadVersion) throw FormatError("unsupported localizer checkpoint version " + std::to_string(version));
    LocalizerConfig cfg;
    const auto n = read_field<std::size_t>(in, "n");
    cfg.layers = read_field<std::size_t>(in, "layers");
    cfg.hidden = read_field<std::size_t>(in, "hidden");
    cfg.tied = read_field<int>(in, "tied") != 0;
    cfg.threshold = read_field<double>(in, "threshold");
    cfg.ablation = parse_ablation(read_field<std::string>(in, "ablation"));
    InversionOptions inv;
    inv.max_iters = read_field<std::size_t>(in, "inversion_max_iters");
    inv.tol = read_field<double>(in, "inversion_tol");
    read_field<std::string>(in, "constraint_default");
    auto m = IVGDModel::create(std::move(diffusion), n, cfg);
    m.inversion = inv;
    const auto count = read_field<std::size_t>(in, "params");
    if (count != m.params.size()) throw FormatError("localizer checkpoint parameter count does not match header");
    for (auto& v : m.params.flat_values()) {
        std::string tok;
        if (!(in >> tok)) throw FormatError("localizer checkpoint: truncated parameter array");
        v = std::stod(tok);
    }
    return m;
}

void save_localizer(const IVGDModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out << serialize_localizer(m);
}

IVGDModel load_localizer(const std::string& path, ResidualDiffusionModel diffusion) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_localizer(ss.str(), std::move(diffusion));
}

}  // namespace ivgd
