#include "ivgd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ivgd/errors.hpp"
#include "ivgd/metrics.hpp"
#include "ivgd/rng.hpp"

namespace ivgd {

std::string to_string(CertifyMethod m) {
    switch (m) {
        case CertifyMethod::jacobian_power_iteration: return "jacobian_power_iteration";
        case CertifyMethod::sampled_pairs: return "sampled_pairs";
        case CertifyMethod::both: return "both";
    }
    return "?";
}

CertifyMethod parse_certify_method(const std::string& text) {
    if (text == "jacobian_power_iteration" || text == "jacobian") return CertifyMethod::jacobian_power_iteration;
    if (text == "sampled_pairs" || text == "pairs") return CertifyMethod::sampled_pairs;
    if (text == "both") return CertifyMethod::both;
    throw ValidationError("unknown certification method: " + text);
}

std::string to_string(TargetKind t) { return t == TargetKind::mean ? "mean" : "binary"; }

TargetKind parse_target_kind(const std::string& text) {
    if (text == "mean") return TargetKind::mean;
    if (text == "binary") return TargetKind::binary;
    throw ValidationError("unknown target kind: " + text);
}

// ---------------------------------------------------------------------------
// Certification

namespace {

constexpr std::uint64_t kCertStream = 0x43455254ULL;

double jacobian_norm_at(const VectorMap& op, std::span<const double> x, const CertifyOptions& opts,
                        std::uint64_t stream) {
    const auto dim = x.size();
    Vector probe(x.begin(), x.end());
    Matrix jac;
    for (std::size_t j = 0; j < dim; ++j) {
        probe[j] = x[j] + opts.fd_step;
        const Vector up = op(probe);
        probe[j] = x[j] - opts.fd_step;
        const Vector down = op(probe);
        probe[j] = x[j];
        if (j == 0) jac = Matrix(up.size(), dim);
        for (std::size_t i = 0; i < up.size(); ++i) {
            const double d = (up[i] - down[i]) / (2.0 * opts.fd_step);
            if (!std::isfinite(d)) throw NumericError("non-finite finite difference during certification");
            jac(i, j) = d;
        }
    }
    return power_iteration_norm(dense_operator(jac), opts.power_iters, 1e-13, stream);
}

}  // namespace

LipschitzCertificate certify_lipschitz(const VectorMap& op, std::size_t dim, const CertifyOptions& opts,
                                       std::string name) {
    LipschitzCertificate cert{std::move(name), 0.0, opts.method, opts.n_samples, opts.seed};
    if (dim == 0) return cert;
    const bool use_jac = opts.method != CertifyMethod::sampled_pairs;
    const bool use_pairs = opts.method != CertifyMethod::jacobian_power_iteration;
    Vector x(dim);
    Vector xp(dim);
    const double lattice_lo = std::max(opts.lo + 2.0 * opts.fd_step, 0.0);
    const double lattice_hi = std::min(opts.hi - 2.0 * opts.fd_step, 1.0);
    for (std::size_t s = 0; s < opts.n_samples; ++s) {
        Rng rng{opts.seed, kCertStream, s};
        if (s == 0 && opts.anchor_lower_corner) {
            std::fill(x.begin(), x.end(), opts.lo + 2.0 * opts.fd_step);
        } else if (s % 2 == 1 && lattice_lo < lattice_hi) {
            // Vertex of the {0,1} lattice at a random density: inversion
            // iterates settle near binary source vectors.
            const double density = rng.uniform();
            for (auto& v : x) v = rng.uniform() < density ? lattice_hi : lattice_lo;
        } else {
            for (auto& v : x) v = rng.uniform(opts.lo, opts.hi);
        }
        if (use_jac) cert.estimate = std::max(cert.estimate, jacobian_norm_at(op, x, opts, s));
        if (use_pairs) {
            // Nearby partner: secant ratios approach the local Jacobian norm.
            const double radius = rng.uniform() < 0.5 ? 1e-3 : (opts.hi - opts.lo);
            for (std::size_t i = 0; i < dim; ++i) xp[i] = x[i] + radius * rng.uniform(-1.0, 1.0);
            const double den = l2_distance(x, xp);
            if (den > 0.0) {
                const double ratio = l2_distance(op(x), op(xp)) / den;
                if (!std::isfinite(ratio)) throw NumericError("non-finite secant ratio during certification");
                cert.estimate = std::max(cert.estimate, ratio);
            }
        }
    }
    return cert;
}

// ---------------------------------------------------------------------------
// Per-node network

PerNodeNet PerNodeNet::zeros(std::size_t hidden, double spectral_scale) {
    PerNodeNet net;
    net.hidden = hidden;
    net.spectral_scale = spectral_scale;
    net.params.add("W1", hidden, kInputs);
    net.params.add("b1", hidden, 1);
    net.params.add("W2", 1, hidden);
    net.params.add("b2", 1, 1);
    return net;
}

PerNodeNet PerNodeNet::create(std::size_t hidden, double spectral_scale, std::uint64_t seed) {
    if (!(spectral_scale > 0.0 && spectral_scale < 1.0)) throw ValidationError("spectral scale must be in (0,1)");
    auto net = zeros(hidden, spectral_scale);
    Rng rng{seed, 0x464e4554ULL};
    const double s1 = std::sqrt(2.0 / static_cast<double>(hidden + kInputs));
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden + 1));
    for (auto& w : net.params.values(0)) w = s1 * rng.normal();
    for (auto& w : net.params.values(2)) w = s2 * rng.normal();
    spectral_normalize(net, spectral_scale);
    return net;
}

Matrix PerNodeNet::w1() const {
    Matrix m(hidden, kInputs);
    std::copy(params.values(0).begin(), params.values(0).end(), m.data.begin());
    return m;
}

Matrix PerNodeNet::w2() const {
    Matrix m(1, hidden);
    std::copy(params.values(2).begin(), params.values(2).end(), m.data.begin());
    return m;
}

Matrix node_features(const Graph& g, std::span<const double> x) {
    const auto n = g.num_nodes();
    if (x.size() != n) throw ValidationError("feature input length does not match graph");
    Matrix feat(n, 2);
    const double pmax = g.max_prob();
    for (NodeId i = 0; i < n; ++i) {
        double mass = 0.0;
        for (auto e : g.in_edges(i)) mass += g.prob(e) * x[g.edge(e).src];
        feat(i, 0) = x[i];
        const double cap = static_cast<double>(g.in_degree(i)) * pmax;
        feat(i, 1) = cap > 0.0 ? mass / cap : 0.0;
    }
    return feat;
}

namespace {

struct NodeActivations {
    Vector hidden;  // tanh(W1 feat + b1)
    double out_tanh = 0.0;
};

NodeActivations node_forward(const PerNodeNet& net, double f0, double f1) {
    const auto w1 = net.params.values(0);
    const auto b1 = net.params.values(1);
    const auto w2 = net.params.values(2);
    NodeActivations a;
    a.hidden.resize(net.hidden);
    double out = net.params.values(3)[0];
    for (std::size_t k = 0; k < net.hidden; ++k) {
        a.hidden[k] = std::tanh(w1[2 * k] * f0 + w1[2 * k + 1] * f1 + b1[k]);
        out += w2[k] * a.hidden[k];
    }
    a.out_tanh = std::tanh(out);
    return a;
}

}  // namespace

Vector f_forward(const PerNodeNet& net, const Graph& g, std::span<const double> x) {
    if (!all_finite(net.params.flat_values())) throw NumericError("non-finite weights in feature network");
    const Matrix feat = node_features(g, x);
    Vector zeta(g.num_nodes());
    for (std::size_t i = 0; i < zeta.size(); ++i) zeta[i] = 0.5 * (1.0 + node_forward(net, feat(i, 0), feat(i, 1)).out_tanh);
    return zeta;
}

void f_backward(PerNodeNet& net, const Graph& g, std::span<const double> x, std::span<const double> upstream) {
    const Matrix feat = node_features(g, x);
    const auto w2 = net.params.values(2);
    auto gw1 = net.params.grads(0);
    auto gb1 = net.params.grads(1);
    auto gw2 = net.params.grads(2);
    auto gb2 = net.params.grads(3);
    for (std::size_t i = 0; i < feat.rows; ++i) {
        if (upstream[i] == 0.0) continue;
        const auto a = node_forward(net, feat(i, 0), feat(i, 1));
        const double dout = upstream[i] * 0.5 * (1.0 - a.out_tanh * a.out_tanh);
        gb2[0] += dout;
        for (std::size_t k = 0; k < net.hidden; ++k) {
            gw2[k] += dout * a.hidden[k];
            const double dpre = dout * w2[k] * (1.0 - a.hidden[k] * a.hidden[k]);
            gb1[k] += dpre;
            gw1[2 * k] += dpre * feat(i, 0);
            gw1[2 * k + 1] += dpre * feat(i, 1);
        }
    }
}

void spectral_normalize(PerNodeNet& net, double c) {
    if (!(c > 0.0 && c < 1.0)) throw ValidationError("spectral scale must be in (0,1)");
    net.spectral_scale = c;
    for (std::size_t block : {std::size_t{0}, std::size_t{2}}) {
        const auto& b = net.params.block(block);
        Matrix m(b.rows, b.cols);
        auto vals = net.params.values(block);
        std::copy(vals.begin(), vals.end(), m.data.begin());
        const double sigma = power_iteration_norm(dense_operator(m), 2000, 1e-15, 0x534eULL + block);
        if (sigma <= c * (1.0 + 1e-9)) continue;
        const double scale = c / sigma;
        for (auto& v : vals) v *= scale;
    }
}

PerNodeNet spectral_normalized(PerNodeNet net, double c) {
    spectral_normalize(net, c);
    return net;
}

// ---------------------------------------------------------------------------
// IC operator

namespace {

/// Runs the recurrence and keeps every iterate (q[0] is the clamped input).
std::vector<Vector> ic_iterates(const ICOperator& ic, const Graph& g, std::span<const double> zeta) {
    const auto n = g.num_nodes();
    if (zeta.size() != n) throw ValidationError("IC operator input length does not match graph");
    std::vector<Vector> q(ic.t_steps + 1, Vector(n));
    for (std::size_t i = 0; i < n; ++i) q[0][i] = clamp01(zeta[i]);
    for (std::size_t t = 0; t < ic.t_steps; ++t) {
        for (NodeId v = 0; v < n; ++v) {
            double keep = 1.0;
            for (auto e : g.in_edges(v)) keep *= 1.0 - g.prob(e) * q[t][g.edge(e).src];
            q[t + 1][v] = 1.0 - (1.0 - q[0][v]) * keep;
        }
    }
    return q;
}

}  // namespace

Vector g_forward(const ICOperator& ic, const Graph& g, std::span<const double> zeta) {
    auto q = ic_iterates(ic, g, zeta);
    Vector out = std::move(q.back());
    for (auto& v : out) v *= ic.damping;
    return out;
}

Vector g_vjp(const ICOperator& ic, const Graph& g, std::span<const double> zeta, std::span<const double> upstream) {
    const auto n = g.num_nodes();
    const auto q = ic_iterates(ic, g, zeta);
    Vector bar(n);
    for (std::size_t i = 0; i < n; ++i) bar[i] = ic.damping * upstream[i];
    Vector seed_bar(n, 0.0);  // gradient wrt q0 through the (1 - q0) factor
    std::vector<double> factors;
    std::vector<double> suffix;
    for (std::size_t t = ic.t_steps; t-- > 0;) {
        Vector prev(n, 0.0);
        for (NodeId v = 0; v < n; ++v) {
            if (bar[v] == 0.0) continue;
            const auto in = g.in_edges(v);
            factors.resize(in.size());
            suffix.assign(in.size() + 1, 1.0);
            for (std::size_t j = 0; j < in.size(); ++j) factors[j] = 1.0 - g.prob(in[j]) * q[t][g.edge(in[j]).src];
            for (std::size_t j = in.size(); j-- > 0;) suffix[j] = suffix[j + 1] * factors[j];
            seed_bar[v] += bar[v] * suffix[0];
            double prefix = 1.0;
            const double outer = 1.0 - q[0][v];
            for (std::size_t j = 0; j < in.size(); ++j) {
                const double others = prefix * suffix[j + 1];
                prev[g.edge(in[j]).src] += bar[v] * outer * g.prob(in[j]) * others;
                prefix *= factors[j];
            }
        }
        bar.swap(prev);
    }
    Vector grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool inside = zeta[i] >= 0.0 && zeta[i] <= 1.0;
        grad[i] = inside ? bar[i] + seed_bar[i] : 0.0;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Residual blocks

Vector residual_F(const DiffusionOperators& ops, std::span<const double> x) {
    Vector out = ops.f(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (out[i] + x[i]);
    return out;
}

Vector residual_G(const DiffusionOperators& ops, std::span<const double> zeta) {
    Vector out = ops.g(zeta);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (out[i] + zeta[i]);
    return out;
}

Vector p_forward(const DiffusionOperators& ops, std::span<const double> x) { return residual_G(ops, residual_F(ops, x)); }

DiffusionOperators ResidualDiffusionModel::bind(const Graph& g) const {
    DiffusionOperators ops;
    ops.f = [this, &g](std::span<const double> x) { return f_forward(f, g, x); };
    ops.g = [this, &g](std::span<const double> z) { return g_forward(ic, g, z); };
    ops.cert_f = cert_f;
    ops.cert_g = cert_g;
    return ops;
}

bool ResidualDiffusionModel::certified_invertible() const {
    return cert_f && cert_g && cert_f->estimate < 1.0 && cert_g->estimate < 1.0;
}

void certify_model(ResidualDiffusionModel& model, const Graph& g, const CertifyOptions& f_opts,
                   const CertifyOptions& g_opts) {
    const auto n = g.num_nodes();
    model.cert_f = certify_lipschitz([&](std::span<const double> x) { return f_forward(model.f, g, x); }, n, f_opts, "f");
    auto g_map = [&](std::span<const double> z) { return g_forward(model.ic, g, z); };
    auto cert = certify_lipschitz(g_map, n, g_opts, "g");
    if (cert.estimate >= 0.95) {
        model.ic.damping *= 0.9 / cert.estimate;
        cert = certify_lipschitz(g_map, n, g_opts, "g");
    }
    model.cert_g = cert;
}

// ---------------------------------------------------------------------------
// Training

double forward_loss(ResidualDiffusionModel& model, const Graph& g, const CascadeDataset& ds,
                    std::span<const std::size_t> indices, TargetKind target, bool with_grad) {
    if (indices.empty()) throw ValidationError("forward loss over an empty sample set");
    const auto n = g.num_nodes();
    // Runs of one group share x, so P(x) is evaluated once per group.
    std::map<std::size_t, std::vector<std::size_t>> by_group;
    for (auto i : indices) by_group[ds.samples[i].group].push_back(i);
    const double norm = 1.0 / (static_cast<double>(indices.size()) * static_cast<double>(n));
    const auto ops = model.bind(g);
    double loss = 0.0;
    for (const auto& [grp, members] : by_group) {
        const auto& x = ds.samples[members.front()].x;
        const Vector zeta = residual_F(ops, x);
        const Vector p = residual_G(ops, zeta);
        Vector resid_sum(n, 0.0);
        for (auto i : members) {
            const auto& t = target == TargetKind::mean ? ds.samples[i].y_mean : ds.samples[i].y;
            for (std::size_t k = 0; k < n; ++k) {
                const double r = p[k] - t[k];
                loss += r * r;
                resid_sum[k] += r;
            }
        }
        if (!with_grad) continue;
        Vector dp(n);
        for (std::size_t k = 0; k < n; ++k) dp[k] = 2.0 * norm * resid_sum[k];
        const Vector through_g = g_vjp(model.ic, g, zeta, dp);
        Vector df(n);
        for (std::size_t k = 0; k < n; ++k) df[k] = 0.25 * (dp[k] + through_g[k]);  // dzeta/df = 1/2
        f_backward(model.f, g, x, df);
    }
    return loss * norm;
}

std::pair<double, double> forward_test_metrics(const ResidualDiffusionModel& model, const Graph& g,
                                               const CascadeDataset& ds, TargetKind target) {
    const auto ops = model.bind(g);
    Vector pred;
    Vector truth;
    std::map<std::size_t, Vector> cache;
    for (auto i : ds.test) {
        const auto& s = ds.samples[i];
        auto it = cache.find(s.group);
        if (it == cache.end()) it = cache.emplace(s.group, p_forward(ops, s.x)).first;
        pred.insert(pred.end(), it->second.begin(), it->second.end());
        const auto& t = target == TargetKind::mean ? s.y_mean : s.y;
        truth.insert(truth.end(), t.begin(), t.end());
    }
    if (pred.empty()) return {0.0, 0.0};
    const auto r = regression_metrics(pred, truth);
    return {r.mse, r.mae};
}

ForwardReport train_forward(ResidualDiffusionModel& model, const Graph& g, const CascadeDataset& ds,
                            const ForwardTrainConfig& cfg) {
    if (ds.train.empty()) throw ValidationError("forward training needs a non-empty train split");
    ForwardReport report;
    report.untrained_test_mse = forward_test_metrics(model, g, ds, cfg.target).first;
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.lr = cfg.lr;
    model.f.params.zero_grad();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = forward_loss(model, g, ds, ds.train, cfg.target, true);
        if (!std::isfinite(loss) || !all_finite(model.f.params.flat_grads()))
            throw TrainingError("forward loss diverged", epoch);
        report.train_loss.push_back(loss);
        optimizer_step(model.f.params, opt);
        spectral_normalize(model.f, model.f.spectral_scale);
    }
    std::tie(report.test_mse, report.test_mae) = forward_test_metrics(model, g, ds, cfg.target);
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kForwardMagic = "ivgd-forward-checkpoint";
constexpr int kForwardVersion = 1;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_cert(std::ostream& out, const std::string& key, const std::optional<LipschitzCertificate>& c) {
    out << key << ' ';
    if (!c) {
        out << "none\n";
        return;
    }
    out << fmt17(c->estimate) << ' ' << to_string(c->method) << ' ' << c->n_samples << ' ' << c->seed << '\n';
}

std::optional<LipschitzCertificate> read_cert(std::istream& in, const std::string& expect, const std::string& name) {
    std::string key;
    std::string first;
    if (!(in >> key >> first) || key != expect) throw FormatError("checkpoint: expected '" + expect + "'");
    if (first == "none") return std::nullopt;
    LipschitzCertificate c;
    c.operator_name = name;
    std::string method;
    c.estimate = std::stod(first);
    if (!(in >> method >> c.n_samples >> c.seed)) throw FormatError("checkpoint: truncated certificate");
    c.method = parse_certify_method(method);
    return c;
}

template <typename T>
T read_field(std::istream& in, const std::string& expect) {
    std::string key;
    T value{};
    if (!(in >> key >> value) || key != expect) throw FormatError("checkpoint: expected field '" + expect + "'");
    return value;
}

}  // namespace

std::string serialize_forward(const ResidualDiffusionModel& model) {
    std::ostringstream out;
    out << kForwardMagic << ' ' << kForwardVersion << '\n';
    out << "architecture per_node_mlp_2_" << model.f.hidden << "_1_tanh\n";
    out << "hidden " << model.f.hidden << '\n';
    out << "spectral_scale " << fmt17(model.f.spectral_scale) << '\n';
    out << "damping " << fmt17(model.ic.damping) << '\n';
    out << "t_steps " << model.ic.t_steps << '\n';
    write_cert(out, "cert_f", model.cert_f);
    write_cert(out, "cert_g", model.cert_g);
    const auto vals = model.f.params.flat_values();
    out << "params " << vals.size() << '\n';
    for (double v : vals) out << fmt17(v) << '\n';
    return out.str();
}

ResidualDiffusionModel parse_forward(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kForwardMagic) throw FormatError("not a forward-model checkpoint");
    if (version != kForwardVersion) throw FormatError("unsupported forward checkpoint version " + std::to_string(version));
    read_field<std::string>(in, "architecture");
    ResidualDiffusionModel model;
    const auto hidden = read_field<std::size_t>(in, "hidden");
    const auto scale = read_field<double>(in, "spectral_scale");
    model.f = PerNodeNet::zeros(hidden, scale);
    model.ic.damping = read_field<double>(in, "damping");
    model.ic.t_steps = read_field<std::size_t>(in, "t_steps");
    model.cert_f = read_cert(in, "cert_f", "f");
    model.cert_g = read_cert(in, "cert_g", "g");
    const auto count = read_field<std::size_t>(in, "params");
    if (count != model.f.params.size()) throw FormatError("checkpoint parameter count does not match architecture");
    for (auto& v : model.f.params.flat_values()) {
        std::string tok;
        if (!(in >> tok)) throw FormatError("checkpoint: truncated parameter array");
        v = std::stod(tok);
    }
    return model;
}

void save_forward(const ResidualDiffusionModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out << serialize_forward(model);
}

ResidualDiffusionModel load_forward(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_forward(ss.str());
}

}  // namespace ivgd
