#include "ivgd/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include "ivgd/errors.hpp"
#include "ivgd/rng.hpp"

namespace ivgd {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != ',') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::vector<double> assign_probs(std::size_t n, std::span<const Edge> edges, const ProbRule& rule) {
    std::vector<double> probs(edges.size());
    if (const auto* c = std::get_if<ConstantProb>(&rule)) {
        std::fill(probs.begin(), probs.end(), c->p);
    } else {
        std::vector<std::size_t> indeg(n, 0);
        for (const auto& e : edges) ++indeg[e.dst];
        for (std::size_t i = 0; i < edges.size(); ++i) probs[i] = 1.0 / static_cast<double>(indeg[edges[i].dst]);
    }
    return probs;
}

void sort_unique(std::vector<Edge>& edges) {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

}  // namespace

std::string to_string(const ProbRule& rule) {
    if (const auto* c = std::get_if<ConstantProb>(&rule)) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "constant:%.17g", c->p);
        return buf;
    }
    return "weighted_cascade";
}

ProbRule parse_prob_rule(std::string_view text) {
    text = trim(text);
    if (text == "weighted_cascade" || text == "wc") return WeightedCascade{};
    if (text.starts_with("constant:")) {
        double p = 0.0;
        const auto tok = text.substr(9);
        if (!parse_number(tok, p) || !(p >= 0.0 && p <= 1.0))
            throw ValidationError("constant edge probability must be in [0,1]: " + std::string(tok));
        return ConstantProb{p};
    }
    throw ValidationError("unknown probability rule: " + std::string(text));
}

Graph Graph::from_edges(std::size_t n, std::vector<Edge> edges, std::vector<double> probs) {
    if (edges.size() != probs.size()) throw ValidationError("edge/probability count mismatch");
    std::vector<std::size_t> order(edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return edges[a] < edges[b]; });

    Graph g;
    g.n_ = n;
    for (auto i : order) {
        const Edge& e = edges[i];
        if (e.src >= n || e.dst >= n)
            throw ValidationError("edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                                  ") out of range for n=" + std::to_string(n));
        if (e.src == e.dst) throw ValidationError("self-loop on node " + std::to_string(e.src));
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0))
            throw ValidationError("edge probability outside [0,1]");
        if (!g.edges_.empty() && g.edges_.back() == e) continue;
        g.edges_.push_back(e);
        g.probs_.push_back(probs[i]);
    }

    g.out_off_.assign(n + 1, 0);
    g.in_off_.assign(n + 1, 0);
    for (const auto& e : g.edges_) {
        ++g.out_off_[e.src + 1];
        ++g.in_off_[e.dst + 1];
    }
    for (std::size_t v = 0; v < n; ++v) {
        g.out_off_[v + 1] += g.out_off_[v];
        g.in_off_[v + 1] += g.in_off_[v];
    }
    g.out_ids_.resize(g.edges_.size());
    g.in_ids_.resize(g.edges_.size());
    std::vector<std::size_t> out_fill(g.out_off_.begin(), g.out_off_.end() - 1);
    std::vector<std::size_t> in_fill(g.in_off_.begin(), g.in_off_.end() - 1);
    for (std::size_t e = 0; e < g.edges_.size(); ++e) {
        g.out_ids_[out_fill[g.edges_[e].src]++] = e;
        g.in_ids_[in_fill[g.edges_[e].dst]++] = e;
    }
    for (double p : g.probs_) g.max_prob_ = std::max(g.max_prob_, p);
    return g;
}

Graph Graph::from_edges(std::size_t n, std::vector<Edge> edges, const ProbRule& rule) {
    sort_unique(edges);
    for (const auto& e : edges)
        if (e.src >= n || e.dst >= n) throw ValidationError("edge endpoint out of range");
    auto probs = assign_probs(n, edges, rule);
    return from_edges(n, std::move(edges), std::move(probs));
}

std::vector<std::vector<NodeId>> Graph::undirected_neighbors() const {
    std::vector<std::vector<NodeId>> nb(n_);
    for (const auto& e : edges_) {
        nb[e.src].push_back(e.dst);
        nb[e.dst].push_back(e.src);
    }
    for (auto& list : nb) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    return nb;
}

void Graph::validate() const {
    if (out_off_.size() != n_ + 1 || in_off_.size() != n_ + 1) throw ValidationError("adjacency size mismatch");
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        if (edges_[e].src >= n_ || edges_[e].dst >= n_) throw ValidationError("node index out of range");
        if (edges_[e].src == edges_[e].dst) throw ValidationError("self-loop");
        if (e > 0 && !(edges_[e - 1] < edges_[e])) throw ValidationError("edges not sorted/unique");
        if (!(probs_[e] >= 0.0 && probs_[e] <= 1.0)) throw ValidationError("probability outside [0,1]");
    }
    std::vector<Edge> via_out;
    std::vector<Edge> via_in;
    for (NodeId v = 0; v < n_; ++v) {
        for (auto e : out_edges(v)) {
            if (edges_[e].src != v) throw ValidationError("out-adjacency inconsistent");
            via_out.push_back(edges_[e]);
        }
        for (auto e : in_edges(v)) {
            if (edges_[e].dst != v) throw ValidationError("in-adjacency inconsistent");
            via_in.push_back(edges_[e]);
        }
    }
    std::sort(via_out.begin(), via_out.end());
    std::sort(via_in.begin(), via_in.end());
    if (via_out != via_in || via_out.size() != edges_.size())
        throw ValidationError("in/out adjacency describe different edge sets");
}

std::size_t Graph::undirected_diameter() const {
    const auto nb = undirected_neighbors();
    std::size_t best = 0;
    std::vector<std::size_t> dist(n_);
    for (NodeId s = 0; s < n_; ++s) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<std::size_t>::max());
        std::deque<NodeId> queue{s};
        dist[s] = 0;
        while (!queue.empty()) {
            const auto u = queue.front();
            queue.pop_front();
            for (auto v : nb[u]) {
                if (dist[v] != std::numeric_limits<std::size_t>::max()) continue;
                dist[v] = dist[u] + 1;
                best = std::max(best, dist[v]);
                queue.push_back(v);
            }
        }
    }
    return best;
}

Graph load_edge_list(std::string_view text, bool directed, const ProbRule& rule) {
    std::vector<Edge> edges;
    long long max_index = -1;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto toks = split_ws(line);
        long long u = 0;
        long long v = 0;
        if (toks.size() < 2 || !parse_number(toks[0], u) || !parse_number(toks[1], v))
            throw ParseError("expected two integer node ids, got '" + std::string(line) + "'", line_no);
        if (u < 0 || v < 0) throw ValidationError("line " + std::to_string(line_no) + ": negative node index");
        if (u > std::numeric_limits<NodeId>::max() || v > std::numeric_limits<NodeId>::max())
            throw ValidationError("line " + std::to_string(line_no) + ": node index too large");
        if (u == v) throw ValidationError("line " + std::to_string(line_no) + ": self-loop");
        max_index = std::max({max_index, u, v});
        edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
        if (!directed) edges.push_back({static_cast<NodeId>(v), static_cast<NodeId>(u)});
    }
    return Graph::from_edges(static_cast<std::size_t>(max_index + 1), std::move(edges), rule);
}

Graph load_edge_list_file(const std::string& path, bool directed, const ProbRule& rule) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open edge list: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_edge_list(ss.str(), directed, rule);
}

std::string dump_graph(const Graph& g) {
    std::string out = std::to_string(g.num_nodes()) + " " + std::to_string(g.num_edges()) + "\n";
    char buf[96];
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        std::snprintf(buf, sizeof buf, "%u %u %.17g\n", g.edge(e).src, g.edge(e).dst, g.prob(e));
        out += buf;
    }
    return out;
}

Graph parse_graph_dump(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::size_t n = 0;
    std::size_t m = 0;
    if (!(in >> n >> m)) throw ParseError("missing 'n m' header", 1);
    std::vector<Edge> edges(m);
    std::vector<double> probs(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (!(in >> edges[i].src >> edges[i].dst >> probs[i])) throw ParseError("truncated edge record", i + 2);
    }
    return Graph::from_edges(n, std::move(edges), std::move(probs));
}

Graph generate_graph(const GraphKind& kind, const ProbRule& rule) {
    std::vector<Edge> und;
    std::size_t n = 0;
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            n = k.n;
            if (n == 0) throw ValidationError("graph generator needs n >= 1");
            if constexpr (std::is_same_v<K, PathGraph>) {
                for (NodeId i = 0; i + 1 < n; ++i) und.push_back({i, i + 1});
            } else if constexpr (std::is_same_v<K, StarGraph>) {
                for (NodeId i = 1; i < n; ++i) und.push_back({0, i});
            } else if constexpr (std::is_same_v<K, CycleGraph>) {
                for (NodeId i = 0; i + 1 < n; ++i) und.push_back({i, i + 1});
                if (n > 2) und.push_back({static_cast<NodeId>(n - 1), 0});
            } else {
                if (!(k.p_edge >= 0.0 && k.p_edge <= 1.0)) throw ValidationError("p_edge must be in [0,1]");
                Rng rng{k.seed, 0x45524731ULL};
                for (NodeId i = 0; i < n; ++i)
                    for (NodeId j = i + 1; j < n; ++j)
                        if (rng.bernoulli(k.p_edge)) und.push_back({i, j});
            }
        },
        kind);
    std::vector<Edge> edges;
    edges.reserve(2 * und.size());
    for (const auto& e : und) {
        edges.push_back(e);
        edges.push_back({e.dst, e.src});
    }
    return Graph::from_edges(n, std::move(edges), rule);
}

GraphKind parse_graph_kind(std::string_view spec) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto colon = spec.find(':', start);
        parts.push_back(spec.substr(start, colon == std::string_view::npos ? spec.npos : colon - start));
        if (colon == std::string_view::npos) break;
        start = colon + 1;
    }
    auto need = [&](std::size_t count) {
        if (parts.size() != count) throw ValidationError("malformed generator spec: " + std::string(spec));
    };
    std::size_t n = 0;
    if (parts.size() < 2 || !parse_number(parts[1], n))
        throw ValidationError("malformed generator spec: " + std::string(spec));
    if (parts[0] == "path") { need(2); return PathGraph{n}; }
    if (parts[0] == "star") { need(2); return StarGraph{n}; }
    if (parts[0] == "cycle") { need(2); return CycleGraph{n}; }
    if (parts[0] == "er") {
        need(4);
        ErdosRenyi er{n, 0.0, 0};
        if (!parse_number(parts[2], er.p_edge) || !parse_number(parts[3], er.seed))
            throw ValidationError("malformed generator spec: " + std::string(spec));
        return er;
    }
    throw ValidationError("unknown graph generator: " + std::string(parts[0]));
}

LinearOperator dense_operator(const Matrix& m) {
    return {m.rows, m.cols, [&m](std::span<const double> x) { return matvec(m, x); },
            [&m](std::span<const double> x) { return matvec_t(m, x); }};
}

double power_iteration_norm(const LinearOperator& op, std::size_t iters, double tol, std::uint64_t seed) {
    if (iters == 0) throw ValidationError("power iteration needs at least one iteration");
    if (op.cols == 0 || op.rows == 0) return 0.0;
    Rng rng{seed, 0x504f574552ULL};
    Vector v(op.cols);
    for (auto& e : v) e = rng.normal();
    double nv = l2_norm(v);
    for (auto& e : v) e /= nv;

    double sigma = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
        const Vector av = op.apply(v);
        Vector w = op.apply_transpose(av);
        if (!all_finite(av) || !all_finite(w)) throw NumericError("non-finite value in power iteration");
        const double next = l2_norm(av);
        const double nw = l2_norm(w);
        if (nw == 0.0) return next;  // v is in the null space; for a nonzero A this only happens with measure 0
        for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / nw;
        const bool done = it > 0 && std::abs(next - sigma) <= tol * std::max(next, 1e-300);
        sigma = next;
        if (done) break;
    }
    // Final Rayleigh-style evaluation on the converged direction.
    return std::max(sigma, l2_norm(op.apply(v)));
}

ConstraintSpec ConstraintSpec::source_count(std::size_t n, double count) { return {Vector(n, 1.0), count}; }

double spectral_radius_ata(const ConstraintSpec& c) { return dot(c.a, c.a); }

}  // namespace ivgd
