#include "ivgd/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ivgd/errors.hpp"

namespace ivgd {

namespace {

constexpr const char* kFormatName = "ivgd-cascades";
constexpr int kFormatVersion = 1;

constexpr std::uint64_t kSourceStream = 0x534f55524345ULL;
constexpr std::uint64_t kSplitStream = 0x53504c4954ULL;

std::vector<std::size_t> support(std::span<const double> v) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0.0) idx.push_back(i);
    return idx;
}

Vector indicator(std::size_t n, const std::vector<std::size_t>& idx, std::size_t record) {
    Vector v(n, 0.0);
    for (auto i : idx) {
        if (i >= n) throw FormatError("record " + std::to_string(record) + ": node index out of range");
        v[i] = 1.0;
    }
    return v;
}

}  // namespace

Vector simulate_ic(const Graph& g, std::span<const double> x, std::size_t t_max, Rng& rng) {
    const auto n = g.num_nodes();
    if (x.size() != n) throw ValidationError("source vector length does not match graph");
    Vector active(n, 0.0);
    std::vector<NodeId> frontier;
    for (NodeId v = 0; v < n; ++v) {
        if (x[v] != 0.0 && x[v] != 1.0) throw ValidationError("source vector must be binary");
        if (x[v] == 1.0) {
            active[v] = 1.0;
            frontier.push_back(v);
        }
    }
    std::vector<NodeId> next;
    for (std::size_t t = 0; t < t_max && !frontier.empty(); ++t) {
        next.clear();
        for (auto u : frontier) {
            for (auto e : g.out_edges(u)) {
                const auto v = g.edge(e).dst;
                if (active[v] == 1.0) continue;
                if (rng.bernoulli(g.prob(e))) {
                    active[v] = 1.0;
                    next.push_back(v);
                }
            }
        }
        frontier.swap(next);
    }
    return active;
}

std::size_t source_count_for(std::size_t n, double rate) {
    const double raw = rate * static_cast<double>(n);
    return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

CascadeDataset generate_dataset(const Graph& g, const CascadeConfig& cfg, const std::string& prob_rule) {
    if (!(cfg.source_rate > 0.0 && cfg.source_rate < 1.0)) throw ValidationError("source_rate must be in (0,1)");
    if (cfg.runs == 0) throw ValidationError("runs must be >= 1");
    if (!(cfg.train_fraction >= 0.0 && cfg.train_fraction <= 1.0))
        throw ValidationError("train_fraction must be in [0,1]");
    const auto n = g.num_nodes();
    const auto k = source_count_for(n, cfg.source_rate);
    if (k == 0) throw ValidationError("source_rate * n rounds up to zero sources");
    if (k > n) throw ValidationError("more sources than nodes");

    CascadeDataset ds;
    ds.n = n;
    ds.config = cfg;
    ds.prob_rule = prob_rule;
    ds.samples.reserve(cfg.n_groups * cfg.runs);

    std::vector<NodeId> perm(n);
    for (std::size_t grp = 0; grp < cfg.n_groups; ++grp) {
        // Partial Fisher-Yates gives k distinct uniform sources.
        Rng src_rng{cfg.seed, kSourceStream, grp};
        std::iota(perm.begin(), perm.end(), NodeId{0});
        Vector x(n, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + src_rng.below(n - i);
            std::swap(perm[i], perm[j]);
            x[perm[i]] = 1.0;
        }
        std::vector<unsigned> counts(n, 0);
        const auto first = ds.samples.size();
        for (std::size_t r = 0; r < cfg.runs; ++r) {
            Rng run_rng{cfg.seed, grp, r};
            CascadeSample s;
            s.x = x;
            s.y = simulate_ic(g, x, cfg.t_max, run_rng);
            s.group = grp;
            s.run = r;
            for (std::size_t i = 0; i < n; ++i) counts[i] += s.y[i] != 0.0;
            ds.samples.push_back(std::move(s));
        }
        Vector mean(n);
        for (std::size_t i = 0; i < n; ++i) mean[i] = static_cast<double>(counts[i]) / static_cast<double>(cfg.runs);
        for (auto i = first; i < ds.samples.size(); ++i) ds.samples[i].y_mean = mean;
    }

    // Grouped split: every run of a source set lands on the same side.
    std::vector<std::size_t> order(cfg.n_groups);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng{cfg.seed, kSplitStream};
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.n_groups)));
    std::vector<bool> is_train(cfg.n_groups, false);
    for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) (is_train[ds.samples[i].group] ? ds.train : ds.test).push_back(i);
    return ds;
}

std::vector<std::size_t> groups_of(const CascadeDataset& ds, std::span<const std::size_t> indices) {
    std::vector<std::size_t> out;
    for (auto i : indices) {
        const auto grp = ds.samples[i].group;
        if (std::find(out.begin(), out.end(), grp) == out.end()) out.push_back(grp);
    }
    return out;
}

void recompute_group_means(CascadeDataset& ds) {
    std::map<std::size_t, std::pair<std::vector<unsigned>, unsigned>> acc;
    for (const auto& s : ds.samples) {
        auto& [counts, total] = acc[s.group];
        counts.resize(ds.n, 0);
        for (std::size_t i = 0; i < ds.n; ++i) counts[i] += s.y[i] != 0.0;
        ++total;
    }
    for (auto& s : ds.samples) {
        const auto& [counts, total] = acc[s.group];
        s.y_mean.assign(ds.n, 0.0);
        for (std::size_t i = 0; i < ds.n; ++i) s.y_mean[i] = static_cast<double>(counts[i]) / total;
    }
}

std::string serialize_dataset(const CascadeDataset& ds) {
    using nlohmann::ordered_json;
    ordered_json header;
    header["format"] = kFormatName;
    header["version"] = kFormatVersion;
    header["n"] = ds.n;
    header["n_groups"] = ds.config.n_groups;
    header["source_rate"] = ds.config.source_rate;
    header["runs"] = ds.config.runs;
    header["t_max"] = ds.config.t_max;
    header["seed"] = ds.config.seed;
    header["train_fraction"] = ds.config.train_fraction;
    header["prob_rule"] = ds.prob_rule;
    header["records"] = ds.samples.size();
    header["train"] = ds.train;
    header["test"] = ds.test;
    std::string out = header.dump() + "\n";
    for (const auto& s : ds.samples) {
        ordered_json rec;
        rec["group"] = s.group;
        rec["run"] = s.run;
        rec["x"] = support(s.x);
        rec["y"] = support(s.y);
        out += rec.dump();
        out += '\n';
    }
    return out;
}

CascadeDataset parse_dataset(const std::string& text) {
    using nlohmann::json;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset file");
    CascadeDataset ds;
    std::size_t records = 0;
    try {
        const auto h = json::parse(line);
        if (h.at("format").get<std::string>() != kFormatName) throw FormatError("not a cascade dataset file");
        const int version = h.at("version").get<int>();
        if (version != kFormatVersion)
            throw FormatError("unsupported dataset version " + std::to_string(version) + " (expected " +
                              std::to_string(kFormatVersion) + ")");
        ds.n = h.at("n").get<std::size_t>();
        ds.config.n_groups = h.at("n_groups").get<std::size_t>();
        ds.config.source_rate = h.at("source_rate").get<double>();
        ds.config.runs = h.at("runs").get<std::size_t>();
        ds.config.t_max = h.at("t_max").get<std::size_t>();
        ds.config.seed = h.at("seed").get<std::uint64_t>();
        ds.config.train_fraction = h.at("train_fraction").get<double>();
        ds.prob_rule = h.at("prob_rule").get<std::string>();
        records = h.at("records").get<std::size_t>();
        ds.train = h.at("train").get<std::vector<std::size_t>>();
        ds.test = h.at("test").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad dataset header: ") + e.what());
    }
    ds.samples.reserve(records);
    for (std::size_t r = 0; r < records; ++r) {
        if (!std::getline(in, line)) throw FormatError("record " + std::to_string(r) + ": missing (file truncated)");
        try {
            const auto j = json::parse(line);
            CascadeSample s;
            s.group = j.at("group").get<std::size_t>();
            s.run = j.at("run").get<std::size_t>();
            s.x = indicator(ds.n, j.at("x").get<std::vector<std::size_t>>(), r);
            s.y = indicator(ds.n, j.at("y").get<std::vector<std::size_t>>(), r);
            ds.samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw FormatError("record " + std::to_string(r) + ": " + e.what());
        }
    }
    if (std::getline(in, line) && !line.empty()) throw FormatError("trailing data after " + std::to_string(records) + " records");
    for (auto i : ds.train)
        if (i >= records) throw FormatError("train split references missing record " + std::to_string(i));
    for (auto i : ds.test)
        if (i >= records) throw FormatError("test split references missing record " + std::to_string(i));
    if (ds.train.size() + ds.test.size() != records) throw FormatError("split is not a partition of the records");
    recompute_group_means(ds);
    return ds;
}

void save_dataset(const CascadeDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset: " + path);
    out << serialize_dataset(ds);
}

CascadeDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open dataset: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_dataset(ss.str());
}

}  // namespace ivgd
