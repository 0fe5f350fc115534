#include "ivgd/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "ivgd/errors.hpp"
#include "ivgd/rng.hpp"

namespace ivgd {

namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string graph_section(const ExperimentConfig& c) {
    return "[graph]\nname = " + c.graph_name + "\nsource = " + c.graph_source + "\ndirected = " + fmt(c.directed) +
           "\nprob_rule = " + c.prob_rule + "\n";
}

std::string cascade_section(const ExperimentConfig& c) {
    return "[cascade]\nn_groups = " + fmt(c.n_groups) + "\nsource_rate = " + fmt(c.source_rate) +
           "\nruns = " + fmt(c.runs) + "\nt_max = " + fmt(c.t_max) + "\ntrain_fraction = " + fmt(c.train_fraction) +
           "\n";
}

std::string forward_section(const ExperimentConfig& c) {
    return "[forward]\nhidden = " + fmt(c.forward_hidden) + "\nspectral_scale = " + fmt(c.spectral_scale) +
           "\nt_steps = " + fmt(c.t_steps) + "\nepochs = " + fmt(c.forward_epochs) + "\nlr = " + fmt(c.forward_lr) +
           "\noptimizer = " + c.forward_optimizer + "\ntarget = " + c.forward_target +
           "\ncertify_samples = " + fmt(c.certify_samples) + "\ncertify_method = " + c.certify_method + "\n";
}

std::string localizer_section(const ExperimentConfig& c) {
    return "[localizer]\nlayers = " + fmt(c.layers) + "\nhidden = " + fmt(c.comp_hidden) + "\ntau0 = " + fmt(c.tau0) +
           "\nalpha0 = " + fmt(c.alpha0) + "\nrho0 = " + fmt(c.rho0) + "\ntied = " + fmt(c.tied) +
           "\nepochs = " + fmt(c.epochs) + "\nlr = " + fmt(c.lr) + "\noptimizer = " + c.optimizer +
           "\nconstraint_in_training = " + fmt(c.constraint_in_training) + "\nobservation = " + c.observation +
           "\ninversion_iters = " + fmt(c.inversion_iters) + "\ninversion_tol = " + fmt(c.inversion_tol) +
           "\nthreshold = " + fmt(c.threshold) + "\n";
}

std::string lpsi_section(const ExperimentConfig& c) { return "[lpsi]\nalpha = " + fmt(c.lpsi_alpha) + "\n"; }

std::string experiment_section(const ExperimentConfig& c) {
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    return "[experiment]\nseeds = " + seeds + "\nout = " + c.out_dir + "\n";
}

template <typename T>
T get_value(const boost::property_tree::ptree& sec, const std::string& key, const std::string& where) {
    try {
        return sec.get<T>(key);
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + where + "." + key + ": '" + sec.get<std::string>(key, "") + "'");
    }
}

bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("expected a boolean for " + where + ": '" + s + "'");
}

}  // namespace

std::string config_to_ini(const ExperimentConfig& cfg) {
    return graph_section(cfg) + "\n" + cascade_section(cfg) + "\n" + forward_section(cfg) + "\n" +
           localizer_section(cfg) + "\n" + lpsi_section(cfg) + "\n" + experiment_section(cfg);
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c;
    using Setter = std::function<void(const pt::ptree&, const std::string&, const std::string&)>;
    auto str = [](std::string& field) -> Setter {
        return [&field](const pt::ptree& s, const std::string& k, const std::string&) { field = s.get<std::string>(k); };
    };
    auto size = [](std::size_t& field) -> Setter {
        return [&field](const pt::ptree& s, const std::string& k, const std::string& w) {
            const auto v = get_value<long long>(s, k, w);
            if (v < 0) throw ConfigError(w + "." + k + " must be non-negative");
            field = static_cast<std::size_t>(v);
        };
    };
    auto real = [](double& field) -> Setter {
        return [&field](const pt::ptree& s, const std::string& k, const std::string& w) { field = get_value<double>(s, k, w); };
    };
    auto boolean = [](bool& field) -> Setter {
        return [&field](const pt::ptree& s, const std::string& k, const std::string& w) {
            field = parse_bool(s.get<std::string>(k), w + "." + k);
        };
    };
    std::map<std::string, std::map<std::string, Setter>> schema{
        {"graph",
         {{"name", str(c.graph_name)}, {"source", str(c.graph_source)}, {"directed", boolean(c.directed)},
          {"prob_rule", str(c.prob_rule)}}},
        {"cascade",
         {{"n_groups", size(c.n_groups)}, {"source_rate", real(c.source_rate)}, {"runs", size(c.runs)},
          {"t_max", size(c.t_max)}, {"train_fraction", real(c.train_fraction)}}},
        {"forward",
         {{"hidden", size(c.forward_hidden)}, {"spectral_scale", real(c.spectral_scale)}, {"t_steps", size(c.t_steps)},
          {"epochs", size(c.forward_epochs)}, {"lr", real(c.forward_lr)}, {"optimizer", str(c.forward_optimizer)},
          {"target", str(c.forward_target)}, {"certify_samples", size(c.certify_samples)},
          {"certify_method", str(c.certify_method)}}},
        {"localizer",
         {{"layers", size(c.layers)}, {"hidden", size(c.comp_hidden)}, {"tau0", real(c.tau0)}, {"alpha0", real(c.alpha0)},
          {"rho0", real(c.rho0)}, {"tied", boolean(c.tied)}, {"epochs", size(c.epochs)}, {"lr", real(c.lr)},
          {"optimizer", str(c.optimizer)}, {"constraint_in_training", boolean(c.constraint_in_training)},
          {"observation", str(c.observation)}, {"inversion_iters", size(c.inversion_iters)},
          {"inversion_tol", real(c.inversion_tol)}, {"threshold", real(c.threshold)}}},
        {"lpsi", {{"alpha", real(c.lpsi_alpha)}}},
        {"experiment",
         {{"out", str(c.out_dir)},
          {"seeds",
           [&c](const pt::ptree& s, const std::string& k, const std::string& w) {
               c.seeds.clear();
               std::stringstream ss(s.get<std::string>(k));
               std::string tok;
               while (std::getline(ss, tok, ',')) {
                   try {
                       c.seeds.push_back(std::stoull(tok));
                   } catch (const std::exception&) {
                       throw ConfigError("bad seed in " + w + ".seeds: '" + tok + "'");
                   }
               }
               if (c.seeds.empty()) throw ConfigError("experiment.seeds is empty");
           }}}},
    };
    for (const auto& [section, body] : tree) {
        const auto sit = schema.find(section);
        if (sit == schema.end()) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : body) {
            const auto kit = sit->second.find(key);
            if (kit == sit->second.end()) throw ConfigError("unknown config key " + section + "." + key);
            kit->second(body, key, section);
        }
    }
    // Validate enumerations early so a bad config fails before any work.
    try {
        parse_prob_rule(c.prob_rule);
        parse_optimizer(c.forward_optimizer);
        parse_optimizer(c.optimizer);
        parse_target_kind(c.forward_target);
        parse_observation(c.observation);
        parse_certify_method(c.certify_method);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    if (c.graph_source.empty()) throw ConfigError("graph.source is required");
    const bool generator = c.graph_source.find(':') != std::string::npos && !fs::exists(base_dir / c.graph_source);
    if (!generator) {
        fs::path p = c.graph_source;
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        if (!fs::exists(p)) throw ConfigError("graph file does not exist: " + p.string());
        c.graph_source = p.lexically_normal().string();
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Stages

Graph load_graph(const ExperimentConfig& cfg) {
    const auto rule = parse_prob_rule(cfg.prob_rule);
    if (fs::exists(cfg.graph_source)) return load_edge_list_file(cfg.graph_source, cfg.directed, rule);
    return generate_graph(parse_graph_kind(cfg.graph_source), rule);
}

std::size_t effective_t_max(const ExperimentConfig& cfg, const Graph& g) {
    if (cfg.t_max > 0) return cfg.t_max;
    const auto d = g.undirected_diameter();
    return d > 0 ? d : 10;
}

CascadeDataset make_dataset(const ExperimentConfig& cfg, const Graph& g, std::uint64_t seed) {
    CascadeConfig cc;
    cc.n_groups = cfg.n_groups;
    cc.source_rate = cfg.source_rate;
    cc.runs = cfg.runs;
    cc.t_max = effective_t_max(cfg, g);
    cc.seed = seed;
    cc.train_fraction = cfg.train_fraction;
    return generate_dataset(g, cc, cfg.prob_rule);
}

ResidualDiffusionModel make_forward(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds,
                                    std::uint64_t seed, ForwardReport* report) {
    ResidualDiffusionModel model;
    model.f = PerNodeNet::create(cfg.forward_hidden, cfg.spectral_scale, mix64(seed ^ 0x66ULL));
    model.ic.t_steps = cfg.t_steps > 0 ? cfg.t_steps : ds.config.t_max;
    CertifyOptions f_opts;
    f_opts.n_samples = cfg.certify_samples;
    f_opts.seed = mix64(seed ^ 0x6366ULL);
    f_opts.method = parse_certify_method(cfg.certify_method);
    // Inversion iterates leave the unit box; probe f on a wider one.
    f_opts.lo = -1.0;
    f_opts.hi = 2.0;
    CertifyOptions g_opts = f_opts;
    g_opts.seed = mix64(seed ^ 0x6367ULL);
    g_opts.lo = 0.0;
    g_opts.hi = 1.0;
    certify_model(model, g, f_opts, g_opts);  // fixes the damping before f is fitted

    ForwardTrainConfig tc;
    tc.epochs = cfg.forward_epochs;
    tc.lr = cfg.forward_lr;
    tc.optimizer = parse_optimizer(cfg.forward_optimizer);
    tc.target = parse_target_kind(cfg.forward_target);
    auto rep = train_forward(model, g, ds, tc);
    certify_model(model, g, f_opts, g_opts);
    if (!model.certified_invertible())
        throw InvertibilityError("trained forward model failed certification (L_f=" +
                                 std::to_string(model.cert_f->estimate) + ", L_g=" +
                                 std::to_string(model.cert_g->estimate) + ")");
    if (report) *report = std::move(rep);
    return model;
}

IVGDModel make_localizer(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds,
                         ResidualDiffusionModel forward, std::uint64_t seed, Ablation ablation, TrainHistory* history) {
    LocalizerConfig lc;
    lc.layers = cfg.layers;
    lc.hidden = cfg.comp_hidden;
    lc.tau0 = cfg.tau0;
    lc.alpha0 = cfg.alpha0;
    lc.rho0 = cfg.rho0;
    lc.tied = cfg.tied;
    lc.threshold = cfg.threshold;
    lc.seed = mix64(seed ^ 0x6c6fULL);
    lc.ablation = ablation;
    auto m = IVGDModel::create(std::move(forward), g.num_nodes(), lc);
    m.inversion.max_iters = cfg.inversion_iters;
    m.inversion.tol = cfg.inversion_tol;
    LocalizerTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.optimizer = parse_optimizer(cfg.optimizer);
    tc.constraint_in_training = cfg.constraint_in_training;
    tc.observation = parse_observation(cfg.observation);
    tc.seed = mix64(seed ^ 0x7472ULL);
    auto hist = ivgd_train(m, g, ds, tc);
    if (history) *history = std::move(hist);
    return m;
}

MetricsReport evaluate_lpsi(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds) {
    const auto obs = parse_observation(cfg.observation);
    LpsiConfig lc;
    lc.alpha = cfg.lpsi_alpha;
    MetricsAccumulator acc;
    for (auto i : ds.test) {
        const auto& s = ds.samples[i];
        const auto scores = lpsi_scores(g, observed(s, obs), lc);
        acc.add(scores, lpsi_sources(scores, g), s.x);
    }
    return acc.report();
}

EvaluationResult evaluate(const ExperimentConfig& cfg, const Graph& g, const CascadeDataset& ds, const IVGDModel& m) {
    const auto obs = parse_observation(cfg.observation);
    MetricsAccumulator acc;
    for (auto i : ds.test) {
        const auto& s = ds.samples[i];
        const auto r = ivgd_infer(m, g, observed(s, obs));
        acc.add(r.scores, r.labels, s.x);
    }
    EvaluationResult out;
    out.ivgd = acc.report();
    out.lpsi = evaluate_lpsi(cfg, g, ds);
    if (out.ivgd.tp + out.ivgd.fn > 0 && out.ivgd.fp + out.ivgd.tn > 0) out.ivgd_roc = roc_points(acc.scores(), acc.truth());
    return out;
}

Stage parse_stage(const std::string& text) {
    if (text == "generate") return Stage::generate;
    if (text == "train-forward") return Stage::train_forward;
    if (text == "train-localizer") return Stage::train_localizer;
    if (text == "evaluate") return Stage::evaluate;
    if (text == "all") return Stage::all;
    throw ConfigError("unknown stage: " + text);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

// Runs one stage, re-throwing any library error with the stage name prefixed
// and its type preserved.
template <typename F>
auto staged(const std::string& stage, F&& body) {
    const std::string tag = "stage " + stage + ": ";
    try {
        return body();
    } catch (const TrainingError& e) {
        std::string what = e.what();
        const std::string own = "epoch " + std::to_string(e.epoch()) + ": ";
        if (what.rfind(own, 0) == 0) what.erase(0, own.size());
        throw TrainingError(tag + what, e.epoch());
    } catch (const InvertibilityError& e) {
        throw InvertibilityError(tag + e.what());
    } catch (const NumericError& e) {
        throw NumericError(tag + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    } catch (const FormatError& e) {
        throw FormatError(tag + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(tag + e.what());
    } catch (const ParseError& e) {
        throw ParseError(tag + e.what(), e.line());
    }
}

struct Stamps {
    std::string dataset;
    std::string forward;
    std::string localizer;
};

Stamps stamps_for(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto hex = [](std::uint64_t v) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
        return std::string(buf);
    };
    const std::string ds_key = graph_section(cfg) + cascade_section(cfg) + "seed=" + std::to_string(seed);
    const std::string fw_key = ds_key + forward_section(cfg);
    const std::string lc_key = fw_key + localizer_section(cfg);
    return {hex(fnv1a(ds_key)), hex(fnv1a(fw_key)), hex(fnv1a(lc_key))};
}

bool fresh(const fs::path& artifact, const std::string& stamp) {
    const fs::path stamp_path = artifact.string() + ".stamp";
    return fs::exists(artifact) && fs::exists(stamp_path) && read_file(stamp_path) == stamp + "\n";
}

void stamp(const fs::path& artifact, const std::string& value) { write_file(artifact.string() + ".stamp", value + "\n"); }

std::string trace_record(std::size_t sample, const InferenceResult& r) {
    nlohmann::ordered_json j;
    j["sample"] = sample;
    j["scores"] = r.scores;
    j["labels"] = r.labels;
    j["constraint_residual"] = r.trace.constraint_residual;
    j["step_norm"] = r.trace.step_norm;
    j["lambda"] = r.trace.lambda;
    if (r.inversion) {
        j["inversion"] = {{"iters_g", r.inversion->iters_g},
                          {"iters_f", r.inversion->iters_f},
                          {"residual_g", r.inversion->residual_g},
                          {"residual_f", r.inversion->residual_f},
                          {"converged", r.inversion->converged}};
    }
    return j.dump();
}

}  // namespace

std::vector<std::string> run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir,
                                      Stage stop_after) {
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    write_file(dir / "config.ini", config_to_ini(cfg));
    const auto st = stamps_for(cfg, seed);
    const Graph g = load_graph(cfg);

    const fs::path ds_path = dir / "dataset.txt";
    const auto ds = staged("generate", [&] {
        if (fresh(ds_path, st.dataset)) return load_dataset(ds_path.string());
        auto made = make_dataset(cfg, g, seed);
        save_dataset(made, ds_path.string());
        stamp(ds_path, st.dataset);
        return made;
    });
    if (stop_after == Stage::generate) return {};

    const fs::path fw_path = dir / "forward.ckpt";
    const auto forward = staged("train-forward", [&] {
        if (fresh(fw_path, st.forward)) return load_forward(fw_path.string());
        ForwardReport rep;
        auto made = make_forward(cfg, g, ds, seed, &rep);
        save_forward(made, fw_path.string());
        const auto target = parse_target_kind(cfg.forward_target);
        write_file(dir / "forward_report.csv",
                   "untrained_test_mse," + fmt(rep.untrained_test_mse) + "\ntest_mse," + fmt(rep.test_mse) +
                       "\ntest_mae," + fmt(rep.test_mae) + "\ntarget," + to_string(target) + "\nL_f," +
                       fmt(made.cert_f->estimate) + "\nL_g," + fmt(made.cert_g->estimate) + "\ndamping," +
                       fmt(made.ic.damping) + "\n");
        stamp(fw_path, st.forward);
        return made;
    });
    if (stop_after == Stage::train_forward) return {};

    const fs::path lc_path = dir / "localizer.ckpt";
    const auto model = staged("train-localizer", [&] {
        if (fresh(lc_path, st.localizer)) return load_localizer(lc_path.string(), forward);
        TrainHistory hist;
        auto made = make_localizer(cfg, g, ds, forward, seed, Ablation::none, &hist);
        save_localizer(made, lc_path.string());
        std::string text = "epoch,loss\n";
        for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e)
            text += std::to_string(e + 1) + "," + fmt(hist.epoch_loss[e]) + "\n";
        write_file(dir / "train_history.csv", text);
        stamp(lc_path, st.localizer);
        return made;
    });
    if (stop_after == Stage::train_localizer) return {};

    return staged("evaluate", [&] {
        const auto res = evaluate(cfg, g, ds, model);
        std::vector<std::string> rows{metrics_csv_row("IVGD", cfg.graph_name, seed, res.ivgd),
                                      metrics_csv_row("LPSI", cfg.graph_name, seed, res.lpsi)};
        write_file(dir / "metrics.csv", metrics_csv_header() + "\n" + rows[0] + "\n" + rows[1] + "\n");
        if (!res.ivgd_roc.empty()) write_file(dir / "roc_ivgd.csv", roc_csv(res.ivgd_roc));
        const auto obs = parse_observation(cfg.observation);
        std::string traces;
        for (auto i : ds.test) traces += trace_record(i, ivgd_infer(model, g, observed(ds.samples[i], obs))) + "\n";
        write_file(dir / "traces.jsonl", traces);
        return rows;
    });
}

std::string run_ablation(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir, Ablation variant) {
    if (variant == Ablation::none) throw ConfigError("ablation variant must remove a component");
    const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
    const auto st = stamps_for(cfg, seed);
    if (!fresh(dir / "dataset.txt", st.dataset) || !fresh(dir / "forward.ckpt", st.forward))
        throw ConfigError("ablation needs the base pipeline artifacts in " + dir.string() + "; run the pipeline first");
    const Graph g = load_graph(cfg);
    const auto ds = load_dataset((dir / "dataset.txt").string());
    auto forward = load_forward((dir / "forward.ckpt").string());
    const auto model = make_localizer(cfg, g, ds, std::move(forward), seed, variant);
    const auto res = evaluate(cfg, g, ds, model);
    const auto row = metrics_csv_row("IVGD-" + to_string(variant), cfg.graph_name, seed, res.ivgd);
    write_file(dir / ("ablation_" + to_string(variant) + ".csv"), metrics_csv_header() + "\n" + row + "\n");
    return row;
}

}  // namespace ivgd
