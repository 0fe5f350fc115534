// Command-line harness: dataset generation, forward training, certification,
// inversion, localization, baselines, evaluation and ablations.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivgd/errors.hpp"
#include "ivgd/experiment.hpp"
#include "ivgd/inversion.hpp"

namespace fs = std::filesystem;
using namespace ivgd;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, numeric_error = 3 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config (INI)")->required();
    cmd->add_option("--seed", c.seed, "seed (default: every seed in the config for pipeline, else the first)");
    cmd->add_option("--out", c.out, "output directory (default: from the config)");
}

struct Context {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    fs::path out;
    fs::path dir() const { return out / ("seed_" + std::to_string(seed)); }
};

Context context(const Common& c) {
    Context ctx;
    ctx.cfg = load_config(c.config);
    ctx.seed = c.seed ? *c.seed : ctx.cfg.seeds.front();
    ctx.out = c.out.empty() ? fs::path(ctx.cfg.out_dir) : fs::path(c.out);
    return ctx;
}

fs::path need(const Context& ctx, const std::string& name) {
    const auto p = ctx.dir() / name;
    if (!fs::exists(p)) throw ConfigError("missing artifact " + p.string() + "; run the earlier stages first");
    return p;
}

// Observations to process: whitespace-separated vectors, one per line, or the
// test split of the stored dataset.
std::vector<std::pair<std::string, Vector>> inputs(const Context& ctx, const std::string& input, std::size_t n) {
    std::vector<std::pair<std::string, Vector>> out;
    if (!input.empty()) {
        std::stringstream ss(read_file(input));
        std::size_t line_no = 0;
        for (std::string line; std::getline(ss, line);) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::stringstream ls(line);
            Vector y;
            for (double v; ls >> v;) y.push_back(v);
            if (!ls.eof()) throw ParseError("not a number", line_no);
            if (y.size() != n) throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                                                     std::to_string(n) + " values, got " + std::to_string(y.size()));
            out.emplace_back("line" + std::to_string(line_no), std::move(y));
        }
        return out;
    }
    const auto ds = load_dataset(need(ctx, "dataset.txt").string());
    const auto obs = parse_observation(ctx.cfg.observation);
    for (auto i : ds.test) {
        const auto y = observed(ds.samples[i], obs);
        out.emplace_back(std::to_string(i), Vector(y.begin(), y.end()));
    }
    return out;
}

void print_certificate(const std::string& label, const std::optional<LipschitzCertificate>& c) {
    if (!c) {
        std::printf("%s none\n", label.c_str());
        return;
    }
    std::printf("%s %.17g method=%s samples=%zu seed=%llu\n", label.c_str(), c->estimate, to_string(c->method).c_str(),
                c->n_samples, static_cast<unsigned long long>(c->seed));
}

int run_stage(const Common& c, Stage stage) {
    const auto ctx = context(c);
    const auto rows = run_pipeline(ctx.cfg, ctx.seed, ctx.out, stage);
    for (const auto& r : rows) std::printf("%s\n", r.c_str());
    std::fprintf(stderr, "artifacts in %s\n", ctx.dir().string().c_str());
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Invertible graph-diffusion source localization"};
    app.require_subcommand(1);

    Common common;
    std::string stage_name = "all";
    std::string input;
    std::optional<double> known_count;
    std::string variant;

    auto* generate = app.add_subcommand("generate", "simulate the cascade dataset");
    add_common(generate, common);
    auto* train_fwd = app.add_subcommand("train-forward", "train and certify the forward diffusion model");
    add_common(train_fwd, common);
    auto* certify = app.add_subcommand("certify", "re-check the Lipschitz certificates of a trained forward model");
    add_common(certify, common);
    auto* invert = app.add_subcommand("invert", "raw source estimates z = P^-1(Y) per sample");
    add_common(invert, common);
    invert->add_option("--input", input, "file of observation vectors (default: dataset test split)");
    auto* train_loc = app.add_subcommand("train-localizer", "train the compensation and validity layers");
    add_common(train_loc, common);
    auto* localize = app.add_subcommand("localize", "per-sample scores, labels and layer traces");
    add_common(localize, common);
    localize->add_option("--input", input, "file of observation vectors (default: dataset test split)");
    localize->add_option("--known-source-count", known_count, "activate the sum constraint with this count");
    auto* baseline = app.add_subcommand("baseline", "classical baselines");
    auto* lpsi = baseline->add_subcommand("lpsi", "label-propagation source identification");
    baseline->require_subcommand(1);
    add_common(lpsi, common);
    lpsi->add_option("--input", input, "file of observation vectors (default: dataset test split)");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "test-split metrics for IVGD and LPSI");
    add_common(evaluate_cmd, common);
    auto* ablate = app.add_subcommand("ablate", "retrain with one component removed");
    add_common(ablate, common);
    ablate->add_option("--variant", variant, "no_inversion | no_compensation | no_validity")->required();
    auto* pipeline = app.add_subcommand("pipeline", "all stages for every seed");
    add_common(pipeline, common);
    pipeline->add_option("--stage", stage_name, "last stage to run: generate | train-forward | train-localizer | evaluate | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (generate->parsed()) return run_stage(common, Stage::generate);
        if (train_fwd->parsed()) return run_stage(common, Stage::train_forward);
        if (train_loc->parsed()) return run_stage(common, Stage::train_localizer);
        if (evaluate_cmd->parsed()) return run_stage(common, Stage::evaluate);

        if (pipeline->parsed()) {
            const auto stage = parse_stage(stage_name);
            auto ctx = context(common);
            const auto seeds = common.seed ? std::vector<std::uint64_t>{*common.seed} : ctx.cfg.seeds;
            std::vector<std::string> rows;
            for (auto s : seeds) {
                std::fprintf(stderr, "seed %llu\n", static_cast<unsigned long long>(s));
                for (auto& r : run_pipeline(ctx.cfg, s, ctx.out, stage)) rows.push_back(std::move(r));
            }
            if (!rows.empty()) {
                std::string text = metrics_csv_header() + "\n";
                for (const auto& r : rows) text += r + "\n";
                write_file(ctx.out / "metrics.csv", text);
                std::printf("%s", text.c_str());
            }
            return ok;
        }

        if (ablate->parsed()) {
            const auto ctx = context(common);
            Ablation a;
            try {
                a = parse_ablation(variant);
            } catch (const ValidationError& e) {
                throw ConfigError(e.what());
            }
            std::printf("%s\n%s\n", metrics_csv_header().c_str(), run_ablation(ctx.cfg, ctx.seed, ctx.out, a).c_str());
            return ok;
        }

        const auto ctx = context(common);
        const Graph g = load_graph(ctx.cfg);

        if (lpsi->parsed()) {
            LpsiConfig lc;
            lc.alpha = ctx.cfg.lpsi_alpha;
            for (const auto& [id, y] : inputs(ctx, input, g.num_nodes())) {
                const auto scores = lpsi_scores(g, y, lc);
                nlohmann::ordered_json j;
                j["sample"] = id;
                j["scores"] = scores;
                j["labels"] = lpsi_sources(scores, g);
                std::printf("%s\n", j.dump().c_str());
            }
            return ok;
        }

        auto forward = load_forward(need(ctx, "forward.ckpt").string());

        if (certify->parsed()) {
            const auto before_f = forward.cert_f, before_g = forward.cert_g;
            CertifyOptions fo;
            fo.n_samples = ctx.cfg.certify_samples;
            fo.method = parse_certify_method(ctx.cfg.certify_method);
            fo.seed = mix64(ctx.seed ^ 0x6366ULL);
            fo.lo = -1.0;
            fo.hi = 2.0;
            CertifyOptions go = fo;
            go.seed = mix64(ctx.seed ^ 0x6367ULL);
            go.lo = 0.0;
            go.hi = 1.0;
            certify_model(forward, g, fo, go);
            print_certificate("stored L_f", before_f);
            print_certificate("stored L_g", before_g);
            print_certificate("L_f", forward.cert_f);
            print_certificate("L_g", forward.cert_g);
            std::printf("damping %.17g\n", forward.ic.damping);
            if (!forward.certified_invertible()) {
                std::fprintf(stderr, "certificate >= 1: inversion is not permitted\n");
                return numeric_error;
            }
            return ok;
        }

        if (invert->parsed()) {
            const auto ops = forward.bind(g);
            const InversionOptions opts{ctx.cfg.inversion_iters, ctx.cfg.inversion_tol};
            for (const auto& [id, y] : inputs(ctx, input, g.num_nodes())) {
                const auto r = invert_p(ops, y, opts);
                nlohmann::ordered_json j;
                j["sample"] = id;
                j["z"] = r.z;
                j["iters_g"] = r.iters_g;
                j["iters_f"] = r.iters_f;
                j["residual_g"] = r.residual_g;
                j["residual_f"] = r.residual_f;
                j["converged"] = r.converged;
                std::printf("%s\n", j.dump().c_str());
            }
            return ok;
        }

        if (localize->parsed()) {
            const auto model = load_localizer(need(ctx, "localizer.ckpt").string(), forward);
            for (const auto& [id, y] : inputs(ctx, input, g.num_nodes())) {
                const auto r = ivgd_infer(model, g, y, known_count);
                nlohmann::ordered_json j;
                j["sample"] = id;
                j["scores"] = r.scores;
                j["labels"] = r.labels;
                j["constraint_active"] = r.trace.constraint_active;
                j["constraint_residual"] = r.trace.constraint_residual;
                j["step_norm"] = r.trace.step_norm;
                j["lambda"] = r.trace.lambda;
                if (r.trace.constraint_active) {
                    const auto diag = diagnostics_from_trace(r.trace);
                    j["monotone_tail"] = diag.monotone_tail;
                }
                std::printf("%s\n", j.dump().c_str());
            }
            return ok;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return config_error;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return numeric_error;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return failure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return failure;
    }
    return failure;
}
