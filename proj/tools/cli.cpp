#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fairdistill/config_io.hpp"
#include "fairdistill/csv.hpp"
#include "fairdistill/datagen.hpp"
#include "fairdistill/distill.hpp"
#include "fairdistill/eval.hpp"
#include "fairdistill/report_csv.hpp"
#include "fairdistill/sweep.hpp"
#include "fairdistill/verify.hpp"

namespace fairdistill {

namespace {

using nlohmann::json;

constexpr const char* kGenSchema = R"(config schema (JSON):
{
  "bias": {                       // dataset construction
    "num_classes": 2, "num_groups": 2, "dim": 8,
    "skew": 0.8,                  // majority-group fraction per class, [1/G, 1)
    "separation": 2.0,            // per-group class-mean distance knob
    "per_class": 500, "seed": 0,
    "kind": "gaussian" | "colored-foreground" | "colored-background",
    "img_h": 0, "img_w": 0        // colored kinds: dim == 3*img_h*img_w
  },
  "test_per_cell": 100,           // 0 disables the balanced test split
  "out": "train.fds",             // --out overrides
  "test_out": "test.fds"
})";

constexpr const char* kDistillSchema = R"(config schema (JSON):
{
  "train": "train.fds",
  "ipc": 10,
  "init_policy": "real-sample" | "noise",
  "distill": {
    "objective": "dm" | "dc" | "mtt",
    "mode": "vanilla" | "fairdd" | "reweight" | "cobra",
    "discrepancy": {"kind": "sqnorm|l1|l2|linf|cosine|huber", "q_diag": [],
                     "huber_delta": 1.0, "max_iters": 5000, "tol": 1e-10},
    "distance": "mse" | "mae",
    "iterations": 100, "synthetic_lr": 1.0, "reinit_period": 1,
    "dc_matching_steps": 1, "dc_surrogate_steps": 1, "dc_surrogate_lr": 0.05,
    "mtt_start_epoch_min": 0, "mtt_start_epoch_max": 0,
    "mtt_student_steps": 1, "mtt_student_lr": 0.05, "mtt_fd_epsilon": 1e-3,
    "arch": {"widths": [8, 32, 2]},
    "surrogate": "mlp" | "identity",
    "seed": 0
  },
  "out": "distilled.fds"          // sidecar goes to <out>.json
})";

constexpr const char* kEvalSchema = R"(config schema (JSON):
{
  "synthetic": "distilled.fds",
  "test": "test.fds",
  "eval": {"arch": {"widths": [8, 32, 2]},
            "opt": {"lr": 0.05, "epochs": 300, "batch_size": 0, "momentum": 0.0},
            "n_seeds": 10, "base_seed": 0},
  "meta": {"dataset": "synthetic", "objective": "dm", "mode": "vanilla", "ipc": 10},
  "out": "eval.csv"               // per-seed rows; aggregate goes to <stem>_agg.csv
})";

constexpr const char* kAuditSchema = R"(config schema (JSON):
{
  "synthetic": "distilled.fds",
  "train": "train.fds",
  "objective": "dm" | "dc",       // dm audits embeddings, dc audits gradients
  "eval": { ... as in eval ... }, // training budget for the audited model
  "meta": { ... as in eval ... },
  "out": "audit.csv"              // per-class rows go to <stem>_classes.csv
})";

constexpr const char* kVerifySchema = R"(optional config schema (JSON):
{
  "theorem_instances": 10000, "bound_instances": 10000,
  "sqnorm_instances": 1000, "l1_instances": 1000, "l2_instances": 50,
  "huber_instances": 200, "cosine_instances": 200,
  "gradient_instances": 100, "eod_instances": 1000, "seed": 0
})";

constexpr const char* kSweepSchema = R"(config schema (JSON):
{
  "kind": "skew" | "gap" | "ipc" | "discrepancy" | "noise" | "partial" | "theorem-audit",
  "grid": [0.6, 0.65, 0.7, 0.75, 0.8, 0.85],   // strings for kind=discrepancy
  "objectives": ["dm"], "modes": ["vanilla", "fairdd", "cobra"],
  "seeds": 5,
  "bias": { ... as in gen ... },
  "test_per_cell": 100,
  "distill": { ... as in distill ... },
  "ipc": 10, "init_policy": "real-sample",
  "eval": { ... as in eval ... },
  "impute_k": 0,                  // partial sweeps; 0 = num_groups
  "audit_instances": 10000,       // theorem-audit sweeps
  "per_cell_audit": true,
  "out": "sweep.csv", "workers": 1
})";

std::string default_out_dir() {
    const char* env = std::getenv("FAIRDISTILL_OUT_DIR");
    return env != nullptr ? std::string(env) : std::string(".");
}

std::string resolve_out(const std::string& flag_out, const json& cfg, const char* key,
                        const std::string& fallback_name) {
    if (!flag_out.empty()) return flag_out;
    if (cfg.contains(key) && cfg.at(key).is_string()) return cfg.at(key).get<std::string>();
    return (std::filesystem::path(default_out_dir()) / fallback_name).string();
}

json load_config(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError(path, "config file does not exist");
    }
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path, e.what());
    }
}

RunMeta meta_from(const json& cfg) {
    RunMeta meta;
    if (!cfg.contains("meta")) return meta;
    const json& m = cfg.at("meta");
    if (m.contains("dataset")) meta.dataset = m.at("dataset").get<std::string>();
    if (m.contains("objective")) meta.objective = m.at("objective").get<std::string>();
    if (m.contains("mode")) meta.mode = m.at("mode").get<std::string>();
    if (m.contains("ipc")) meta.ipc = m.at("ipc").get<std::size_t>();
    return meta;
}

int cmd_gen(const std::string& config_path, const std::string& out, std::int64_t seed_override) {
    const json cfg = load_config(config_path);
    if (!cfg.contains("bias")) throw ConfigError("bias", "missing required key");
    BiasConfig bias = bias_config_from_json(cfg.at("bias").dump(), "bias");
    if (seed_override >= 0) bias.seed = static_cast<std::uint64_t>(seed_override);

    const std::string train_path = resolve_out(out, cfg, "out", "train.fds");
    const GroupedDataset ds = generate(bias);
    save_dataset(train_path, ds);
    std::printf("gen: wrote %zu samples to %s\n", ds.size(), train_path.c_str());

    const std::size_t test_per_cell =
        cfg.contains("test_per_cell") ? cfg.at("test_per_cell").get<std::size_t>() : 0;
    if (test_per_cell > 0) {
        std::string test_path;
        if (cfg.contains("test_out")) {
            test_path = cfg.at("test_out").get<std::string>();
        } else {
            std::filesystem::path p(train_path);
            test_path = (p.parent_path() / (p.stem().string() + "_test" + p.extension().string()))
                            .string();
        }
        const GroupedDataset test = make_balanced_test(bias, test_per_cell);
        save_dataset(test_path, test);
        std::printf("gen: wrote %zu balanced test samples to %s\n", test.size(), test_path.c_str());
    }
    return 0;
}

int cmd_distill(const std::string& config_path, const std::string& out,
                std::int64_t seed_override) {
    const json cfg = load_config(config_path);
    if (!cfg.contains("train")) throw ConfigError("train", "missing required key");
    const GroupedDataset ds = load_dataset(cfg.at("train").get<std::string>());
    DistillConfig dcfg = cfg.contains("distill")
                             ? distill_config_from_json(cfg.at("distill").dump(), "distill")
                             : DistillConfig{};
    if (seed_override >= 0) dcfg.seed = static_cast<std::uint64_t>(seed_override);
    const std::size_t ipc = cfg.contains("ipc") ? cfg.at("ipc").get<std::size_t>() : 10;
    InitPolicy policy = InitPolicy::real_sample;
    if (cfg.contains("init_policy")) {
        policy = parse_init_policy(cfg.at("init_policy").get<std::string>());
    }

    DistillLog log;
    const SyntheticSet s = run_distillation(ds, dcfg, ipc, policy, &log);
    const std::string out_path = resolve_out(out, cfg, "out", "distilled.fds");
    save_synthetic(out_path, s);
    write_text_file(out_path + ".json", distill_sidecar_json(dcfg, ipc, policy, log));
    std::printf("distill: %s/%s, %zu iterations, final objective %.6g -> %s\n",
                objective_name(dcfg.objective), target_mode_name(dcfg.target.mode),
                log.objective_values.size(),
                log.objective_values.empty() ? 0.0 : log.objective_values.back(),
                out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& out, std::int64_t seed_override) {
    const json cfg = load_config(config_path);
    if (!cfg.contains("synthetic")) throw ConfigError("synthetic", "missing required key");
    if (!cfg.contains("test")) throw ConfigError("test", "missing required key");
    const SyntheticSet s = load_synthetic(cfg.at("synthetic").get<std::string>());
    const GroupedDataset test = load_dataset(cfg.at("test").get<std::string>());
    EvalOptions opts = cfg.contains("eval")
                           ? eval_options_from_json(cfg.at("eval").dump(), "eval")
                           : EvalOptions{};
    if (seed_override >= 0) opts.base_seed = static_cast<std::uint64_t>(seed_override);

    const EvalReport report = eval_distilled(s, test, opts);
    const RunMeta meta = meta_from(cfg);
    const std::string out_path = resolve_out(out, cfg, "out", "eval.csv");
    write_text_file(out_path, eval_per_seed_csv(meta, report));
    write_text_file(agg_path_for(out_path), eval_agg_csv(meta, report));
    {
        std::filesystem::path p(out_path);
        const std::string rates_path =
            (p.parent_path() / (p.stem().string() + "_rates" + p.extension().string())).string();
        write_text_file(rates_path,
                        eval_rates_csv(meta, report, test.num_classes, test.num_groups));
    }
    std::printf("eval: acc %.2f±%.2f  EOD_M %.2f±%.2f  EOD_A %.2f±%.2f -> %s\n", report.acc_mean,
                report.acc_std, report.eodm_mean, report.eodm_std, report.eoda_mean,
                report.eoda_std, out_path.c_str());
    return 0;
}

int cmd_audit(const std::string& config_path, const std::string& out, std::int64_t seed_override) {
    const json cfg = load_config(config_path);
    if (!cfg.contains("synthetic")) throw ConfigError("synthetic", "missing required key");
    if (!cfg.contains("train")) throw ConfigError("train", "missing required key");
    const SyntheticSet s = load_synthetic(cfg.at("synthetic").get<std::string>());
    const GroupedDataset train_ds = load_dataset(cfg.at("train").get<std::string>());
    EvalOptions opts = cfg.contains("eval")
                           ? eval_options_from_json(cfg.at("eval").dump(), "eval")
                           : EvalOptions{};
    if (seed_override >= 0) opts.base_seed = static_cast<std::uint64_t>(seed_override);
    RunMeta meta = meta_from(cfg);
    if (cfg.contains("objective")) meta.objective = cfg.at("objective").get<std::string>();
    const StatisticKind kind =
        meta.objective == "dc" ? StatisticKind::gradient : StatisticKind::embedding;

    OptimizerConfig opt = opts.opt;
    opt.seed = opts.base_seed;
    NetworkParams model = init_network(opts.arch, opts.base_seed);
    model = train(std::move(model), s.view(), opt);
    const AuditSummary summary = residual_audit(model, train_ds, kind);

    const std::string out_path = resolve_out(out, cfg, "out", "audit.csv");
    write_text_file(out_path, audit_summary_csv(meta, summary));
    std::filesystem::path p(out_path);
    auto sibling = [&](const char* suffix) {
        return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
    };
    write_text_file(sibling("_classes"), audit_rows_csv(meta, summary));

    // residual geometry under the same frozen model: per-(class, group) rows
    // plus the per-class shift/antipodal-condition summary
    const auto stats = subgroup_stats(model, train_ds, kind);
    const auto van = mixture_target(stats);
    const auto cobra = barycenter_target(stats, BarycenterDiscrepancy{});
    const auto geometry = residual_geometry(stats, van, cobra, {});
    write_text_file(sibling("_residuals"), residual_entries_csv(geometry));
    write_text_file(sibling("_condition"), residual_classes_csv(geometry));
    std::printf("audit: MaxRes mean (worst): vanilla %.4g (%.4g)  fairdd %.4g (%.4g)  cobra %.4g (%.4g) -> %s\n",
                summary.mean_van, summary.worst_van, summary.mean_fairdd, summary.worst_fairdd,
                summary.mean_cobra, summary.worst_cobra, out_path.c_str());
    return 0;
}

int cmd_verify(const std::string& config_path, std::int64_t seed_override) {
    VerifyConfig vcfg;
    if (!config_path.empty()) {
        const json cfg = load_config(config_path);
        auto get = [&](const char* key, std::size_t fallback) {
            return cfg.contains(key) ? cfg.at(key).get<std::size_t>() : fallback;
        };
        vcfg.theorem_instances = get("theorem_instances", vcfg.theorem_instances);
        vcfg.bound_instances = get("bound_instances", vcfg.bound_instances);
        vcfg.sqnorm_instances = get("sqnorm_instances", vcfg.sqnorm_instances);
        vcfg.l1_instances = get("l1_instances", vcfg.l1_instances);
        vcfg.l2_instances = get("l2_instances", vcfg.l2_instances);
        vcfg.huber_instances = get("huber_instances", vcfg.huber_instances);
        vcfg.cosine_instances = get("cosine_instances", vcfg.cosine_instances);
        vcfg.gradient_instances = get("gradient_instances", vcfg.gradient_instances);
        vcfg.eod_instances = get("eod_instances", vcfg.eod_instances);
        vcfg.seed = get("seed", vcfg.seed);
    }
    if (seed_override >= 0) vcfg.seed = static_cast<std::uint64_t>(seed_override);

    const auto suites = run_verification(vcfg);
    for (const auto& s : suites) {
        std::printf("%-22s checks %-6zu violations %-4zu %s\n", s.name.c_str(), s.checks,
                    s.violations, s.detail.c_str());
    }
    const std::size_t violations = total_violations(suites);
    std::printf("violations: %zu\n", violations);
    return violations == 0 ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::string& out, std::int64_t seed_override,
              std::int64_t workers_override) {
    const json cfg = load_config(config_path);
    SweepSpec spec = sweep_spec_from_json(cfg.dump());
    if (seed_override >= 0) spec.bias.seed = static_cast<std::uint64_t>(seed_override);
    if (!out.empty()) spec.out_path = out;
    if (workers_override > 0) spec.workers = static_cast<std::size_t>(workers_override);
    if (spec.out_path.empty()) {
        spec.out_path = (std::filesystem::path(default_out_dir()) / "sweep.csv").string();
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto records = run_sweep(spec);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t failed = 0;
    for (const auto& r : records) {
        if (!r.ok) ++failed;
    }
    std::printf("sweep: %zu cells (%zu failed) in %.1fs -> %s and %s\n", records.size(), failed,
                secs, spec.out_path.c_str(), agg_path_for(spec.out_path).c_str());
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"fairdistill: fairness-aware dataset distillation engine"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config;
        std::string out;
        std::int64_t seed = -1;
    };
    auto add_common = [](CLI::App* sub, SubArgs& a, bool config_required = true) {
        auto* opt = sub->add_option("--config,-c", a.config, "JSON config path");
        if (config_required) opt->required();
        sub->add_option("--out,-o", a.out, "output path override (else config 'out', else $FAIRDISTILL_OUT_DIR)");
        sub->add_option("--seed,-s", a.seed, "seed override");
    };

    SubArgs gen_args, distill_args, eval_args, audit_args, verify_args, sweep_args;
    auto* gen = app.add_subcommand("gen", std::string("generate a biased dataset\n") + kGenSchema);
    add_common(gen, gen_args);
    auto* distill = app.add_subcommand(
        "distill", std::string("distill a synthetic set from a dataset\n") + kDistillSchema);
    add_common(distill, distill_args);
    auto* eval =
        app.add_subcommand("eval", std::string("evaluate a distilled set\n") + kEvalSchema);
    add_common(eval, eval_args);
    auto* audit = app.add_subcommand(
        "audit", std::string("worst-case residual audit of a distilled set\n") + kAuditSchema);
    add_common(audit, audit_args);
    auto* verify = app.add_subcommand(
        "verify", std::string("run the randomized property suites\n") + kVerifySchema);
    add_common(verify, verify_args, /*config_required=*/false);
    auto* sweep =
        app.add_subcommand("sweep", std::string("run an experiment sweep\n") + kSweepSchema);
    add_common(sweep, sweep_args);
    std::int64_t sweep_workers = -1;
    sweep->add_option("--workers,-j", sweep_workers, "parallel cell workers override");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args.config, gen_args.out, gen_args.seed);
        if (distill->parsed()) {
            return cmd_distill(distill_args.config, distill_args.out, distill_args.seed);
        }
        if (eval->parsed()) return cmd_eval(eval_args.config, eval_args.out, eval_args.seed);
        if (audit->parsed()) return cmd_audit(audit_args.config, audit_args.out, audit_args.seed);
        if (verify->parsed()) return cmd_verify(verify_args.config, verify_args.seed);
        if (sweep->parsed()) {
            return cmd_sweep(sweep_args.config, sweep_args.out, sweep_args.seed, sweep_workers);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace fairdistill
