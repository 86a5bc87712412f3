#include "fairdistill/config_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fairdistill {

namespace {

using nlohmann::json;

std::string join_key(const std::string& root, const std::string& key) {
    return root.empty() ? key : root + "." + key;
}

json parse_or_throw(const std::string& text, const std::string& root) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(root.empty() ? "<root>" : root, e.what());
    }
}

template <class T>
T get_or(const json& j, const std::string& root, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(join_key(root, key), e.what());
    }
}

template <class T>
T get_req(const json& j, const std::string& root, const std::string& key) {
    if (!j.contains(key)) throw ConfigError(join_key(root, key), "missing required key");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(join_key(root, key), e.what());
    }
}

DataKind parse_data_kind(const std::string& s, const std::string& key) {
    if (s == "gaussian") return DataKind::gaussian;
    if (s == "colored-foreground") return DataKind::colored_foreground;
    if (s == "colored-background") return DataKind::colored_background;
    throw ConfigError(key, "unknown data kind '" + s + "'");
}

const char* data_kind_name(DataKind k) {
    switch (k) {
        case DataKind::gaussian: return "gaussian";
        case DataKind::colored_foreground: return "colored-foreground";
        case DataKind::colored_background: return "colored-background";
    }
    return "?";
}

BiasConfig bias_from(const json& j, const std::string& root) {
    BiasConfig cfg;
    cfg.num_classes = get_or(j, root, "num_classes", cfg.num_classes);
    cfg.num_groups = get_or(j, root, "num_groups", cfg.num_groups);
    cfg.dim = get_or(j, root, "dim", cfg.dim);
    cfg.skew = get_or(j, root, "skew", cfg.skew);
    cfg.separation = get_or(j, root, "separation", cfg.separation);
    cfg.per_class = get_or(j, root, "per_class", cfg.per_class);
    cfg.seed = get_or(j, root, "seed", cfg.seed);
    cfg.kind = parse_data_kind(get_or<std::string>(j, root, "kind", "gaussian"),
                               join_key(root, "kind"));
    cfg.img_h = get_or(j, root, "img_h", cfg.img_h);
    cfg.img_w = get_or(j, root, "img_w", cfg.img_w);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(root.empty() ? "bias" : root, e.what());
    }
    return cfg;
}

json bias_to(const BiasConfig& cfg) {
    json j;
    j["num_classes"] = cfg.num_classes;
    j["num_groups"] = cfg.num_groups;
    j["dim"] = cfg.dim;
    j["skew"] = cfg.skew;
    j["separation"] = cfg.separation;
    j["per_class"] = cfg.per_class;
    j["seed"] = cfg.seed;
    j["kind"] = data_kind_name(cfg.kind);
    j["img_h"] = cfg.img_h;
    j["img_w"] = cfg.img_w;
    return j;
}

BarycenterDiscrepancy discrepancy_from(const json& j, const std::string& root) {
    BarycenterDiscrepancy d;
    try {
        d = BarycenterDiscrepancy::parse(get_or<std::string>(j, root, "kind", "sqnorm"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join_key(root, "kind"), e.what());
    }
    d.q_diag = get_or(j, root, "q_diag", d.q_diag);
    d.huber_delta = get_or(j, root, "huber_delta", d.huber_delta);
    d.solver.max_iters = get_or(j, root, "max_iters", d.solver.max_iters);
    d.solver.tol = get_or(j, root, "tol", d.solver.tol);
    d.restart_seed = get_or(j, root, "restart_seed", d.restart_seed);
    return d;
}

json discrepancy_to(const BarycenterDiscrepancy& d) {
    json j;
    j["kind"] = d.label();
    if (!d.q_diag.empty()) j["q_diag"] = d.q_diag;
    j["huber_delta"] = d.huber_delta;
    j["max_iters"] = d.solver.max_iters;
    j["tol"] = d.solver.tol;
    j["restart_seed"] = d.restart_seed;
    return j;
}

Architecture arch_from(const json& j, const std::string& root) {
    Architecture a;
    a.widths = get_req<std::vector<int>>(j, root, "widths");
    try {
        a.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join_key(root, "widths"), e.what());
    }
    return a;
}

OptimizerConfig opt_from(const json& j, const std::string& root) {
    OptimizerConfig o;
    o.lr = get_or(j, root, "lr", o.lr);
    o.lr_decay = get_or(j, root, "lr_decay", o.lr_decay);
    o.momentum = get_or(j, root, "momentum", o.momentum);
    o.batch_size = get_or(j, root, "batch_size", o.batch_size);
    o.epochs = get_or(j, root, "epochs", o.epochs);
    o.seed = get_or(j, root, "seed", o.seed);
    o.last_layer_only = get_or(j, root, "last_layer_only", o.last_layer_only);
    try {
        o.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(root, e.what());
    }
    return o;
}

json opt_to(const OptimizerConfig& o) {
    json j;
    j["lr"] = o.lr;
    j["lr_decay"] = o.lr_decay;
    j["momentum"] = o.momentum;
    j["batch_size"] = o.batch_size;
    j["epochs"] = o.epochs;
    j["seed"] = o.seed;
    j["last_layer_only"] = o.last_layer_only;
    return j;
}

DistillConfig distill_from(const json& j, const std::string& root) {
    DistillConfig cfg;
    try {
        cfg.objective = parse_objective(get_or<std::string>(j, root, "objective", "dm"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join_key(root, "objective"), e.what());
    }
    try {
        cfg.target.mode = parse_target_mode(get_or<std::string>(j, root, "mode", "vanilla"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(join_key(root, "mode"), e.what());
    }
    if (j.contains("discrepancy")) {
        cfg.target.discrepancy = discrepancy_from(j.at("discrepancy"), join_key(root, "discrepancy"));
    }
    const std::string dist = get_or<std::string>(j, root, "distance", "mse");
    if (dist == "mse") cfg.distance = MatchDistance::mse;
    else if (dist == "mae") cfg.distance = MatchDistance::mae;
    else throw ConfigError(join_key(root, "distance"), "expected 'mse' or 'mae'");
    cfg.iterations = get_or(j, root, "iterations", cfg.iterations);
    cfg.synthetic_lr = get_or(j, root, "synthetic_lr", cfg.synthetic_lr);
    cfg.reinit_period = get_or(j, root, "reinit_period", cfg.reinit_period);
    cfg.dc.matching_steps = get_or(j, root, "dc_matching_steps", cfg.dc.matching_steps);
    cfg.dc.surrogate_steps = get_or(j, root, "dc_surrogate_steps", cfg.dc.surrogate_steps);
    cfg.dc.surrogate_lr = get_or(j, root, "dc_surrogate_lr", cfg.dc.surrogate_lr);
    cfg.mtt.start_epoch_min = get_or(j, root, "mtt_start_epoch_min", cfg.mtt.start_epoch_min);
    cfg.mtt.start_epoch_max = get_or(j, root, "mtt_start_epoch_max", cfg.mtt.start_epoch_max);
    cfg.mtt.student_steps = get_or(j, root, "mtt_student_steps", cfg.mtt.student_steps);
    cfg.mtt.student_lr = get_or(j, root, "mtt_student_lr", cfg.mtt.student_lr);
    cfg.mtt.fd_epsilon = get_or(j, root, "mtt_fd_epsilon", cfg.mtt.fd_epsilon);
    if (j.contains("arch")) cfg.arch = arch_from(j.at("arch"), join_key(root, "arch"));
    const std::string sur = get_or<std::string>(j, root, "surrogate", "mlp");
    if (sur == "mlp") cfg.surrogate = SurrogateKind::mlp;
    else if (sur == "identity") cfg.surrogate = SurrogateKind::identity;
    else throw ConfigError(join_key(root, "surrogate"), "expected 'mlp' or 'identity'");
    cfg.seed = get_or(j, root, "seed", cfg.seed);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(root.empty() ? "distill" : root, e.what());
    }
    return cfg;
}

json distill_to(const DistillConfig& cfg) {
    json j;
    j["objective"] = objective_name(cfg.objective);
    j["mode"] = target_mode_name(cfg.target.mode);
    j["discrepancy"] = discrepancy_to(cfg.target.discrepancy);
    j["distance"] = match_distance_name(cfg.distance);
    j["iterations"] = cfg.iterations;
    j["synthetic_lr"] = cfg.synthetic_lr;
    j["reinit_period"] = cfg.reinit_period;
    j["dc_matching_steps"] = cfg.dc.matching_steps;
    j["dc_surrogate_steps"] = cfg.dc.surrogate_steps;
    j["dc_surrogate_lr"] = cfg.dc.surrogate_lr;
    j["mtt_start_epoch_min"] = cfg.mtt.start_epoch_min;
    j["mtt_start_epoch_max"] = cfg.mtt.start_epoch_max;
    j["mtt_student_steps"] = cfg.mtt.student_steps;
    j["mtt_student_lr"] = cfg.mtt.student_lr;
    j["mtt_fd_epsilon"] = cfg.mtt.fd_epsilon;
    j["arch"] = json{{"widths", cfg.arch.widths}};
    j["surrogate"] = cfg.surrogate == SurrogateKind::mlp ? "mlp" : "identity";
    j["seed"] = cfg.seed;
    return j;
}

EvalOptions eval_from(const json& j, const std::string& root) {
    EvalOptions opts;
    if (j.contains("arch")) opts.arch = arch_from(j.at("arch"), join_key(root, "arch"));
    if (j.contains("opt")) opts.opt = opt_from(j.at("opt"), join_key(root, "opt"));
    opts.n_seeds = get_or(j, root, "n_seeds", opts.n_seeds);
    opts.base_seed = get_or(j, root, "base_seed", opts.base_seed);
    if (opts.n_seeds == 0) throw ConfigError(join_key(root, "n_seeds"), "must be >= 1");
    return opts;
}

json eval_to(const EvalOptions& opts) {
    json j;
    j["arch"] = json{{"widths", opts.arch.widths}};
    j["opt"] = opt_to(opts.opt);
    j["n_seeds"] = opts.n_seeds;
    j["base_seed"] = opts.base_seed;
    return j;
}

}  // namespace

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

BiasConfig bias_config_from_json(const std::string& text, const std::string& root) {
    return bias_from(parse_or_throw(text, root), root);
}

std::string bias_config_to_json(const BiasConfig& cfg) { return bias_to(cfg).dump(2); }

DistillConfig distill_config_from_json(const std::string& text, const std::string& root) {
    return distill_from(parse_or_throw(text, root), root);
}

std::string distill_config_to_json(const DistillConfig& cfg) { return distill_to(cfg).dump(2); }

EvalOptions eval_options_from_json(const std::string& text, const std::string& root) {
    return eval_from(parse_or_throw(text, root), root);
}

std::string eval_options_to_json(const EvalOptions& opts) { return eval_to(opts).dump(2); }

SweepSpec sweep_spec_from_json(const std::string& text) {
    const json j = parse_or_throw(text, "");
    SweepSpec spec;
    try {
        spec.kind = parse_sweep_kind(get_req<std::string>(j, "", "kind"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("kind", e.what());
    }
    if (spec.kind == SweepKind::discrepancy) {
        spec.labels = get_req<std::vector<std::string>>(j, "", "grid");
    } else {
        spec.values = get_req<std::vector<double>>(j, "", "grid");
    }
    if (j.contains("objectives")) {
        spec.objectives.clear();
        for (const auto& s : get_req<std::vector<std::string>>(j, "", "objectives")) {
            try {
                spec.objectives.push_back(parse_objective(s));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("objectives", e.what());
            }
        }
    }
    if (j.contains("modes")) {
        spec.modes.clear();
        for (const auto& s : get_req<std::vector<std::string>>(j, "", "modes")) {
            try {
                spec.modes.push_back(parse_target_mode(s));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("modes", e.what());
            }
        }
    }
    spec.seeds = get_or(j, "", "seeds", spec.seeds);
    if (j.contains("bias")) spec.bias = bias_from(j.at("bias"), "bias");
    spec.test_per_cell = get_or(j, "", "test_per_cell", spec.test_per_cell);
    if (j.contains("distill")) spec.distill = distill_from(j.at("distill"), "distill");
    spec.ipc = get_or(j, "", "ipc", spec.ipc);
    if (j.contains("init_policy")) {
        try {
            spec.init_policy = parse_init_policy(j.at("init_policy").get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError("init_policy", e.what());
        }
    }
    if (j.contains("eval")) spec.eval = eval_from(j.at("eval"), "eval");
    spec.impute_k = get_or(j, "", "impute_k", spec.impute_k);
    spec.audit_instances = get_or(j, "", "audit_instances", spec.audit_instances);
    spec.per_cell_audit = get_or(j, "", "per_cell_audit", spec.per_cell_audit);
    spec.out_path = get_or<std::string>(j, "", "out", spec.out_path);
    spec.workers = get_or(j, "", "workers", spec.workers);
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<spec>", e.what());
    }
    return spec;
}

std::string sweep_spec_to_json(const SweepSpec& spec) {
    json j;
    j["kind"] = sweep_kind_name(spec.kind);
    if (spec.kind == SweepKind::discrepancy) {
        j["grid"] = spec.labels;
    } else {
        j["grid"] = spec.values;
    }
    std::vector<std::string> objectives;
    for (const auto o : spec.objectives) objectives.emplace_back(objective_name(o));
    j["objectives"] = objectives;
    std::vector<std::string> modes;
    for (const auto m : spec.modes) modes.emplace_back(target_mode_name(m));
    j["modes"] = modes;
    j["seeds"] = spec.seeds;
    j["bias"] = bias_to(spec.bias);
    j["test_per_cell"] = spec.test_per_cell;
    j["distill"] = distill_to(spec.distill);
    j["ipc"] = spec.ipc;
    j["init_policy"] = init_policy_name(spec.init_policy);
    j["eval"] = eval_to(spec.eval);
    j["impute_k"] = spec.impute_k;
    j["audit_instances"] = spec.audit_instances;
    j["per_cell_audit"] = spec.per_cell_audit;
    j["out"] = spec.out_path;
    j["workers"] = spec.workers;
    return j.dump(2);
}

std::string distill_sidecar_json(const DistillConfig& cfg, std::size_t ipc, InitPolicy policy,
                                 const DistillLog& log) {
    json j;
    j["config"] = json::parse(distill_config_to_json(cfg));
    j["ipc"] = ipc;
    j["init_policy"] = init_policy_name(policy);
    j["objective_log"] = log.objective_values;
    j["pass_counters"] = {{"group_reductions", log.passes.group_reductions},
                          {"aggregate_reductions", log.passes.aggregate_reductions}};
    // the fairdd mode is a loss-averaging analog of the published method; under
    // gradient matching it averages per-group matching losses
    j["notes"] = {{"fairdd_semantics", "FairDD-analog (uniform average of per-group losses)"},
                  {"fairdd_dc_form", "loss-averaged"}};
    return j.dump(2);
}

}  // namespace fairdistill
