#include "fairdistill/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>
#include <thread>

#include "fairdistill/config_io.hpp"
#include "fairdistill/csv.hpp"
#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

std::string sanitize(std::string s) {
    for (auto& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

struct CellKey {
    std::size_t vi, oi, mi, si;
};

std::uint64_t cell_stream(const CellKey& k) {
    return ((k.vi * 1021 + k.oi) * 1021 + k.mi) * 8191 + k.si;
}

RunRecord run_cell(const SweepSpec& spec, const CellKey& key) {
    RunRecord rec;
    rec.objective = spec.objectives[key.oi];
    rec.mode = spec.modes[key.mi];
    rec.seed_index = key.si;

    const auto t0 = std::chrono::steady_clock::now();
    try {
        BiasConfig bias = spec.bias;
        DistillConfig dcfg = spec.distill;
        std::size_t ipc = spec.ipc;
        dcfg.objective = rec.objective;
        dcfg.target.mode = rec.mode;

        double rho = 0.0, known_fraction = 1.0;
        switch (spec.kind) {
            case SweepKind::skew:
                rec.value = spec.values[key.vi];
                bias.skew = rec.value;
                break;
            case SweepKind::gap:
                rec.value = spec.values[key.vi];
                // gaussian data separates groups through the mean-offset knob;
                // image data through the corruption severity applied below
                if (bias.kind == DataKind::gaussian) bias.separation = rec.value;
                break;
            case SweepKind::ipc:
                rec.value = spec.values[key.vi];
                ipc = static_cast<std::size_t>(std::llround(rec.value));
                break;
            case SweepKind::discrepancy: {
                rec.value_label = spec.labels[key.vi];
                rec.value = static_cast<double>(key.vi);
                auto solver = dcfg.target.discrepancy.solver;  // keep solver knobs
                dcfg.target.discrepancy = BarycenterDiscrepancy::parse(rec.value_label);
                dcfg.target.discrepancy.solver = solver;
                dcfg.target.mode = TargetMode::cobra;
                rec.mode = TargetMode::cobra;
                break;
            }
            case SweepKind::noise:
                rec.value = spec.values[key.vi];
                rho = rec.value;
                break;
            case SweepKind::partial:
                rec.value = spec.values[key.vi];
                known_fraction = rec.value;
                break;
            case SweepKind::theorem_audit: {
                rec.value = spec.values[key.vi];
                const int groups = static_cast<int>(std::llround(rec.value));
                rec.theorem = theorem_audit(spec.audit_instances, spec.bias.dim, groups,
                                            derive_seed(spec.bias.seed, cell_stream(key)));
                rec.ok = true;
                rec.wall_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
                return rec;
            }
        }
        if (rec.value_label.empty()) rec.value_label = format_double(rec.value);

        const std::uint64_t cell_seed = derive_seed(spec.bias.seed, cell_stream(key));
        bias.seed = cell_seed;
        dcfg.seed = derive_seed(cell_seed, 1);

        GroupedDataset train_ds = generate(bias);
        GroupedDataset test = make_balanced_test(bias, spec.test_per_cell);
        if (spec.kind == SweepKind::gap && bias.kind != DataKind::gaussian) {
            // severity alpha on every non-reference group, in train and test
            // alike, so the groups differ in appearance, not in distribution
            // shift between the splits
            const int alpha = static_cast<int>(std::llround(rec.value));
            std::set<int> targets;
            for (int a = 1; a < bias.num_groups; ++a) targets.insert(a);
            if (alpha > 0 && !targets.empty()) {
                train_ds = apply_corruption(train_ds, alpha, targets, derive_seed(cell_seed, 8));
                test = apply_corruption(test, alpha, targets, derive_seed(cell_seed, 9));
            }
        }
        if (spec.kind == SweepKind::noise && rho > 0.0) {
            train_ds = corrupt_group_labels(train_ds, rho, derive_seed(cell_seed, 2));
        }
        if (spec.kind == SweepKind::partial && known_fraction < 1.0) {
            train_ds = mask_group_labels(train_ds, known_fraction, derive_seed(cell_seed, 3));
            const int k = spec.impute_k > 0 ? spec.impute_k : bias.num_groups;
            train_ds = impute_groups_kmeans(train_ds, k, derive_seed(cell_seed, 4));
        }

        DistillLog log;
        const SyntheticSet s = run_distillation(train_ds, dcfg, ipc, spec.init_policy, &log);
        rec.passes = log.passes;

        // the sweep's seed axis replicates whole cells; eval.n_seeds averages
        // downstream inits within one cell
        EvalOptions ev = spec.eval;
        ev.base_seed = derive_seed(cell_seed, 5);
        const EvalReport report = eval_distilled(s, test, ev);
        rec.eval = SeedResult{ev.base_seed, report.acc_mean, report.eodm_mean, report.eoda_mean};

        if (spec.per_cell_audit) {
            OptimizerConfig opt = ev.opt;
            opt.seed = derive_seed(cell_seed, 6);
            NetworkParams model = init_network(ev.arch, opt.seed);
            model = train(std::move(model), s.view(), opt);
            const StatisticKind kind = rec.objective == Objective::dc ? StatisticKind::gradient
                                                                      : StatisticKind::embedding;
            rec.audit = residual_audit(model, train_ds, kind);
        }

        rec.config_echo = distill_config_to_json(dcfg);
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        if (rec.value_label.empty() && spec.kind != SweepKind::discrepancy &&
            key.vi < spec.values.size()) {
            rec.value = spec.values[key.vi];
            rec.value_label = format_double(rec.value);
        }
    }
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace

const char* sweep_kind_name(SweepKind k) {
    switch (k) {
        case SweepKind::skew: return "skew";
        case SweepKind::gap: return "gap";
        case SweepKind::ipc: return "ipc";
        case SweepKind::discrepancy: return "discrepancy";
        case SweepKind::noise: return "noise";
        case SweepKind::partial: return "partial";
        case SweepKind::theorem_audit: return "theorem-audit";
    }
    return "?";
}

SweepKind parse_sweep_kind(const std::string& name) {
    if (name == "skew") return SweepKind::skew;
    if (name == "gap") return SweepKind::gap;
    if (name == "ipc") return SweepKind::ipc;
    if (name == "discrepancy") return SweepKind::discrepancy;
    if (name == "noise") return SweepKind::noise;
    if (name == "partial") return SweepKind::partial;
    if (name == "theorem-audit") return SweepKind::theorem_audit;
    throw std::invalid_argument("unknown sweep kind: " + name);
}

void SweepSpec::validate() const {
    if (grid_size() == 0) throw std::invalid_argument("sweep: empty grid");
    if (objectives.empty()) throw std::invalid_argument("sweep: no objectives");
    if (modes.empty()) throw std::invalid_argument("sweep: no modes");
    if (seeds == 0) throw std::invalid_argument("sweep: seeds must be >= 1");
    if (kind != SweepKind::theorem_audit) bias.validate();
    if (test_per_cell == 0) throw std::invalid_argument("sweep: test_per_cell must be >= 1");
}

std::vector<RunRecord> run_sweep(const SweepSpec& spec) {
    spec.validate();

    std::vector<CellKey> keys;
    for (std::size_t vi = 0; vi < spec.grid_size(); ++vi) {
        for (std::size_t oi = 0; oi < spec.objectives.size(); ++oi) {
            for (std::size_t mi = 0; mi < spec.modes.size(); ++mi) {
                for (std::size_t si = 0; si < spec.seeds; ++si) {
                    keys.push_back(CellKey{vi, oi, mi, si});
                }
            }
        }
    }

    std::vector<RunRecord> records(keys.size());
    const std::size_t workers = std::max<std::size_t>(1, spec.workers);
    if (workers == 1) {
        for (std::size_t i = 0; i < keys.size(); ++i) records[i] = run_cell(spec, keys[i]);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= keys.size()) break;
                    records[i] = run_cell(spec, keys[i]);
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    // records are already in cell-key order: keys were generated sorted and
    // each worker writes only its own slot

    if (!spec.out_path.empty()) {
        write_text_file(spec.out_path, sweep_long_csv(spec, records));
        write_text_file(agg_path_for(spec.out_path), sweep_agg_csv(spec, records));
    }
    return records;
}

std::string agg_path_for(const std::string& long_path) {
    const auto dot = long_path.find_last_of('.');
    if (dot == std::string::npos || long_path.find('/', dot) != std::string::npos) {
        return long_path + "_agg";
    }
    return long_path.substr(0, dot) + "_agg" + long_path.substr(dot);
}

std::string sweep_long_csv(const SweepSpec& spec, const std::vector<RunRecord>& records) {
    if (spec.kind == SweepKind::theorem_audit) {
        CsvWriter w({"sweep", "value", "instances", "condition_held", "inequality_held",
                     "violations", "wall_ms", "error"});
        for (const auto& r : records) {
            w.cell(sweep_kind_name(spec.kind))
                .cell(r.value)
                .cell(r.theorem.instances)
                .cell(r.theorem.condition_held)
                .cell(r.theorem.inequality_held)
                .cell(r.theorem.violations)
                .cell(r.wall_ms)
                .cell(sanitize(r.error));
            w.end_row();
        }
        return w.str();
    }

    CsvWriter w({"sweep", "value", "objective", "mode", "ipc", "seed", "acc", "eod_m", "eod_a",
                 "maxres_van", "maxres_fairdd", "maxres_cobra", "group_passes", "aggregate_passes",
                 "wall_ms", "error"});
    for (const auto& r : records) {
        const std::size_t ipc = spec.kind == SweepKind::ipc
                                    ? static_cast<std::size_t>(std::llround(r.value))
                                    : spec.ipc;
        w.cell(sweep_kind_name(spec.kind)).cell(r.value_label);
        w.cell(objective_name(r.objective)).cell(target_mode_name(r.mode));
        w.cell(ipc).cell(r.seed_index);
        if (r.ok) {
            w.cell(r.eval.accuracy).cell(r.eval.eod_m).cell(r.eval.eod_a);
            w.cell(r.audit.mean_van).cell(r.audit.mean_fairdd).cell(r.audit.mean_cobra);
        } else {
            for (int i = 0; i < 6; ++i) w.cell("nan");
        }
        w.cell(r.passes.group_reductions).cell(r.passes.aggregate_reductions);
        w.cell(r.wall_ms).cell(sanitize(r.error));
        w.end_row();
    }
    return w.str();
}

std::string sweep_agg_csv(const SweepSpec& spec, const std::vector<RunRecord>& records) {
    if (spec.kind == SweepKind::theorem_audit) {
        return sweep_long_csv(spec, records);  // already one row per cell group
    }
    CsvWriter w({"sweep", "value", "objective", "mode", "ipc", "seed_count", "acc_mean", "acc_std",
                 "eodm_mean", "eodm_std", "eoda_mean", "eoda_std"});
    // records are ordered (value, objective, mode, seed); group by the first three
    std::size_t i = 0;
    while (i < records.size()) {
        std::size_t j = i;
        std::vector<SeedResult> ok_seeds;
        while (j < records.size() && records[j].value_label == records[i].value_label &&
               records[j].objective == records[i].objective && records[j].mode == records[i].mode) {
            if (records[j].ok) ok_seeds.push_back(records[j].eval);
            ++j;
        }
        const auto& r = records[i];
        const std::size_t ipc = spec.kind == SweepKind::ipc
                                    ? static_cast<std::size_t>(std::llround(r.value))
                                    : spec.ipc;
        w.cell(sweep_kind_name(spec.kind)).cell(r.value_label);
        w.cell(objective_name(r.objective)).cell(target_mode_name(r.mode));
        w.cell(ipc).cell(ok_seeds.size());
        if (!ok_seeds.empty()) {
            const EvalReport rep = aggregate_seed_results(std::move(ok_seeds));
            w.cell(rep.acc_mean).cell(rep.acc_std);
            w.cell(rep.eodm_mean).cell(rep.eodm_std);
            w.cell(rep.eoda_mean).cell(rep.eoda_std);
        } else {
            for (int c = 0; c < 6; ++c) w.cell("nan");
        }
        w.end_row();
        i = j;
    }
    return w.str();
}

}  // namespace fairdistill
