#include "fairdistill/report_csv.hpp"

#include "fairdistill/csv.hpp"

namespace fairdistill {

std::string eval_per_seed_csv(const RunMeta& meta, const EvalReport& report) {
    CsvWriter w({"dataset", "objective", "mode", "ipc", "seed", "acc", "eod_m", "eod_a"});
    for (const auto& s : report.per_seed) {
        w.cell(meta.dataset).cell(meta.objective).cell(meta.mode).cell(meta.ipc);
        w.cell(std::to_string(s.seed)).cell(s.accuracy).cell(s.eod_m).cell(s.eod_a);
        w.end_row();
    }
    return w.str();
}

std::string eval_agg_csv(const RunMeta& meta, const EvalReport& report) {
    CsvWriter w({"dataset", "objective", "mode", "ipc", "seed_count", "acc_mean", "acc_std",
                 "eodm_mean", "eodm_std", "eoda_mean", "eoda_std"});
    w.cell(meta.dataset).cell(meta.objective).cell(meta.mode).cell(meta.ipc);
    w.cell(report.per_seed.size());
    w.cell(report.acc_mean).cell(report.acc_std);
    w.cell(report.eodm_mean).cell(report.eodm_std);
    w.cell(report.eoda_mean).cell(report.eoda_std);
    w.end_row();
    return w.str();
}

std::string eval_rates_csv(const RunMeta& meta, const EvalReport& report, int num_classes,
                           int num_groups) {
    CsvWriter w({"dataset", "objective", "mode", "ipc", "class", "group", "rate_mean"});
    for (int y = 0; y < num_classes; ++y) {
        for (int a = 0; a < num_groups; ++a) {
            const std::size_t k = static_cast<std::size_t>(y) * num_groups + a;
            w.cell(meta.dataset).cell(meta.objective).cell(meta.mode).cell(meta.ipc);
            w.cell(y).cell(a).cell(report.mean_rates.at(k));
            w.end_row();
        }
    }
    return w.str();
}

std::string audit_summary_csv(const RunMeta& meta, const AuditSummary& summary) {
    CsvWriter w({"objective", "dataset", "vanilla_mean", "vanilla_worst", "fairdd_mean",
                 "fairdd_worst", "cobra_mean", "cobra_worst"});
    w.cell(meta.objective).cell(meta.dataset);
    w.cell(summary.mean_van).cell(summary.worst_van);
    w.cell(summary.mean_fairdd).cell(summary.worst_fairdd);
    w.cell(summary.mean_cobra).cell(summary.worst_cobra);
    w.end_row();
    return w.str();
}

std::string audit_rows_csv(const RunMeta& meta, const AuditSummary& summary) {
    CsvWriter w({"objective", "dataset", "class", "maxres_van", "maxres_fairdd", "maxres_cobra"});
    for (const auto& row : summary.rows) {
        w.cell(meta.objective).cell(meta.dataset).cell(row.cls);
        w.cell(row.maxres_van).cell(row.maxres_fairdd).cell(row.maxres_cobra);
        w.end_row();
    }
    return w.str();
}

std::string residual_entries_csv(const ResidualReport& report) {
    CsvWriter w({"class", "group", "pi", "res_cobra", "res_van", "bound"});
    for (const auto& e : report.entries) {
        w.cell(e.cls).cell(e.group).cell(e.pi);
        w.cell(e.res_cobra).cell(e.res_van).cell(e.bound);
        w.end_row();
    }
    return w.str();
}

std::string residual_classes_csv(const ResidualReport& report) {
    CsvWriter w({"class", "max_res_cobra", "max_res_van", "worst_group_cobra", "shift_norm",
                 "antipodal_inner", "condition_holds"});
    for (const auto& c : report.classes) {
        w.cell(c.cls).cell(c.max_res_cobra).cell(c.max_res_van).cell(c.worst_group_cobra);
        w.cell(c.shift_norm).cell(c.antipodal_inner).cell(c.condition_holds ? 1 : 0);
        w.end_row();
    }
    return w.str();
}

}  // namespace fairdistill
