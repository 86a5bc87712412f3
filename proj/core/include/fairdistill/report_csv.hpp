#pragma once

#include <string>

#include "fairdistill/eval.hpp"
#include "fairdistill/targets.hpp"

namespace fairdistill {

// Stable CSV layouts for the run artifacts.

struct RunMeta {
    std::string dataset = "synthetic";
    std::string objective = "dm";
    std::string mode = "vanilla";
    std::size_t ipc = 10;
};

// one row per evaluation seed: dataset,objective,mode,ipc,seed,acc,eod_m,eod_a
std::string eval_per_seed_csv(const RunMeta& meta, const EvalReport& report);

// dataset,objective,mode,ipc,seed_count,acc_mean,acc_std,eodm_mean,eodm_std,eoda_mean,eoda_std
std::string eval_agg_csv(const RunMeta& meta, const EvalReport& report);

// seed-mean conditional accuracies p_y(a), one row per (class, group)
std::string eval_rates_csv(const RunMeta& meta, const EvalReport& report, int num_classes,
                           int num_groups);

// worst-case residual table: objective,dataset then mean and worst per target mode
std::string audit_summary_csv(const RunMeta& meta, const AuditSummary& summary);
// per-class rows: objective,dataset,class,maxres_van,maxres_fairdd,maxres_cobra
std::string audit_rows_csv(const RunMeta& meta, const AuditSummary& summary);

// residual geometry, one row per (class, group)
std::string residual_entries_csv(const ResidualReport& report);
// per-class summary with the shift and antipodal condition
std::string residual_classes_csv(const ResidualReport& report);

}  // namespace fairdistill
