#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairdistill/datagen.hpp"
#include "fairdistill/dataset.hpp"
#include "fairdistill/distill.hpp"
#include "fairdistill/eval.hpp"

namespace fairdistill {

enum class SweepKind { skew, gap, ipc, discrepancy, noise, partial, theorem_audit };
const char* sweep_kind_name(SweepKind k);
SweepKind parse_sweep_kind(const std::string& name);

struct SweepSpec {
    SweepKind kind = SweepKind::skew;
    std::vector<double> values;        // numeric grid
    std::vector<std::string> labels;   // discrepancy grid
    std::vector<Objective> objectives{Objective::dm};
    std::vector<TargetMode> modes{TargetMode::vanilla, TargetMode::cobra};
    std::size_t seeds = 1;

    BiasConfig bias;
    std::size_t test_per_cell = 100;
    DistillConfig distill;
    std::size_t ipc = 10;
    InitPolicy init_policy = InitPolicy::real_sample;
    EvalOptions eval;
    int impute_k = 0;  // partial sweeps; 0 = num_groups

    std::size_t audit_instances = 10000;  // theorem-audit sweeps
    bool per_cell_audit = true;           // residual audit of each cell's model

    std::string out_path;  // long CSV; the aggregate goes to <stem>_agg<ext>
    std::size_t workers = 1;

    void validate() const;
    std::size_t grid_size() const { return kind == SweepKind::discrepancy ? labels.size() : values.size(); }
};

struct RunRecord {
    // cell key
    std::string value_label;
    double value = 0.0;
    Objective objective = Objective::dm;
    TargetMode mode = TargetMode::vanilla;
    std::size_t seed_index = 0;

    bool ok = false;
    std::string error;

    SeedResult eval;
    AuditSummary audit;
    PassCounters passes;
    AuditCounts theorem;  // theorem-audit sweeps only
    double wall_ms = 0.0;
    std::string config_echo;  // resolved cell config as JSON
};

// Executes gen -> distill -> eval for every (grid value x objective x mode x
// seed) cell; failures become error records and the sweep continues. Cells
// may run on several workers; record order is by cell key, independent of
// scheduling. Writes the long CSV to out_path and the per-cell-group
// aggregate next to it when out_path is non-empty.
std::vector<RunRecord> run_sweep(const SweepSpec& spec);

std::string sweep_long_csv(const SweepSpec& spec, const std::vector<RunRecord>& records);
std::string sweep_agg_csv(const SweepSpec& spec, const std::vector<RunRecord>& records);
std::string agg_path_for(const std::string& long_path);

}  // namespace fairdistill
