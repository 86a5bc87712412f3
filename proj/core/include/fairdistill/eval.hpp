#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fairdistill/dataset.hpp"
#include "fairdistill/distill.hpp"
#include "fairdistill/net.hpp"
#include "fairdistill/targets.hpp"

namespace fairdistill {

// Per-(class, group) prediction counts on a balanced test split.
struct CellCounts {
    int num_classes = 0;
    int num_groups = 0;
    std::vector<std::int64_t> correct;  // C*G
    std::vector<std::int64_t> total;    // C*G

    std::size_t at(int y, int a) const {
        return static_cast<std::size_t>(y) * num_groups + static_cast<std::size_t>(a);
    }
};

// Accumulates counts from an arbitrary predictor (index -> predicted class);
// the oracle-injection seam used by tests.
CellCounts count_cells(const GroupedDataset& test,
                       const std::function<int(std::size_t)>& predictor);
CellCounts count_cells(const NetworkParams& p, const GroupedDataset& test);

struct EodResult {
    double eod_m = 0.0;  // percent
    double eod_a = 0.0;  // percent
    std::vector<double> rates;  // p_y^EO(a), C*G
};

// Exact evaluation of the max and mean equalized-odds gaps from raw counts.
// Every (y, a) cell must have total > 0.
EodResult compute_eod(const CellCounts& counts);

double accuracy_percent(const CellCounts& counts);

struct EvalOptions {
    Architecture arch{{8, 32, 2}};
    OptimizerConfig opt{.lr = 0.05, .epochs = 300};
    std::size_t n_seeds = 10;
    std::uint64_t base_seed = 0;
};

struct SeedResult {
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double eod_m = 0.0;
    double eod_a = 0.0;
    std::vector<double> rates;  // p_y^EO(a), C*G (empty for synthesized rows)
};

struct EvalReport {
    std::vector<SeedResult> per_seed;
    double acc_mean = 0.0, acc_std = 0.0;
    double eodm_mean = 0.0, eodm_std = 0.0;
    double eoda_mean = 0.0, eoda_std = 0.0;
    std::vector<double> mean_rates;  // seed-mean conditional accuracies
};

// Trains a fresh network on S per seed, predicts on the balanced test split,
// aggregates mean and sample standard deviation across seeds.
EvalReport eval_distilled(const SyntheticSet& s, const GroupedDataset& test,
                          const EvalOptions& opts);

EvalReport aggregate_seed_results(std::vector<SeedResult> per_seed);

// Worst-case residual audit: subgroup statistics of the real set under a
// frozen trained model, squared max residual per class for the mixture,
// group-uniform (fairdd analog) and barycenter targets.
struct AuditRow {
    int cls = 0;
    double maxres_van = 0.0;
    double maxres_fairdd = 0.0;
    double maxres_cobra = 0.0;
};

struct AuditSummary {
    std::vector<AuditRow> rows;
    double mean_van = 0.0, worst_van = 0.0;
    double mean_fairdd = 0.0, worst_fairdd = 0.0;
    double mean_cobra = 0.0, worst_cobra = 0.0;
};

AuditSummary residual_audit(const NetworkParams& trained, const GroupedDataset& real,
                            StatisticKind kind);

}  // namespace fairdistill
