#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairdistill/dataset.hpp"
#include "fairdistill/net.hpp"

namespace fairdistill {

enum class StatisticKind { embedding, gradient };

struct SubgroupCell {
    int group = 0;
    std::vector<double> phi;  // mean embedding or mean flattened parameter gradient
    std::size_t count = 0;
    double pi = 0.0;
};

struct SubgroupStatistics {
    StatisticKind kind = StatisticKind::embedding;
    std::size_t dim = 0;
    std::vector<std::vector<SubgroupCell>> by_class;  // [y] -> cells of present groups

    void validate() const;  // sum(pi) == 1 per class, consistent dims, positive counts
};

// Instrumented reduction counters: one "group reduction" per (class, group)
// statistic, one "aggregate reduction" per whole-class statistic.
struct PassCounters {
    std::uint64_t group_reductions = 0;
    std::uint64_t aggregate_reductions = 0;
};

// Subsampling policy for statistic reductions (0 = use every sample).
struct BatchPolicy {
    std::size_t max_per_cell = 0;
    std::uint64_t seed = 0;
};

// Per-(class, group) statistics under the frozen network.
SubgroupStatistics subgroup_stats(const NetworkParams& p, const GroupedDataset& ds,
                                  StatisticKind kind, const BatchPolicy& policy = {},
                                  PassCounters* counters = nullptr);

// Whole-class statistics in one aggregate reduction per class (the vanilla
// pipeline's real-side pass).
std::vector<std::vector<double>> class_statistics(const NetworkParams& p, const GroupedDataset& ds,
                                                  StatisticKind kind, const BatchPolicy& policy = {},
                                                  PassCounters* counters = nullptr);

enum class TargetMode { vanilla, fairdd, reweight, cobra };
const char* target_mode_name(TargetMode m);
TargetMode parse_target_mode(const std::string& name);

struct SolverSettings {
    std::size_t max_iters = 5000;
    double tol = 1e-10;
};

// Barycenter discrepancy d plus solver knobs. Q is restricted to diagonal
// positive-definite form (empty = identity); dense Q is not representable.
struct BarycenterDiscrepancy {
    enum class Kind { sqnorm, l1, l2, linf, cosine, huber };

    Kind kind = Kind::sqnorm;
    std::vector<double> q_diag;  // sqnorm only
    double huber_delta = 1.0;
    SolverSettings solver;
    std::uint64_t restart_seed = 0;  // cosine restarts

    void validate(std::size_t dim) const;
    std::string label() const;
    static BarycenterDiscrepancy parse(const std::string& name);
};

struct TargetBundle {
    TargetMode mode = TargetMode::vanilla;
    std::string discrepancy_label;           // cobra only
    std::vector<std::vector<double>> m;      // per-class target vector
};

// m_y = sum_a pi_{a|y} Phi_{a|y}
TargetBundle mixture_target(const SubgroupStatistics& stats);
// mixture with pi forced uniform (loss-reweighting baseline)
TargetBundle reweight_target(const SubgroupStatistics& stats);
// m_y = argmin_m sum_a d(Phi_{a|y}, m), uniform weights
TargetBundle barycenter_target(const SubgroupStatistics& stats, const BarycenterDiscrepancy& d);

enum class MatchDistance { mse, mae };
const char* match_distance_name(MatchDistance d);

// Group-averaged matching loss (1/G) sum_a D(Phi_{a|y}, phi_S) and its
// gradient with respect to phi_S. D: mse = 0.5*||u-v||^2, mae = ||u-v||_1.
struct FairddLoss {
    double value = 0.0;
    std::vector<double> grad;
};
FairddLoss fairdd_target_loss(const SubgroupStatistics& stats, int cls,
                              std::span<const double> phi_S, MatchDistance dist);

// plain matching distance + gradient w.r.t. v
double match_loss(MatchDistance dist, std::span<const double> target, std::span<const double> v,
                  std::vector<double>* grad_v = nullptr);

struct ResidualEntry {
    int cls = 0;
    int group = 0;
    double pi = 0.0;
    double res_cobra = 0.0;  // ||Phi - m*||_Q
    double res_van = 0.0;    // ||Phi - m_van||_Q
    double bound = 0.0;      // sum_{a' != a} pi_{a'} ||Phi_a - Phi_{a'}||_Q
};

struct ClassResidualSummary {
    int cls = 0;
    double max_res_cobra = 0.0;
    double max_res_van = 0.0;
    int worst_group_cobra = 0;     // lowest index among exact argmax ties
    double shift_norm = 0.0;       // ||s_y||_Q
    double antipodal_inner = 0.0;  // <Delta^C_{a_dagger}, s_y>_Q
    bool condition_holds = false;  // antipodal_inner <= 0
};

struct ResidualReport {
    std::vector<ResidualEntry> entries;
    std::vector<ClassResidualSummary> classes;
};

ResidualReport residual_geometry(const SubgroupStatistics& stats, const TargetBundle& vanilla,
                                 const TargetBundle& cobra, const std::vector<double>& q_diag);

struct AuditCounts {
    std::size_t instances = 0;
    std::size_t condition_held = 0;
    std::size_t inequality_held = 0;
    std::size_t violations = 0;
};

// Random (Phi, pi, diagonal-PD Q) instances; where the antipodal condition
// holds, checks max||Delta^C||_Q <= max||Delta^V||_Q + 1e-9.
AuditCounts theorem_audit(std::size_t n_instances, std::size_t dim, int groups,
                          std::uint64_t seed);

struct BoundAuditCounts {
    std::size_t instances = 0;
    std::size_t violations = 0;
    double max_excess = 0.0;  // worst ||Delta*||_Q - bound observed
};

// ||Delta*_{a|y}||_Q <= sum_{a' != a} pi_{a'|y} ||Phi_a - Phi_{a'}||_Q, slack 1e-10.
BoundAuditCounts amplification_bound_audit(std::size_t n_instances, std::size_t dim, int groups,
                                           std::uint64_t seed);

// Iterative solver engine behind barycenter_target (also exposed so the
// closed forms can be cross-checked against an independent route).
struct SolveResult {
    std::vector<double> m;
    double objective = 0.0;
    std::size_t iters = 0;
    bool converged = false;
};

SolveResult solve_barycenter(std::span<const std::vector<double>> points,
                             const BarycenterDiscrepancy& d, std::span<const double> init);

// Non-convergence carries the best iterate and its objective.
class SolverFailure : public std::runtime_error {
public:
    SolverFailure(std::string msg, SolveResult best)
        : std::runtime_error(std::move(msg)), best_result(std::move(best)) {}
    SolveResult best_result;
};

// closed forms / objective evaluation (oracle surfaces)
std::vector<double> uniform_mean(std::span<const std::vector<double>> points);
std::vector<double> coordinate_median(std::span<const std::vector<double>> points);
double barycenter_objective(std::span<const std::vector<double>> points,
                            const BarycenterDiscrepancy& d, std::span<const double> m);

double q_norm(std::span<const double> v, const std::vector<double>& q_diag);
double q_inner(std::span<const double> u, std::span<const double> v,
               const std::vector<double>& q_diag);

}  // namespace fairdistill
