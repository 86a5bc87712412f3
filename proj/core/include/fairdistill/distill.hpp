#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairdistill/dataset.hpp"
#include "fairdistill/net.hpp"
#include "fairdistill/targets.hpp"

namespace fairdistill {

// Learnable synthetic samples, IPC per class, class-major storage; labels are
// fixed at construction and never change.
struct SyntheticSet {
    int num_classes = 0;
    std::size_t ipc = 0;
    std::size_t dim = 0;
    std::vector<double> data;  // (num_classes * ipc) x dim
    std::vector<std::int32_t> labels;
    std::string init_policy;
    std::uint64_t iterations_done = 0;

    std::size_t size() const { return labels.size(); }
    std::span<const double> sample(std::size_t i) const { return {data.data() + i * dim, dim}; }
    std::span<double> sample_mut(std::size_t i) { return {data.data() + i * dim, dim}; }
    int label_of(std::size_t i) const { return labels[i]; }
    // rows of class y are [y*ipc, (y+1)*ipc)
    std::size_t class_row(int y, std::size_t k) const {
        return static_cast<std::size_t>(y) * ipc + k;
    }
    BatchView view() const { return {data.data(), dim, size(), labels.data(), {}}; }
    void validate() const;
};

enum class Objective { dm, dc, mtt };
const char* objective_name(Objective o);
Objective parse_objective(const std::string& name);

enum class InitPolicy { real_sample, noise };
const char* init_policy_name(InitPolicy p);
InitPolicy parse_init_policy(const std::string& name);

enum class SurrogateKind { mlp, identity };

struct TargetSpec {
    TargetMode mode = TargetMode::vanilla;
    BarycenterDiscrepancy discrepancy;  // cobra only
};

struct DcSchedule {
    std::size_t matching_steps = 1;   // pixel steps per class per iteration
    std::size_t surrogate_steps = 1;  // full-batch SGD steps on S per iteration (0 = frozen)
    double surrogate_lr = 0.05;
};

struct MttConfig {
    std::size_t start_epoch_min = 0;
    std::size_t start_epoch_max = 0;
    std::size_t student_steps = 1;  // K
    double student_lr = 0.05;
    double fd_epsilon = 1e-3;
};

struct DistillConfig {
    Objective objective = Objective::dm;
    TargetSpec target;
    MatchDistance distance = MatchDistance::mse;
    std::size_t iterations = 100;
    double synthetic_lr = 1.0;
    std::size_t reinit_period = 1;  // dm: resample the surrogate every N iterations
    DcSchedule dc;
    MttConfig mtt;
    Architecture arch{{8, 32, 2}};  // surrogate network
    SurrogateKind surrogate = SurrogateKind::mlp;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DistillLog {
    std::vector<double> objective_values;  // one entry per outer iteration
    PassCounters passes;
};

SyntheticSet init_synthetic(const GroupedDataset& ds, std::size_t ipc, InitPolicy policy,
                            std::uint64_t seed);

// Distribution matching: per-class mean-embedding targets under the
// configured mode, one pixel gradient step per outer iteration.
SyntheticSet distill_dm(const GroupedDataset& ds, SyntheticSet s, const DistillConfig& cfg,
                        DistillLog* log = nullptr);

// Gradient matching: alternates per-class gradient-target matching steps with
// surrogate training steps on S.
SyntheticSet distill_dc(const GroupedDataset& ds, SyntheticSet s, const DistillConfig& cfg,
                        DistillLog* log = nullptr);

// Trajectory matching against barycentric (per-group averaged) expert
// start/end checkpoints; vanilla mode takes a single all-data trajectory.
// Pixel gradients by coordinate forward differences.
SyntheticSet distill_mtt(std::span<const Trajectory> experts, SyntheticSet s,
                         const DistillConfig& cfg, DistillLog* log = nullptr);

// Matching loss of class `cls` against a fixed gradient target and its exact
// gradient with respect to that class's synthetic pixels (ipc x dim,
// row-major). This is one DC matching step's inner computation, exposed so it
// can be checked against finite differences.
double dc_matching_loss(const NetworkParams& surrogate, std::span<const double> target,
                        const SyntheticSet& s, int cls, MatchDistance dist,
                        std::vector<double>* pixel_grad = nullptr);

// Expert trajectories for MTT: one per group (rows with that group, all
// classes), snapshots at every epoch 0..epochs.
std::vector<Trajectory> build_group_trajectories(const GroupedDataset& ds,
                                                 const Architecture& arch,
                                                 const OptimizerConfig& opt);
Trajectory build_full_trajectory(const GroupedDataset& ds, const Architecture& arch,
                                 const OptimizerConfig& opt);

// One-stop entry used by the CLI and sweep harness (builds trajectories for
// mtt internally).
SyntheticSet run_distillation(const GroupedDataset& ds, const DistillConfig& cfg, std::size_t ipc,
                              InitPolicy policy, DistillLog* log = nullptr);

// Synthetic sets reuse the dataset container (groups zeroed); the JSON
// sidecar carries the config echo, per-iteration objective log and pass
// counters.
void save_synthetic(const std::string& path, const SyntheticSet& s);
SyntheticSet load_synthetic(const std::string& path);
GroupedDataset synthetic_as_dataset(const SyntheticSet& s);

}  // namespace fairdistill
