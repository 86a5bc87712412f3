#include "fairdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fairdistill/datagen.hpp"
#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

void check_finite(double v, const char* what, std::size_t iteration) {
    if (!std::isfinite(v)) {
        throw std::runtime_error(std::string("distillation aborted: non-finite ") + what +
                                 " at iteration " + std::to_string(iteration));
    }
}

// Real-side per-class targets for one frozen surrogate. For fairdd the loss
// is group-averaged instead, so the per-group statistics object is returned.
struct RealSide {
    std::vector<std::vector<double>> targets;  // empty for fairdd
    SubgroupStatistics stats;                  // filled for fairdd
};

RealSide build_real_side(const NetworkParams& surrogate, const GroupedDataset& ds,
                         StatisticKind kind, const TargetSpec& spec, PassCounters* counters) {
    RealSide r;
    switch (spec.mode) {
        case TargetMode::vanilla:
            r.targets = class_statistics(surrogate, ds, kind, {}, counters);
            return r;
        case TargetMode::fairdd:
            r.stats = subgroup_stats(surrogate, ds, kind, {}, counters);
            return r;
        case TargetMode::reweight: {
            const auto stats = subgroup_stats(surrogate, ds, kind, {}, counters);
            r.targets = reweight_target(stats).m;
            return r;
        }
        case TargetMode::cobra: {
            const auto stats = subgroup_stats(surrogate, ds, kind, {}, counters);
            r.targets = barycenter_target(stats, spec.discrepancy).m;
            return r;
        }
    }
    throw std::invalid_argument("build_real_side: unknown target mode");
}

// Matching loss of a synthetic statistic against the real side, with the
// cotangent on the synthetic statistic.
double real_side_loss(const RealSide& real, const TargetSpec& spec, MatchDistance dist, int cls,
                      std::span<const double> phi_s, std::vector<double>* cotangent) {
    if (spec.mode == TargetMode::fairdd) {
        auto fl = fairdd_target_loss(real.stats, cls, phi_s, dist);
        if (cotangent != nullptr) *cotangent = std::move(fl.grad);
        return fl.value;
    }
    return match_loss(dist, real.targets[static_cast<std::size_t>(cls)], phi_s, cotangent);
}

// raw-input statistics for the identity feature map
std::vector<double> identity_cell_mean(const GroupedDataset& ds,
                                       const std::vector<std::size_t>& idx) {
    std::vector<double> mean(ds.dim, 0.0);
    for (const auto i : idx) {
        const auto x = ds.sample(i);
        for (std::size_t j = 0; j < ds.dim; ++j) mean[j] += x[j];
    }
    for (auto& v : mean) v /= static_cast<double>(idx.size());
    return mean;
}

SubgroupStatistics identity_subgroup_stats(const GroupedDataset& ds, PassCounters* counters) {
    SubgroupStatistics stats;
    stats.kind = StatisticKind::embedding;
    stats.dim = ds.dim;
    stats.by_class.resize(static_cast<std::size_t>(ds.num_classes));
    const auto cells = ds.cell_indices();
    for (int y = 0; y < ds.num_classes; ++y) {
        std::size_t class_total = 0;
        for (int a = 0; a < ds.num_groups; ++a) {
            class_total += cells[static_cast<std::size_t>(y)][static_cast<std::size_t>(a)].size();
        }
        if (class_total == 0) {
            throw std::invalid_argument("distill: empty class " + std::to_string(y));
        }
        for (int a = 0; a < ds.num_groups; ++a) {
            const auto& idx = cells[static_cast<std::size_t>(y)][static_cast<std::size_t>(a)];
            if (idx.empty()) continue;
            SubgroupCell cell;
            cell.group = a;
            cell.count = idx.size();
            cell.pi = static_cast<double>(idx.size()) / static_cast<double>(class_total);
            cell.phi = identity_cell_mean(ds, idx);
            stats.by_class[static_cast<std::size_t>(y)].push_back(std::move(cell));
            if (counters != nullptr) counters->group_reductions++;
        }
    }
    stats.validate();
    return stats;
}

RealSide build_real_side_identity(const GroupedDataset& ds, const TargetSpec& spec,
                                  PassCounters* counters) {
    RealSide r;
    if (spec.mode == TargetMode::vanilla) {
        const auto by_class = ds.class_indices();
        r.targets.resize(static_cast<std::size_t>(ds.num_classes));
        for (int y = 0; y < ds.num_classes; ++y) {
            const auto& idx = by_class[static_cast<std::size_t>(y)];
            if (idx.empty()) throw std::invalid_argument("distill: empty class " + std::to_string(y));
            r.targets[static_cast<std::size_t>(y)] = identity_cell_mean(ds, idx);
            if (counters != nullptr) counters->aggregate_reductions++;
        }
        return r;
    }
    auto stats = identity_subgroup_stats(ds, counters);
    switch (spec.mode) {
        case TargetMode::fairdd:
            r.stats = std::move(stats);
            break;
        case TargetMode::reweight:
            r.targets = reweight_target(stats).m;
            break;
        case TargetMode::cobra:
            r.targets = barycenter_target(stats, spec.discrepancy).m;
            break;
        default:
            break;
    }
    return r;
}

std::vector<double> synthetic_embedding_mean(const NetworkParams& surrogate,
                                             const SyntheticSet& s, int cls, bool identity) {
    const std::size_t out_dim =
        identity ? s.dim : static_cast<std::size_t>(surrogate.arch.embedding_dim());
    std::vector<double> mean(out_dim, 0.0);
    for (std::size_t k = 0; k < s.ipc; ++k) {
        const auto x = s.sample(s.class_row(cls, k));
        if (identity) {
            for (std::size_t j = 0; j < out_dim; ++j) mean[j] += x[j];
        } else {
            const auto fwd = forward(surrogate, x);
            for (std::size_t j = 0; j < out_dim; ++j) mean[j] += fwd.embedding[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(s.ipc);
    for (auto& v : mean) v *= inv;
    return mean;
}

// mean flattened CE gradient of class y's synthetic rows
std::vector<double> synthetic_class_gradient(const NetworkParams& surrogate, const SyntheticSet& s,
                                             int cls, std::vector<std::size_t>& scratch_rows) {
    scratch_rows.resize(s.ipc);
    for (std::size_t k = 0; k < s.ipc; ++k) scratch_rows[k] = s.class_row(cls, k);
    BatchView view{s.data.data(), s.dim, s.size(), s.labels.data(), scratch_rows};
    return loss_and_grads(surrogate, view, false).dtheta;
}

std::vector<double> average_snapshots(std::span<const Trajectory> experts, std::size_t epoch_idx) {
    std::vector<double> avg(experts.front().snapshots[epoch_idx].size(), 0.0);
    for (const auto& t : experts) {
        const auto& snap = t.snapshots[epoch_idx];
        for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += snap[j];
    }
    const double inv = 1.0 / static_cast<double>(experts.size());
    for (auto& v : avg) v *= inv;
    return avg;
}

}  // namespace

void SyntheticSet::validate() const {
    if (ipc == 0) throw std::invalid_argument("synthetic set: ipc must be >= 1");
    if (labels.size() != static_cast<std::size_t>(num_classes) * ipc) {
        throw std::invalid_argument("synthetic set: label count != C*ipc");
    }
    if (data.size() != labels.size() * dim) {
        throw std::invalid_argument("synthetic set: data size mismatch");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != static_cast<std::int32_t>(i / ipc)) {
            throw std::invalid_argument("synthetic set: labels must be class-major fixed");
        }
    }
    for (const double v : data) {
        if (!std::isfinite(v)) throw std::invalid_argument("synthetic set: non-finite sample value");
    }
}

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::dm: return "dm";
        case Objective::dc: return "dc";
        case Objective::mtt: return "mtt";
    }
    return "?";
}

Objective parse_objective(const std::string& name) {
    if (name == "dm") return Objective::dm;
    if (name == "dc") return Objective::dc;
    if (name == "mtt") return Objective::mtt;
    throw std::invalid_argument("unknown objective: " + name);
}

const char* init_policy_name(InitPolicy p) {
    return p == InitPolicy::real_sample ? "real-sample" : "noise";
}

InitPolicy parse_init_policy(const std::string& name) {
    if (name == "real-sample") return InitPolicy::real_sample;
    if (name == "noise") return InitPolicy::noise;
    throw std::invalid_argument("unknown init policy: " + name);
}

void DistillConfig::validate() const {
    if (iterations == 0) throw std::invalid_argument("distill config: iterations must be >= 1");
    if (!(synthetic_lr > 0.0)) throw std::invalid_argument("distill config: synthetic_lr must be > 0");
    if (reinit_period == 0) throw std::invalid_argument("distill config: reinit_period must be >= 1");
    if (objective == Objective::mtt) {
        if (mtt.student_steps == 0) throw std::invalid_argument("distill config: mtt needs K >= 1");
        if (mtt.start_epoch_max < mtt.start_epoch_min) {
            throw std::invalid_argument("distill config: mtt start epoch range inverted");
        }
        if (target.mode == TargetMode::fairdd || target.mode == TargetMode::reweight) {
            throw std::invalid_argument(
                "distill config: mtt supports vanilla and cobra target modes only");
        }
    }
    if (surrogate == SurrogateKind::mlp) arch.validate();
}

SyntheticSet init_synthetic(const GroupedDataset& ds, std::size_t ipc, InitPolicy policy,
                            std::uint64_t seed) {
    if (ipc == 0) throw std::invalid_argument("init_synthetic: ipc must be >= 1");
    SyntheticSet s;
    s.num_classes = ds.num_classes;
    s.ipc = ipc;
    s.dim = ds.dim;
    s.init_policy = init_policy_name(policy);
    s.labels.resize(static_cast<std::size_t>(ds.num_classes) * ipc);
    s.data.assign(s.labels.size() * ds.dim, 0.0);
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        s.labels[i] = static_cast<std::int32_t>(i / ipc);
    }

    Rng rng(derive_seed(seed, 0x5e7u));
    if (policy == InitPolicy::noise) {
        for (auto& v : s.data) v = rng.gauss(0.0, 1.0);
        return s;
    }
    const auto by_class = ds.class_indices();
    for (int y = 0; y < ds.num_classes; ++y) {
        auto idx = by_class[static_cast<std::size_t>(y)];
        if (idx.size() < ipc) {
            throw std::invalid_argument("init_synthetic: class " + std::to_string(y) +
                                        " has fewer than ipc samples");
        }
        rng.shuffle(idx);
        for (std::size_t k = 0; k < ipc; ++k) {
            const auto src = ds.sample(idx[k]);
            auto dst = s.sample_mut(s.class_row(y, k));
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    return s;
}

SyntheticSet distill_dm(const GroupedDataset& ds, SyntheticSet s, const DistillConfig& cfg,
                        DistillLog* log) {
    cfg.validate();
    s.validate();
    if (cfg.objective != Objective::dm) throw std::invalid_argument("distill_dm: objective != dm");
    const bool identity = cfg.surrogate == SurrogateKind::identity;
    if (!identity && static_cast<std::size_t>(cfg.arch.input_dim()) != ds.dim) {
        throw std::invalid_argument("distill_dm: surrogate input dim mismatch");
    }

    NetworkParams surrogate;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        if (!identity && it % cfg.reinit_period == 0) {
            surrogate = init_network(cfg.arch, derive_seed(cfg.seed, 0xD3000000ull + it));
        }

        PassCounters* counters = log != nullptr ? &log->passes : nullptr;
        const RealSide real =
            identity ? build_real_side_identity(ds, cfg.target, counters)
                     : build_real_side(surrogate, ds, StatisticKind::embedding, cfg.target,
                                       counters);

        double total_loss = 0.0;
        std::vector<std::vector<double>> cotangents(static_cast<std::size_t>(s.num_classes));
        for (int y = 0; y < s.num_classes; ++y) {
            const auto phi_s = synthetic_embedding_mean(surrogate, s, y, identity);
            total_loss += real_side_loss(real, cfg.target, cfg.distance, y, phi_s,
                                         &cotangents[static_cast<std::size_t>(y)]);
        }
        check_finite(total_loss, "matching loss", it);
        if (log != nullptr) log->objective_values.push_back(total_loss);

        const double scale = cfg.synthetic_lr / static_cast<double>(s.ipc);
        for (int y = 0; y < s.num_classes; ++y) {
            const auto& c = cotangents[static_cast<std::size_t>(y)];
            for (std::size_t k = 0; k < s.ipc; ++k) {
                auto x = s.sample_mut(s.class_row(y, k));
                if (identity) {
                    for (std::size_t j = 0; j < s.dim; ++j) x[j] -= scale * c[j];
                } else {
                    const auto g = embedding_pullback(surrogate, x, c);
                    for (std::size_t j = 0; j < s.dim; ++j) x[j] -= scale * g[j];
                }
            }
        }
        s.iterations_done++;
    }
    s.validate();
    return s;
}

double dc_matching_loss(const NetworkParams& surrogate, std::span<const double> target,
                        const SyntheticSet& s, int cls, MatchDistance dist,
                        std::vector<double>* pixel_grad) {
    std::vector<std::size_t> rows;
    const auto g_s = synthetic_class_gradient(surrogate, s, cls, rows);
    std::vector<double> cot;
    const double loss = match_loss(dist, target, g_s, pixel_grad != nullptr ? &cot : nullptr);
    if (pixel_grad != nullptr) {
        pixel_grad->assign(s.ipc * s.dim, 0.0);
        const double scale = 1.0 / static_cast<double>(s.ipc);
        for (std::size_t k = 0; k < s.ipc; ++k) {
            const auto x = s.sample(s.class_row(cls, k));
            const auto g = param_grad_input_pullback(surrogate, x, cls, cot);
            for (std::size_t j = 0; j < s.dim; ++j) {
                (*pixel_grad)[k * s.dim + j] = scale * g[j];
            }
        }
    }
    return loss;
}

SyntheticSet distill_dc(const GroupedDataset& ds, SyntheticSet s, const DistillConfig& cfg,
                        DistillLog* log) {
    cfg.validate();
    s.validate();
    if (cfg.objective != Objective::dc) throw std::invalid_argument("distill_dc: objective != dc");
    if (cfg.surrogate != SurrogateKind::mlp) {
        throw std::invalid_argument("distill_dc: gradient matching needs an mlp surrogate");
    }
    if (static_cast<std::size_t>(cfg.arch.input_dim()) != ds.dim) {
        throw std::invalid_argument("distill_dc: surrogate input dim mismatch");
    }

    NetworkParams surrogate = init_network(cfg.arch, derive_seed(cfg.seed, 0xDC0ull));
    std::vector<std::size_t> rows;
    std::vector<double> cot;
    OptimizerConfig surrogate_opt;
    surrogate_opt.lr = cfg.dc.surrogate_lr;
    surrogate_opt.epochs = 1;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        PassCounters* counters = log != nullptr ? &log->passes : nullptr;
        const RealSide real =
            build_real_side(surrogate, ds, StatisticKind::gradient, cfg.target, counters);

        double total_loss = 0.0;
        for (int y = 0; y < s.num_classes; ++y) {
            for (std::size_t step = 0; step < cfg.dc.matching_steps; ++step) {
                const auto g_s = synthetic_class_gradient(surrogate, s, y, rows);
                const double loss = real_side_loss(real, cfg.target, cfg.distance, y, g_s, &cot);
                if (step == 0) total_loss += loss;

                const double scale = cfg.synthetic_lr / static_cast<double>(s.ipc);
                for (std::size_t k = 0; k < s.ipc; ++k) {
                    auto x = s.sample_mut(s.class_row(y, k));
                    const auto g = param_grad_input_pullback(surrogate, x, y, cot);
                    for (std::size_t j = 0; j < s.dim; ++j) x[j] -= scale * g[j];
                }
            }
        }
        check_finite(total_loss, "matching loss", it);
        if (log != nullptr) log->objective_values.push_back(total_loss);

        for (std::size_t step = 0; step < cfg.dc.surrogate_steps; ++step) {
            surrogate_opt.seed = derive_seed(cfg.seed, 0xDC10000ull + it * 131 + step);
            surrogate = train(std::move(surrogate), s.view(), surrogate_opt);
        }
        s.iterations_done++;
    }
    s.validate();
    return s;
}

SyntheticSet distill_mtt(std::span<const Trajectory> experts, SyntheticSet s,
                         const DistillConfig& cfg, DistillLog* log) {
    cfg.validate();
    s.validate();
    if (cfg.objective != Objective::mtt) throw std::invalid_argument("distill_mtt: objective != mtt");
    if (experts.empty()) throw std::invalid_argument("distill_mtt: no expert trajectories");
    for (const auto& t : experts) {
        t.validate();
        if (!(t.arch == experts.front().arch)) {
            throw std::invalid_argument("distill_mtt: experts use different architectures");
        }
        if (t.epochs != experts.front().epochs) {
            throw std::invalid_argument("distill_mtt: mismatched snapshot epochs across groups");
        }
    }
    const auto& epochs = experts.front().epochs;
    const std::size_t K = cfg.mtt.student_steps;
    if (cfg.mtt.start_epoch_max + K >= epochs.size()) {
        throw std::invalid_argument("distill_mtt: K exceeds available epochs");
    }

    const Architecture& arch = experts.front().arch;
    OptimizerConfig student_opt;
    student_opt.lr = cfg.mtt.student_lr;
    student_opt.epochs = K;

    // normalized matching loss for the current synthetic data
    auto trajectory_loss = [&](const SyntheticSet& cur, const std::vector<double>& theta_start,
                               const std::vector<double>& theta_end, double denom) {
        NetworkParams student;
        student.arch = arch;
        student.theta = theta_start;
        student = train(std::move(student), cur.view(), student_opt);
        double num = 0.0;
        for (std::size_t j = 0; j < theta_end.size(); ++j) {
            const double diff = student.theta[j] - theta_end[j];
            num += diff * diff;
        }
        return num / denom;
    };

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Rng rng(derive_seed(cfg.seed, 0x3770000ull + it));
        const std::size_t span_len = cfg.mtt.start_epoch_max - cfg.mtt.start_epoch_min + 1;
        const std::size_t t_idx = cfg.mtt.start_epoch_min + rng.below(span_len);

        const auto theta_start = average_snapshots(experts, t_idx);
        const auto theta_end = average_snapshots(experts, t_idx + K);
        double denom = 1e-12;
        for (std::size_t j = 0; j < theta_end.size(); ++j) {
            const double diff = theta_start[j] - theta_end[j];
            denom += diff * diff;
        }

        const double base = trajectory_loss(s, theta_start, theta_end, denom);
        check_finite(base, "trajectory loss", it);
        if (log != nullptr) log->objective_values.push_back(base);

        // forward-difference gradient over every synthetic coordinate
        std::vector<double> grad(s.data.size());
        SyntheticSet probe = s;
        for (std::size_t j = 0; j < s.data.size(); ++j) {
            const double saved = probe.data[j];
            probe.data[j] = saved + cfg.mtt.fd_epsilon;
            const double bumped = trajectory_loss(probe, theta_start, theta_end, denom);
            probe.data[j] = saved;
            grad[j] = (bumped - base) / cfg.mtt.fd_epsilon;
        }
        for (std::size_t j = 0; j < s.data.size(); ++j) {
            s.data[j] -= cfg.synthetic_lr * grad[j];
        }
        s.iterations_done++;
    }
    s.validate();
    return s;
}

std::vector<Trajectory> build_group_trajectories(const GroupedDataset& ds,
                                                 const Architecture& arch,
                                                 const OptimizerConfig& opt) {
    std::vector<std::size_t> all_epochs(opt.epochs + 1);
    std::iota(all_epochs.begin(), all_epochs.end(), 0);

    std::vector<Trajectory> out;
    for (int a = 0; a < ds.num_groups; ++a) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.groups[i] == a) rows.push_back(i);
        }
        if (rows.empty()) {
            throw std::invalid_argument("build_group_trajectories: group " + std::to_string(a) +
                                        " has no samples");
        }
        BatchView view{ds.data.data(), ds.dim, ds.size(), ds.labels.data(), rows};
        Trajectory t = record_trajectory(view, arch, opt, all_epochs);
        t.group_tag = a;
        out.push_back(std::move(t));
    }
    return out;
}

Trajectory build_full_trajectory(const GroupedDataset& ds, const Architecture& arch,
                                 const OptimizerConfig& opt) {
    std::vector<std::size_t> all_epochs(opt.epochs + 1);
    std::iota(all_epochs.begin(), all_epochs.end(), 0);
    return record_trajectory(batch_of(ds), arch, opt, all_epochs);
}

SyntheticSet run_distillation(const GroupedDataset& ds, const DistillConfig& cfg, std::size_t ipc,
                              InitPolicy policy, DistillLog* log) {
    SyntheticSet s = init_synthetic(ds, ipc, policy, cfg.seed);
    switch (cfg.objective) {
        case Objective::dm:
            return distill_dm(ds, std::move(s), cfg, log);
        case Objective::dc:
            return distill_dc(ds, std::move(s), cfg, log);
        case Objective::mtt: {
            OptimizerConfig expert_opt;
            expert_opt.lr = cfg.mtt.student_lr;
            expert_opt.epochs = cfg.mtt.start_epoch_max + cfg.mtt.student_steps;
            expert_opt.seed = derive_seed(cfg.seed, 0xE07ull);
            std::vector<Trajectory> experts;
            if (cfg.target.mode == TargetMode::vanilla) {
                experts.push_back(build_full_trajectory(ds, cfg.arch, expert_opt));
            } else {
                experts = build_group_trajectories(ds, cfg.arch, expert_opt);
            }
            return distill_mtt(experts, std::move(s), cfg, log);
        }
    }
    throw std::invalid_argument("run_distillation: unknown objective");
}

GroupedDataset synthetic_as_dataset(const SyntheticSet& s) {
    GroupedDataset ds;
    ds.num_classes = s.num_classes;
    ds.num_groups = 1;
    ds.dim = s.dim;
    ds.split = Split::train;
    ds.data = s.data;
    ds.labels = s.labels;
    ds.groups.assign(s.size(), 0);
    ds.group_known.assign(s.size(), 1);
    return ds;
}

void save_synthetic(const std::string& path, const SyntheticSet& s) {
    save_dataset(path, synthetic_as_dataset(s));
}

SyntheticSet load_synthetic(const std::string& path) {
    const GroupedDataset ds = load_dataset(path);
    SyntheticSet s;
    s.num_classes = ds.num_classes;
    s.dim = ds.dim;
    if (ds.size() == 0 || ds.size() % static_cast<std::size_t>(ds.num_classes) != 0) {
        throw std::runtime_error("load_synthetic: sample count is not C*ipc");
    }
    s.ipc = ds.size() / static_cast<std::size_t>(ds.num_classes);
    s.data = ds.data;
    s.labels = ds.labels;
    s.init_policy = "loaded";
    s.validate();
    return s;
}

}  // namespace fairdistill
