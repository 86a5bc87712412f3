#include "fairdistill/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

std::vector<std::size_t> maybe_subsample(const std::vector<std::size_t>& idx,
                                         const BatchPolicy& policy, std::uint64_t stream) {
    if (policy.max_per_cell == 0 || idx.size() <= policy.max_per_cell) return idx;
    std::vector<std::size_t> out = idx;
    Rng rng(derive_seed(policy.seed, stream));
    rng.shuffle(out);
    out.resize(policy.max_per_cell);
    std::sort(out.begin(), out.end());
    return out;
}

// Mean statistic over the given rows: embedding mean or mean flattened
// parameter gradient of the cross-entropy.
std::vector<double> reduce_statistic(const NetworkParams& p, const GroupedDataset& ds,
                                     StatisticKind kind, const std::vector<std::size_t>& rows) {
    if (kind == StatisticKind::embedding) {
        std::vector<double> acc(static_cast<std::size_t>(p.arch.embedding_dim()), 0.0);
        for (const std::size_t i : rows) {
            const auto r = forward(p, ds.sample(i));
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += r.embedding[j];
        }
        const double inv = 1.0 / static_cast<double>(rows.size());
        for (auto& v : acc) v *= inv;
        return acc;
    }
    BatchView view{ds.data.data(), ds.dim, ds.size(), ds.labels.data(), rows};
    return loss_and_grads(p, view, false).dtheta;  // mean CE gradient == mean per-sample gradient
}

double scalar_distance(BarycenterDiscrepancy::Kind kind, std::span<const double> phi,
                       std::span<const double> m, const BarycenterDiscrepancy& d) {
    using Kind = BarycenterDiscrepancy::Kind;
    switch (kind) {
        case Kind::sqnorm: {
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double diff = phi[j] - m[j];
                const double q = d.q_diag.empty() ? 1.0 : d.q_diag[j];
                s += q * diff * diff;
            }
            return s;
        }
        case Kind::l1: {
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) s += std::abs(phi[j] - m[j]);
            return s;
        }
        case Kind::l2: {
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double diff = phi[j] - m[j];
                s += diff * diff;
            }
            return std::sqrt(s);
        }
        case Kind::linf: {
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) s = std::max(s, std::abs(phi[j] - m[j]));
            return s;
        }
        case Kind::cosine: {
            double dot = 0.0, np = 0.0, nm = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) {
                dot += phi[j] * m[j];
                np += phi[j] * phi[j];
                nm += m[j] * m[j];
            }
            if (np <= 0.0 || nm <= 0.0) return 1.0;
            return 1.0 - dot / (std::sqrt(np) * std::sqrt(nm));
        }
        case Kind::huber: {
            const double delta = d.huber_delta;
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double t = std::abs(phi[j] - m[j]);
                s += t <= delta ? 0.5 * t * t : delta * t - 0.5 * delta * delta;
            }
            return s;
        }
    }
    return 0.0;
}

// ---- iterative solvers ------------------------------------------------

SolveResult solve_sqnorm_gd(std::span<const std::vector<double>> points,
                            const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    const std::size_t G = points.size();
    double q_max = 1.0;
    if (!d.q_diag.empty()) q_max = *std::max_element(d.q_diag.begin(), d.q_diag.end());

    SolveResult r;
    r.m.assign(init.begin(), init.end());
    const auto mean = uniform_mean(points);
    const double step = 0.4 / q_max;
    for (std::size_t it = 0; it < d.solver.max_iters; ++it) {
        // grad f = (2/G) sum_a Q (m - Phi_a) = 2 Q (m - mean)
        double max_move = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double q = d.q_diag.empty() ? 1.0 : d.q_diag[j];
            const double g = 2.0 * q * (r.m[j] - mean[j]);
            const double move = step * g;
            r.m[j] -= move;
            max_move = std::max(max_move, std::abs(move));
        }
        r.iters = it + 1;
        if (max_move <= d.solver.tol) {
            r.converged = true;
            break;
        }
    }
    (void)G;
    r.objective = barycenter_objective(points, d, r.m);
    return r;
}

// separable convex objective: golden-section per coordinate
SolveResult solve_l1_golden(std::span<const std::vector<double>> points,
                            const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    const std::size_t G = points.size();
    constexpr double kInvPhi = 0.6180339887498949;

    SolveResult r;
    r.m.assign(init.begin(), init.end());
    std::size_t total_iters = 0;
    for (std::size_t j = 0; j < dim; ++j) {
        double lo = points[0][j], hi = points[0][j];
        for (const auto& p : points) {
            lo = std::min(lo, p[j]);
            hi = std::max(hi, p[j]);
        }
        auto fj = [&](double v) {
            double s = 0.0;
            for (const auto& p : points) s += std::abs(p[j] - v);
            return s / static_cast<double>(G);
        };
        double a = lo, b = hi;
        double c = b - kInvPhi * (b - a);
        double e = a + kInvPhi * (b - a);
        double fc = fj(c), fe = fj(e);
        std::size_t it = 0;
        while (b - a > d.solver.tol && it < d.solver.max_iters) {
            if (fc <= fe) {
                b = e;
                e = c;
                fe = fc;
                c = b - kInvPhi * (b - a);
                fc = fj(c);
            } else {
                a = c;
                c = e;
                fc = fe;
                e = a + kInvPhi * (b - a);
                fe = fj(e);
            }
            ++it;
        }
        total_iters = std::max(total_iters, it);
        r.m[j] = 0.5 * (a + b);
    }
    r.iters = total_iters;
    r.converged = true;
    r.objective = barycenter_objective(points, d, r.m);
    return r;
}

// Weiszfeld iteration with epsilon-regularized distances. The objective is
// monotone under the update, so an objective stall is numerical convergence
// even when the iterate still wanders in a flat valley (near-collinear or
// duplicated points).
SolveResult solve_l2_weiszfeld(std::span<const std::vector<double>> points,
                               const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    SolveResult r;
    r.m.assign(init.begin(), init.end());
    std::vector<double> next(dim);
    double prev_obj = barycenter_objective(points, d, r.m);
    for (std::size_t it = 0; it < d.solver.max_iters; ++it) {
        double wsum = 0.0;
        std::fill(next.begin(), next.end(), 0.0);
        for (const auto& p : points) {
            double s = 1e-24;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = p[j] - r.m[j];
                s += diff * diff;
            }
            const double w = 1.0 / std::sqrt(s);
            wsum += w;
            for (std::size_t j = 0; j < dim; ++j) next[j] += w * p[j];
        }
        double max_move = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            next[j] /= wsum;
            max_move = std::max(max_move, std::abs(next[j] - r.m[j]));
            r.m[j] = next[j];
        }
        r.iters = it + 1;
        if (max_move <= d.solver.tol) {
            r.converged = true;
            break;
        }
        const double obj = barycenter_objective(points, d, r.m);
        if (prev_obj - obj <= 1e-15 * std::max(1.0, std::abs(prev_obj))) {
            r.converged = true;
            break;
        }
        prev_obj = obj;
    }
    r.objective = barycenter_objective(points, d, r.m);
    return r;
}

// subgradient descent with diminishing steps and best-iterate tracking
SolveResult solve_linf_subgradient(std::span<const std::vector<double>> points,
                                   const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    const std::size_t G = points.size();

    SolveResult r;
    r.m.assign(init.begin(), init.end());
    r.objective = barycenter_objective(points, d, r.m);
    if (r.objective == 0.0) {
        r.converged = true;
        return r;
    }
    std::vector<double> cur(r.m);
    double scale = 0.0;
    for (const auto& p : points) {
        for (std::size_t j = 0; j < dim; ++j) scale = std::max(scale, std::abs(p[j] - cur[j]));
    }
    if (scale == 0.0) scale = 1.0;

    std::vector<double> sub(dim);
    const double f_init = r.objective;
    double best_at_q3 = r.objective;
    for (std::size_t it = 0; it < d.solver.max_iters; ++it) {
        std::fill(sub.begin(), sub.end(), 0.0);
        for (const auto& p : points) {
            std::size_t jstar = 0;
            double best = -1.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double v = std::abs(p[j] - cur[j]);
                if (v > best) {
                    best = v;
                    jstar = j;
                }
            }
            if (best > 0.0) {
                sub[jstar] += (cur[jstar] > p[jstar] ? 1.0 : -1.0) / static_cast<double>(G);
            }
        }
        const double alpha = scale / std::sqrt(static_cast<double>(it + 1));
        for (std::size_t j = 0; j < dim; ++j) cur[j] -= alpha * sub[j];
        const double obj = barycenter_objective(points, d, cur);
        if (obj < r.objective) {
            r.objective = obj;
            r.m = cur;
        }
        r.iters = it + 1;
        if (it + 1 == (3 * d.solver.max_iters) / 4) best_at_q3 = r.objective;
    }
    // converged when the final quarter moved the best objective by a
    // negligible amount, relative either to the objective or to the total
    // progress made; a run truncated while still making headway is an error
    const double q4_drop = best_at_q3 - r.objective;
    const double total_drop = f_init - r.objective;
    r.converged = q4_drop <= std::max(1e-3 * std::abs(r.objective), 0.1 * total_drop);
    return r;
}

// projected gradient ascent on the unit sphere, several restarts
SolveResult solve_cosine_restarts(std::span<const std::vector<double>> points,
                                  const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    const std::size_t G = points.size();

    std::vector<std::vector<double>> unit_points;
    unit_points.reserve(G);
    for (const auto& p : points) {
        double n = 0.0;
        for (const double v : p) n += v * v;
        if (n <= 0.0) {
            throw std::invalid_argument("cosine barycenter: zero-norm statistic vector");
        }
        std::vector<double> u(p);
        const double inv = 1.0 / std::sqrt(n);
        for (auto& v : u) v *= inv;
        unit_points.push_back(std::move(u));
    }

    auto normalize = [&](std::vector<double>& v) {
        double n = 0.0;
        for (const double x : v) n += x * x;
        n = std::sqrt(n);
        if (n <= 1e-300) return false;
        for (auto& x : v) x /= n;
        return true;
    };

    auto run_one = [&](std::vector<double> m0) {
        SolveResult r;
        if (!normalize(m0)) {
            m0.assign(dim, 0.0);
            m0[0] = 1.0;
        }
        r.m = m0;
        std::vector<double> grad(dim);
        for (std::size_t it = 0; it < d.solver.max_iters; ++it) {
            // ascend g(m) = (1/G) sum_a <u_a, m> over the unit sphere
            std::fill(grad.begin(), grad.end(), 0.0);
            for (const auto& u : unit_points) {
                for (std::size_t j = 0; j < dim; ++j) grad[j] += u[j] / static_cast<double>(G);
            }
            double proj = 0.0;
            for (std::size_t j = 0; j < dim; ++j) proj += grad[j] * r.m[j];
            double move = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double t = grad[j] - proj * r.m[j];  // tangential component
                r.m[j] += 0.5 * t;
                move = std::max(move, std::abs(0.5 * t));
            }
            if (!normalize(r.m)) {
                r.m.assign(dim, 0.0);
                r.m[0] = 1.0;
            }
            r.iters = it + 1;
            if (move <= d.solver.tol) {
                r.converged = true;
                break;
            }
        }
        r.objective = barycenter_objective(points, d, r.m);
        return r;
    };

    SolveResult best = run_one(std::vector<double>(init.begin(), init.end()));
    Rng rng(derive_seed(d.restart_seed, 0xC05u));
    for (int restart = 0; restart < 4; ++restart) {
        std::vector<double> m0(init.begin(), init.end());
        for (auto& v : m0) v += rng.gauss(0.0, 0.5);
        SolveResult r = run_one(std::move(m0));
        if (r.objective < best.objective) best = r;
    }
    return best;
}

// Gradient descent with a fixed unit step: the objective is separable with a
// 1-Lipschitz per-coordinate gradient, so step 1 is monotone descent and
// jumps straight to the mean in the purely quadratic regime.
SolveResult solve_huber_gd(std::span<const std::vector<double>> points,
                           const BarycenterDiscrepancy& d, std::span<const double> init) {
    const std::size_t dim = points.front().size();
    const std::size_t G = points.size();
    const double delta = d.huber_delta;

    SolveResult r;
    r.m.assign(init.begin(), init.end());
    std::vector<double> grad(dim);
    for (std::size_t it = 0; it < d.solver.max_iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& p : points) {
            for (std::size_t j = 0; j < dim; ++j) {
                const double res = p[j] - r.m[j];
                grad[j] -= std::clamp(res, -delta, delta) / static_cast<double>(G);
            }
        }
        double gmax = 0.0;
        for (const double g : grad) gmax = std::max(gmax, std::abs(g));
        r.iters = it + 1;
        if (gmax <= d.solver.tol) {
            r.converged = true;
            break;
        }
        for (std::size_t j = 0; j < dim; ++j) r.m[j] -= grad[j];
    }
    r.objective = barycenter_objective(points, d, r.m);
    return r;
}

struct RandomInstance {
    std::vector<std::vector<double>> phi;
    std::vector<double> pi;
    std::vector<double> q_diag;
};

RandomInstance random_instance(std::size_t dim, int groups, Rng& rng) {
    RandomInstance inst;
    inst.phi.resize(static_cast<std::size_t>(groups));
    for (auto& p : inst.phi) {
        p.resize(dim);
        for (auto& v : p) v = rng.gauss();
    }
    inst.pi.resize(static_cast<std::size_t>(groups));
    double sum = 0.0;
    for (auto& w : inst.pi) {
        w = rng.uniform01() + 0.02;
        sum += w;
    }
    for (auto& w : inst.pi) w /= sum;
    inst.q_diag.resize(dim);
    for (auto& q : inst.q_diag) q = rng.uniform(0.1, 10.0);
    return inst;
}

}  // namespace

void SubgroupStatistics::validate() const {
    for (std::size_t y = 0; y < by_class.size(); ++y) {
        const auto& cells = by_class[y];
        if (cells.empty()) {
            throw std::invalid_argument("subgroup stats: class " + std::to_string(y) +
                                        " has no cells");
        }
        double pi_sum = 0.0;
        for (const auto& c : cells) {
            if (c.phi.size() != dim) {
                throw std::invalid_argument("subgroup stats: inconsistent statistic dimension");
            }
            if (c.count == 0) throw std::invalid_argument("subgroup stats: zero-count cell");
            pi_sum += c.pi;
        }
        if (std::abs(pi_sum - 1.0) > 1e-12) {
            throw std::invalid_argument("subgroup stats: proportions do not sum to 1 in class " +
                                        std::to_string(y));
        }
    }
}

SubgroupStatistics subgroup_stats(const NetworkParams& p, const GroupedDataset& ds,
                                  StatisticKind kind, const BatchPolicy& policy,
                                  PassCounters* counters) {
    SubgroupStatistics stats;
    stats.kind = kind;
    stats.dim = kind == StatisticKind::embedding ? static_cast<std::size_t>(p.arch.embedding_dim())
                                                 : p.theta.size();
    const auto cells = ds.cell_indices();
    stats.by_class.resize(static_cast<std::size_t>(ds.num_classes));
    for (int y = 0; y < ds.num_classes; ++y) {
        std::size_t class_total = 0;
        for (int a = 0; a < ds.num_groups; ++a) {
            class_total += cells[static_cast<std::size_t>(y)][static_cast<std::size_t>(a)].size();
        }
        if (class_total == 0) {
            throw std::invalid_argument("subgroup_stats: class " + std::to_string(y) + " is empty");
        }
        for (int a = 0; a < ds.num_groups; ++a) {
            const auto& idx = cells[static_cast<std::size_t>(y)][static_cast<std::size_t>(a)];
            if (idx.empty()) continue;
            const auto rows = maybe_subsample(
                idx, policy, static_cast<std::uint64_t>(y) * ds.num_groups + a);
            SubgroupCell cell;
            cell.group = a;
            cell.count = idx.size();
            cell.pi = static_cast<double>(idx.size()) / static_cast<double>(class_total);
            cell.phi = reduce_statistic(p, ds, kind, rows);
            stats.by_class[static_cast<std::size_t>(y)].push_back(std::move(cell));
            if (counters != nullptr) counters->group_reductions++;
        }
    }
    stats.validate();
    return stats;
}

std::vector<std::vector<double>> class_statistics(const NetworkParams& p, const GroupedDataset& ds,
                                                  StatisticKind kind, const BatchPolicy& policy,
                                                  PassCounters* counters) {
    const auto by_class = ds.class_indices();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(ds.num_classes));
    for (int y = 0; y < ds.num_classes; ++y) {
        const auto& idx = by_class[static_cast<std::size_t>(y)];
        if (idx.empty()) {
            throw std::invalid_argument("class_statistics: class " + std::to_string(y) +
                                        " is empty");
        }
        const auto rows = maybe_subsample(idx, policy, static_cast<std::uint64_t>(y));
        out[static_cast<std::size_t>(y)] = reduce_statistic(p, ds, kind, rows);
        if (counters != nullptr) counters->aggregate_reductions++;
    }
    return out;
}

const char* target_mode_name(TargetMode m) {
    switch (m) {
        case TargetMode::vanilla: return "vanilla";
        case TargetMode::fairdd: return "fairdd";
        case TargetMode::reweight: return "reweight";
        case TargetMode::cobra: return "cobra";
    }
    return "?";
}

TargetMode parse_target_mode(const std::string& name) {
    if (name == "vanilla") return TargetMode::vanilla;
    if (name == "fairdd") return TargetMode::fairdd;
    if (name == "reweight") return TargetMode::reweight;
    if (name == "cobra") return TargetMode::cobra;
    throw std::invalid_argument("unknown target mode: " + name);
}

void BarycenterDiscrepancy::validate(std::size_t dim) const {
    if (!q_diag.empty()) {
        if (kind != Kind::sqnorm) {
            throw std::invalid_argument("discrepancy: Q applies to sqnorm only");
        }
        if (q_diag.size() != dim) {
            throw std::invalid_argument("discrepancy: Q diagonal size mismatch");
        }
        for (const double q : q_diag) {
            if (!(q > 0.0)) throw std::invalid_argument("discrepancy: Q must be positive definite");
        }
    }
    if (kind == Kind::huber && !(huber_delta > 0.0)) {
        throw std::invalid_argument("discrepancy: huber delta must be positive");
    }
}

std::string BarycenterDiscrepancy::label() const {
    switch (kind) {
        case Kind::sqnorm: return "sqnorm";
        case Kind::l1: return "l1";
        case Kind::l2: return "l2";
        case Kind::linf: return "linf";
        case Kind::cosine: return "cosine";
        case Kind::huber: return "huber";
    }
    return "?";
}

BarycenterDiscrepancy BarycenterDiscrepancy::parse(const std::string& name) {
    BarycenterDiscrepancy d;
    if (name == "sqnorm") d.kind = Kind::sqnorm;
    else if (name == "l1") d.kind = Kind::l1;
    else if (name == "l2") d.kind = Kind::l2;
    else if (name == "linf") d.kind = Kind::linf;
    else if (name == "cosine") d.kind = Kind::cosine;
    else if (name == "huber") d.kind = Kind::huber;
    else throw std::invalid_argument("unknown discrepancy: " + name);
    return d;
}

TargetBundle mixture_target(const SubgroupStatistics& stats) {
    stats.validate();
    TargetBundle b;
    b.mode = TargetMode::vanilla;
    b.m.resize(stats.by_class.size());
    for (std::size_t y = 0; y < stats.by_class.size(); ++y) {
        std::vector<double> m(stats.dim, 0.0);
        for (const auto& cell : stats.by_class[y]) {
            for (std::size_t j = 0; j < stats.dim; ++j) m[j] += cell.pi * cell.phi[j];
        }
        b.m[y] = std::move(m);
    }
    return b;
}

TargetBundle reweight_target(const SubgroupStatistics& stats) {
    stats.validate();
    TargetBundle b;
    b.mode = TargetMode::reweight;
    b.m.resize(stats.by_class.size());
    for (std::size_t y = 0; y < stats.by_class.size(); ++y) {
        const auto& cells = stats.by_class[y];
        std::vector<double> m(stats.dim, 0.0);
        const double w = 1.0 / static_cast<double>(cells.size());
        for (const auto& cell : cells) {
            for (std::size_t j = 0; j < stats.dim; ++j) m[j] += w * cell.phi[j];
        }
        b.m[y] = std::move(m);
    }
    return b;
}

std::vector<double> uniform_mean(std::span<const std::vector<double>> points) {
    std::vector<double> m(points.front().size(), 0.0);
    for (const auto& p : points) {
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += p[j];
    }
    const double inv = 1.0 / static_cast<double>(points.size());
    for (auto& v : m) v *= inv;
    return m;
}

std::vector<double> coordinate_median(std::span<const std::vector<double>> points) {
    const std::size_t dim = points.front().size();
    std::vector<double> m(dim);
    std::vector<double> col(points.size());
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t a = 0; a < points.size(); ++a) col[a] = points[a][j];
        std::sort(col.begin(), col.end());
        const std::size_t n = col.size();
        m[j] = n % 2 == 1 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return m;
}

double barycenter_objective(std::span<const std::vector<double>> points,
                            const BarycenterDiscrepancy& d, std::span<const double> m) {
    double s = 0.0;
    for (const auto& p : points) s += scalar_distance(d.kind, p, m, d);
    return s / static_cast<double>(points.size());
}

SolveResult solve_barycenter(std::span<const std::vector<double>> points,
                             const BarycenterDiscrepancy& d, std::span<const double> init) {
    if (points.empty()) throw std::invalid_argument("solve_barycenter: no points");
    d.validate(points.front().size());
    using Kind = BarycenterDiscrepancy::Kind;
    switch (d.kind) {
        case Kind::sqnorm: return solve_sqnorm_gd(points, d, init);
        case Kind::l1: return solve_l1_golden(points, d, init);
        case Kind::l2: return solve_l2_weiszfeld(points, d, init);
        case Kind::linf: return solve_linf_subgradient(points, d, init);
        case Kind::cosine: return solve_cosine_restarts(points, d, init);
        case Kind::huber: return solve_huber_gd(points, d, init);
    }
    throw std::invalid_argument("solve_barycenter: unknown discrepancy");
}

TargetBundle barycenter_target(const SubgroupStatistics& stats, const BarycenterDiscrepancy& d) {
    stats.validate();
    d.validate(stats.dim);
    TargetBundle b;
    b.mode = TargetMode::cobra;
    b.discrepancy_label = d.label();
    b.m.resize(stats.by_class.size());
    using Kind = BarycenterDiscrepancy::Kind;
    for (std::size_t y = 0; y < stats.by_class.size(); ++y) {
        const auto& cells = stats.by_class[y];
        std::vector<std::vector<double>> pts;
        pts.reserve(cells.size());
        for (const auto& c : cells) pts.push_back(c.phi);

        if (cells.size() == 1) {
            b.m[y] = pts.front();  // zero objective is attainable
            continue;
        }
        switch (d.kind) {
            case Kind::sqnorm:
                b.m[y] = uniform_mean(pts);
                break;
            case Kind::l1:
                b.m[y] = coordinate_median(pts);
                break;
            default: {
                const auto init = uniform_mean(pts);
                SolveResult r = solve_barycenter(pts, d, init);
                if (!r.converged) {
                    throw SolverFailure("barycenter solver did not converge for class " +
                                            std::to_string(y) + " (" + d.label() +
                                            "), objective " + std::to_string(r.objective),
                                        std::move(r));
                }
                b.m[y] = std::move(r.m);
                break;
            }
        }
    }
    return b;
}

const char* match_distance_name(MatchDistance d) {
    return d == MatchDistance::mse ? "mse" : "mae";
}

double match_loss(MatchDistance dist, std::span<const double> target, std::span<const double> v,
                  std::vector<double>* grad_v) {
    if (target.size() != v.size()) throw std::invalid_argument("match_loss: size mismatch");
    if (grad_v != nullptr) grad_v->assign(v.size(), 0.0);
    double loss = 0.0;
    if (dist == MatchDistance::mse) {
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double diff = v[j] - target[j];
            loss += 0.5 * diff * diff;
            if (grad_v != nullptr) (*grad_v)[j] = diff;
        }
    } else {
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double diff = v[j] - target[j];
            loss += std::abs(diff);
            if (grad_v != nullptr) (*grad_v)[j] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        }
    }
    return loss;
}

FairddLoss fairdd_target_loss(const SubgroupStatistics& stats, int cls,
                              std::span<const double> phi_S, MatchDistance dist) {
    stats.validate();
    const auto& cells = stats.by_class.at(static_cast<std::size_t>(cls));
    if (phi_S.size() != stats.dim) {
        throw std::invalid_argument("fairdd_target_loss: phi_S dimension mismatch");
    }
    FairddLoss out;
    out.grad.assign(stats.dim, 0.0);
    const double w = 1.0 / static_cast<double>(cells.size());
    std::vector<double> g;
    for (const auto& cell : cells) {
        out.value += w * match_loss(dist, cell.phi, phi_S, &g);
        for (std::size_t j = 0; j < stats.dim; ++j) out.grad[j] += w * g[j];
    }
    return out;
}

double q_inner(std::span<const double> u, std::span<const double> v,
               const std::vector<double>& q_diag) {
    if (u.size() != v.size()) throw std::invalid_argument("q_inner: size mismatch");
    if (!q_diag.empty() && q_diag.size() != u.size()) {
        throw std::invalid_argument("q_inner: Q diagonal size mismatch");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        s += u[j] * (q_diag.empty() ? 1.0 : q_diag[j]) * v[j];
    }
    return s;
}

double q_norm(std::span<const double> v, const std::vector<double>& q_diag) {
    return std::sqrt(std::max(0.0, q_inner(v, v, q_diag)));
}

ResidualReport residual_geometry(const SubgroupStatistics& stats, const TargetBundle& vanilla,
                                 const TargetBundle& cobra, const std::vector<double>& q_diag) {
    stats.validate();
    if (vanilla.m.size() != stats.by_class.size() || cobra.m.size() != stats.by_class.size()) {
        throw std::invalid_argument("residual_geometry: bundle/stats class count mismatch");
    }
    if (!q_diag.empty() && q_diag.size() != stats.dim) {
        throw std::invalid_argument("residual_geometry: Q diagonal size mismatch");
    }

    ResidualReport report;
    for (std::size_t y = 0; y < stats.by_class.size(); ++y) {
        const auto& cells = stats.by_class[y];
        const auto& m_van = vanilla.m[y];
        const auto& m_cob = cobra.m[y];
        if (m_van.size() != stats.dim || m_cob.size() != stats.dim) {
            throw std::invalid_argument("residual_geometry: target dimension mismatch");
        }

        ClassResidualSummary summary;
        summary.cls = static_cast<int>(y);
        std::vector<double> delta_c_worst;
        std::vector<double> diff(stats.dim);

        for (std::size_t ai = 0; ai < cells.size(); ++ai) {
            const auto& cell = cells[ai];
            ResidualEntry e;
            e.cls = static_cast<int>(y);
            e.group = cell.group;
            e.pi = cell.pi;

            std::vector<double> delta_c(stats.dim), delta_v(stats.dim);
            for (std::size_t j = 0; j < stats.dim; ++j) {
                delta_c[j] = cell.phi[j] - m_cob[j];
                delta_v[j] = cell.phi[j] - m_van[j];
            }
            e.res_cobra = q_norm(delta_c, q_diag);
            e.res_van = q_norm(delta_v, q_diag);
            for (std::size_t bi = 0; bi < cells.size(); ++bi) {
                if (bi == ai) continue;
                for (std::size_t j = 0; j < stats.dim; ++j) {
                    diff[j] = cell.phi[j] - cells[bi].phi[j];
                }
                e.bound += cells[bi].pi * q_norm(diff, q_diag);
            }

            if (e.res_cobra > summary.max_res_cobra) {
                summary.max_res_cobra = e.res_cobra;
                summary.worst_group_cobra = cell.group;
                delta_c_worst = delta_c;
            } else if (delta_c_worst.empty()) {
                summary.worst_group_cobra = cell.group;
                delta_c_worst = delta_c;
            }
            summary.max_res_van = std::max(summary.max_res_van, e.res_van);
            report.entries.push_back(std::move(e));
        }

        std::vector<double> shift(stats.dim);
        for (std::size_t j = 0; j < stats.dim; ++j) shift[j] = m_van[j] - m_cob[j];
        summary.shift_norm = q_norm(shift, q_diag);
        summary.antipodal_inner = q_inner(delta_c_worst, shift, q_diag);
        summary.condition_holds = summary.antipodal_inner <= 0.0;
        report.classes.push_back(std::move(summary));
    }
    return report;
}

AuditCounts theorem_audit(std::size_t n_instances, std::size_t dim, int groups,
                          std::uint64_t seed) {
    if (n_instances == 0) throw std::invalid_argument("theorem_audit: need at least one instance");
    if (groups < 1 || dim == 0) throw std::invalid_argument("theorem_audit: bad dimensions");

    AuditCounts counts;
    counts.instances = n_instances;
    Rng rng(derive_seed(seed, 0x7137u));
    for (std::size_t n = 0; n < n_instances; ++n) {
        const auto inst = random_instance(dim, groups, rng);

        std::vector<double> m_star = uniform_mean(inst.phi);
        std::vector<double> m_van(dim, 0.0);
        for (int a = 0; a < groups; ++a) {
            for (std::size_t j = 0; j < dim; ++j) {
                m_van[j] += inst.pi[static_cast<std::size_t>(a)]
                          * inst.phi[static_cast<std::size_t>(a)][j];
            }
        }

        double max_c = -1.0, max_v = -1.0;
        std::vector<double> delta_c_worst;
        std::vector<double> delta(dim);
        for (int a = 0; a < groups; ++a) {
            for (std::size_t j = 0; j < dim; ++j) {
                delta[j] = inst.phi[static_cast<std::size_t>(a)][j] - m_star[j];
            }
            const double nc = q_norm(delta, inst.q_diag);
            if (nc > max_c) {
                max_c = nc;
                delta_c_worst = delta;
            }
            for (std::size_t j = 0; j < dim; ++j) {
                delta[j] = inst.phi[static_cast<std::size_t>(a)][j] - m_van[j];
            }
            max_v = std::max(max_v, q_norm(delta, inst.q_diag));
        }

        std::vector<double> shift(dim);
        for (std::size_t j = 0; j < dim; ++j) shift[j] = m_van[j] - m_star[j];
        const bool condition = q_inner(delta_c_worst, shift, inst.q_diag) <= 0.0;
        if (!condition) continue;  // theorem scope: never tallied as violations
        counts.condition_held++;
        if (max_c <= max_v + 1e-9) {
            counts.inequality_held++;
        } else {
            counts.violations++;
        }
    }
    return counts;
}

BoundAuditCounts amplification_bound_audit(std::size_t n_instances, std::size_t dim, int groups,
                                           std::uint64_t seed) {
    if (n_instances == 0) {
        throw std::invalid_argument("amplification_bound_audit: need at least one instance");
    }
    BoundAuditCounts counts;
    counts.instances = n_instances;
    counts.max_excess = -std::numeric_limits<double>::infinity();
    Rng rng(derive_seed(seed, 0xB0D1u));
    std::vector<double> delta(dim), diff(dim);
    for (std::size_t n = 0; n < n_instances; ++n) {
        const auto inst = random_instance(dim, groups, rng);
        std::vector<double> m_van(dim, 0.0);
        for (int a = 0; a < groups; ++a) {
            for (std::size_t j = 0; j < dim; ++j) {
                m_van[j] += inst.pi[static_cast<std::size_t>(a)]
                          * inst.phi[static_cast<std::size_t>(a)][j];
            }
        }
        bool violated = false;
        for (int a = 0; a < groups; ++a) {
            for (std::size_t j = 0; j < dim; ++j) {
                delta[j] = inst.phi[static_cast<std::size_t>(a)][j] - m_van[j];
            }
            const double res = q_norm(delta, inst.q_diag);
            double bound = 0.0;
            for (int b = 0; b < groups; ++b) {
                if (b == a) continue;
                for (std::size_t j = 0; j < dim; ++j) {
                    diff[j] = inst.phi[static_cast<std::size_t>(a)][j] -
                              inst.phi[static_cast<std::size_t>(b)][j];
                }
                bound += inst.pi[static_cast<std::size_t>(b)] * q_norm(diff, inst.q_diag);
            }
            counts.max_excess = std::max(counts.max_excess, res - bound);
            if (res > bound + 1e-10) violated = true;
        }
        if (violated) counts.violations++;
    }
    return counts;
}

}  // namespace fairdistill
