#include "fairdistill/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fairdistill/rng.hpp"

namespace fairdistill {

CellCounts count_cells(const GroupedDataset& test,
                       const std::function<int(std::size_t)>& predictor) {
    CellCounts c;
    c.num_classes = test.num_classes;
    c.num_groups = test.num_groups;
    c.correct.assign(static_cast<std::size_t>(test.num_classes) * test.num_groups, 0);
    c.total.assign(c.correct.size(), 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int y = test.labels[i];
        const int a = test.groups[i];
        c.total[c.at(y, a)]++;
        if (predictor(i) == y) c.correct[c.at(y, a)]++;
    }
    return c;
}

CellCounts count_cells(const NetworkParams& p, const GroupedDataset& test) {
    return count_cells(test, [&](std::size_t i) { return predict(p, test.sample(i)); });
}

EodResult compute_eod(const CellCounts& counts) {
    const int C = counts.num_classes;
    const int G = counts.num_groups;
    EodResult r;
    r.rates.assign(static_cast<std::size_t>(C) * G, 0.0);

    double sup_global = 0.0;
    double per_class_sum = 0.0;
    for (int y = 0; y < C; ++y) {
        double lo = 2.0, hi = -1.0;
        for (int a = 0; a < G; ++a) {
            const auto k = counts.at(y, a);
            if (counts.total[k] == 0) {
                throw std::invalid_argument("compute_eod: zero-total cell (" + std::to_string(y) +
                                            ", " + std::to_string(a) + ")");
            }
            const double p = static_cast<double>(counts.correct[k]) /
                             static_cast<double>(counts.total[k]);
            r.rates[k] = p;
            lo = std::min(lo, p);
            hi = std::max(hi, p);
        }
        // sup over group pairs within class y; 0 when no pair exists
        const double gap = G >= 2 ? hi - lo : 0.0;
        sup_global = std::max(sup_global, gap);
        per_class_sum += gap;
    }
    r.eod_m = 100.0 * sup_global;
    r.eod_a = 100.0 * per_class_sum / static_cast<double>(C);
    return r;
}

double accuracy_percent(const CellCounts& counts) {
    std::int64_t correct = 0, total = 0;
    for (std::size_t k = 0; k < counts.total.size(); ++k) {
        correct += counts.correct[k];
        total += counts.total[k];
    }
    if (total == 0) throw std::invalid_argument("accuracy_percent: empty counts");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    if (v.size() > 1) {
        double ss = 0.0;
        for (const double x : v) ss += (x - mean) * (x - mean);
        sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
}

}  // namespace

EvalReport aggregate_seed_results(std::vector<SeedResult> per_seed) {
    if (per_seed.empty()) throw std::invalid_argument("aggregate_seed_results: no seeds");
    EvalReport rep;
    rep.per_seed = std::move(per_seed);
    std::vector<double> acc, em, ea;
    for (const auto& s : rep.per_seed) {
        acc.push_back(s.accuracy);
        em.push_back(s.eod_m);
        ea.push_back(s.eod_a);
    }
    mean_std(acc, rep.acc_mean, rep.acc_std);
    mean_std(em, rep.eodm_mean, rep.eodm_std);
    mean_std(ea, rep.eoda_mean, rep.eoda_std);
    if (!rep.per_seed.front().rates.empty()) {
        rep.mean_rates.assign(rep.per_seed.front().rates.size(), 0.0);
        for (const auto& s : rep.per_seed) {
            for (std::size_t k = 0; k < rep.mean_rates.size(); ++k) {
                rep.mean_rates[k] += s.rates[k];
            }
        }
        for (auto& v : rep.mean_rates) v /= static_cast<double>(rep.per_seed.size());
    }
    return rep;
}

EvalReport eval_distilled(const SyntheticSet& s, const GroupedDataset& test,
                          const EvalOptions& opts) {
    if (opts.n_seeds == 0) throw std::invalid_argument("eval_distilled: n_seeds must be >= 1");
    if (test.split != Split::test) {
        throw std::invalid_argument("eval_distilled: need a test-tagged dataset");
    }
    test.validate();  // enforces the balanced-test law
    // balanced split also means no empty cells
    {
        std::vector<std::int64_t> totals(static_cast<std::size_t>(test.num_classes) *
                                         test.num_groups, 0);
        for (std::size_t i = 0; i < test.size(); ++i) {
            totals[static_cast<std::size_t>(test.labels[i]) * test.num_groups + test.groups[i]]++;
        }
        for (std::size_t k = 0; k < totals.size(); ++k) {
            if (totals[k] == 0) {
                throw std::invalid_argument("eval_distilled: empty (class, group) test cell");
            }
        }
    }

    std::vector<SeedResult> results;
    results.reserve(opts.n_seeds);
    for (std::size_t k = 0; k < opts.n_seeds; ++k) {
        const std::uint64_t seed = derive_seed(opts.base_seed, 0xEA10000ull + k);
        OptimizerConfig opt = opts.opt;
        opt.seed = seed;
        NetworkParams p = init_network(opts.arch, seed);
        p = train(std::move(p), s.view(), opt);
        const auto counts = count_cells(p, test);
        auto eod = compute_eod(counts);
        results.push_back(SeedResult{seed, accuracy_percent(counts), eod.eod_m, eod.eod_a,
                                     std::move(eod.rates)});
    }
    return aggregate_seed_results(std::move(results));
}

AuditSummary residual_audit(const NetworkParams& trained, const GroupedDataset& real,
                            StatisticKind kind) {
    const auto stats = subgroup_stats(trained, real, kind);
    const auto van = mixture_target(stats);
    const auto fair = reweight_target(stats);  // uniform group mean: the fairdd-analog target
    BarycenterDiscrepancy sq;                  // sqnorm, identity Q
    const auto cobra = barycenter_target(stats, sq);

    AuditSummary out;
    auto sq_maxres = [&](const std::vector<double>& m, const std::vector<SubgroupCell>& cells) {
        double worst = 0.0;
        for (const auto& c : cells) {
            double s = 0.0;
            for (std::size_t j = 0; j < m.size(); ++j) {
                const double diff = c.phi[j] - m[j];
                s += diff * diff;
            }
            worst = std::max(worst, s);
        }
        return worst;  // squared norm, Table-layout convention
    };

    const std::size_t C = stats.by_class.size();
    for (std::size_t y = 0; y < C; ++y) {
        AuditRow row;
        row.cls = static_cast<int>(y);
        row.maxres_van = sq_maxres(van.m[y], stats.by_class[y]);
        row.maxres_fairdd = sq_maxres(fair.m[y], stats.by_class[y]);
        row.maxres_cobra = sq_maxres(cobra.m[y], stats.by_class[y]);
        out.mean_van += row.maxres_van;
        out.mean_fairdd += row.maxres_fairdd;
        out.mean_cobra += row.maxres_cobra;
        out.worst_van = std::max(out.worst_van, row.maxres_van);
        out.worst_fairdd = std::max(out.worst_fairdd, row.maxres_fairdd);
        out.worst_cobra = std::max(out.worst_cobra, row.maxres_cobra);
        out.rows.push_back(row);
    }
    out.mean_van /= static_cast<double>(C);
    out.mean_fairdd /= static_cast<double>(C);
    out.mean_cobra /= static_cast<double>(C);
    return out;
}

}  // namespace fairdistill
