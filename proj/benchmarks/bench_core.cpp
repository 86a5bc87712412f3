#include <benchmark/benchmark.h>

#include "fairdistill/datagen.hpp"
#include "fairdistill/distill.hpp"
#include "fairdistill/eval.hpp"
#include "fairdistill/rng.hpp"
#include "fairdistill/targets.hpp"

using namespace fairdistill;

namespace {

std::vector<std::vector<double>> random_points(std::size_t groups, std::size_t dim) {
    Rng rng(42);
    std::vector<std::vector<double>> pts(groups, std::vector<double>(dim));
    for (auto& p : pts) {
        for (auto& v : p) v = rng.gauss();
    }
    return pts;
}

GroupedDataset bench_dataset(std::size_t per_class) {
    BiasConfig cfg;
    cfg.num_classes = 4;
    cfg.num_groups = 4;
    cfg.dim = 16;
    cfg.skew = 0.8;
    cfg.separation = 2.0;
    cfg.per_class = per_class;
    cfg.seed = 1;
    return gen_gaussian_groups(cfg);
}

}  // namespace

static void BM_BarycenterSolve(benchmark::State& state, const char* kind) {
    const auto pts = random_points(8, static_cast<std::size_t>(state.range(0)));
    auto d = BarycenterDiscrepancy::parse(kind);
    const auto init = uniform_mean(pts);
    for (auto _ : state) {
        auto r = solve_barycenter(pts, d, init);
        benchmark::DoNotOptimize(r.m);
    }
}
BENCHMARK_CAPTURE(BM_BarycenterSolve, sqnorm, "sqnorm")->Arg(16)->Arg(64);
BENCHMARK_CAPTURE(BM_BarycenterSolve, l1, "l1")->Arg(16)->Arg(64);
BENCHMARK_CAPTURE(BM_BarycenterSolve, l2, "l2")->Arg(16)->Arg(64);
BENCHMARK_CAPTURE(BM_BarycenterSolve, huber, "huber")->Arg(16)->Arg(64);
BENCHMARK_CAPTURE(BM_BarycenterSolve, linf, "linf")->Arg(16)->Arg(64);
BENCHMARK_CAPTURE(BM_BarycenterSolve, cosine, "cosine")->Arg(16)->Arg(64);

static void BM_LossAndGrads(benchmark::State& state) {
    const auto ds = bench_dataset(static_cast<std::size_t>(state.range(0)));
    const auto p = init_network(Architecture{{16, 32, 4}}, 3);
    for (auto _ : state) {
        auto lg = loss_and_grads(p, batch_of(ds));
        benchmark::DoNotOptimize(lg.loss);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_LossAndGrads)->Arg(64)->Arg(512);

static void BM_ParamGradInputPullback(benchmark::State& state) {
    const auto ds = bench_dataset(16);
    const auto p = init_network(Architecture{{16, 32, 4}}, 3);
    std::vector<double> cot(p.theta.size());
    Rng rng(5);
    for (auto& v : cot) v = rng.gauss();
    for (auto _ : state) {
        auto g = param_grad_input_pullback(p, ds.sample(0), ds.labels[0], cot);
        benchmark::DoNotOptimize(g);
    }
}
BENCHMARK(BM_ParamGradInputPullback);

static void BM_SubgroupStats(benchmark::State& state) {
    const auto ds = bench_dataset(static_cast<std::size_t>(state.range(0)));
    const auto p = init_network(Architecture{{16, 32, 4}}, 3);
    for (auto _ : state) {
        auto stats = subgroup_stats(p, ds, StatisticKind::embedding);
        benchmark::DoNotOptimize(stats.dim);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_SubgroupStats)->Arg(128)->Arg(512);

static void BM_DistillDmIteration(benchmark::State& state) {
    const auto ds = bench_dataset(256);
    DistillConfig cfg;
    cfg.objective = Objective::dm;
    cfg.target.mode = TargetMode::cobra;
    cfg.arch = Architecture{{16, 32, 4}};
    cfg.iterations = 1;
    cfg.synthetic_lr = 1.0;
    const auto s0 = init_synthetic(ds, 10, InitPolicy::real_sample, 1);
    for (auto _ : state) {
        auto s = distill_dm(ds, s0, cfg);
        benchmark::DoNotOptimize(s.data);
    }
}
BENCHMARK(BM_DistillDmIteration);

static void BM_TheoremAudit(benchmark::State& state) {
    for (auto _ : state) {
        auto counts = theorem_audit(static_cast<std::size_t>(state.range(0)), 6, 4, 11);
        benchmark::DoNotOptimize(counts.violations);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TheoremAudit)->Arg(1000)->Arg(10000);

static void BM_ComputeEod(benchmark::State& state) {
    CellCounts c;
    c.num_classes = 10;
    c.num_groups = 10;
    Rng rng(2);
    for (int k = 0; k < 100; ++k) {
        c.total.push_back(100);
        c.correct.push_back(static_cast<std::int64_t>(rng.below(101)));
    }
    for (auto _ : state) {
        auto eod = compute_eod(c);
        benchmark::DoNotOptimize(eod.eod_m);
    }
}
BENCHMARK(BM_ComputeEod);

BENCHMARK_MAIN();
