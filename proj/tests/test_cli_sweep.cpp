#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cli.hpp"
#include "fairdistill/config_io.hpp"
#include "fairdistill/csv.hpp"
#include "fairdistill/datagen.hpp"
#include "fairdistill/sweep.hpp"

using namespace fairdistill;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

SweepSpec tiny_sweep_spec() {
    SweepSpec spec;
    spec.kind = SweepKind::skew;
    spec.values = {0.6, 0.85};
    spec.objectives = {Objective::dm, Objective::dc};
    spec.modes = {TargetMode::vanilla, TargetMode::fairdd, TargetMode::cobra};
    spec.seeds = 2;
    spec.bias.num_classes = 2;
    spec.bias.num_groups = 2;
    spec.bias.dim = 6;
    spec.bias.separation = 1.0;
    spec.bias.per_class = 30;
    spec.bias.seed = 3;
    spec.test_per_cell = 20;
    spec.distill.iterations = 5;
    spec.distill.synthetic_lr = 0.2;
    spec.distill.arch = Architecture{{6, 6, 2}};
    spec.ipc = 2;
    spec.eval.arch = Architecture{{6, 6, 2}};
    spec.eval.opt.epochs = 30;
    spec.eval.n_seeds = 1;
    spec.per_cell_audit = true;
    spec.workers = 2;
    return spec;
}

}  // namespace

TEST_SUITE("sweep") {
    TEST_CASE("grid x objectives x modes x seeds cells, one row each") {
        // 2 values * 2 objectives * 3 modes * 2 seeds = 24 rows
        const auto spec = tiny_sweep_spec();
        const auto records = run_sweep(spec);
        CHECK(records.size() == 24);
        const std::string csv = sweep_long_csv(spec, records);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);  // header + 24
        for (const auto& r : records) CHECK(r.ok);
    }

    TEST_CASE("identical spec reruns give byte-identical aggregated CSVs") {
        const auto spec = tiny_sweep_spec();
        const auto a = run_sweep(spec);
        const auto b = run_sweep(spec);
        CHECK(sweep_agg_csv(spec, a) == sweep_agg_csv(spec, b));
        // long rows also agree apart from the wall-time column
        auto strip_wall = [](std::string csv) {
            std::string out;
            std::size_t start = 0;
            while (start < csv.size()) {
                const std::size_t end = csv.find('\n', start);
                std::string line = csv.substr(start, end - start);
                const std::size_t last = line.rfind(',');
                const std::size_t prev = line.rfind(',', last - 1);
                out += line.substr(0, prev) + line.substr(last) + '\n';
                start = end + 1;
            }
            return out;
        };
        CHECK(strip_wall(sweep_long_csv(spec, a)) == strip_wall(sweep_long_csv(spec, b)));
        // worker count must not change results either
        auto serial = spec;
        serial.workers = 1;
        const auto c = run_sweep(serial);
        CHECK(sweep_agg_csv(spec, c) == sweep_agg_csv(spec, a));
        CHECK(strip_wall(sweep_long_csv(spec, c)) == strip_wall(sweep_long_csv(spec, a)));
    }

    TEST_CASE("aggregate means equal the arithmetic mean of the long rows") {
        auto spec = tiny_sweep_spec();
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::vanilla};
        spec.seeds = 3;
        const auto records = run_sweep(spec);
        for (const auto& value : spec.values) {
            double mean = 0.0;
            std::size_t n = 0;
            for (const auto& r : records) {
                if (r.value == value) {
                    mean += r.eval.eod_m;
                    ++n;
                }
            }
            mean /= static_cast<double>(n);
            const std::string agg = sweep_agg_csv(spec, records);
            CHECK(agg.find(format_double(mean)) != std::string::npos);
        }
    }

    TEST_CASE("a failing cell becomes an error row and the sweep continues") {
        auto spec = tiny_sweep_spec();
        spec.kind = SweepKind::ipc;
        spec.values = {1.0, 1000.0};  // 1000 > per-class count: real-sample init fails
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::vanilla};
        spec.seeds = 1;
        const auto records = run_sweep(spec);
        CHECK(records.size() == 2);
        CHECK(records[0].ok);
        CHECK_FALSE(records[1].ok);
        CHECK(records[1].error.find("ipc") != std::string::npos);
        const std::string csv = sweep_long_csv(spec, records);
        CHECK(csv.find("nan") != std::string::npos);
    }

    TEST_CASE("theorem-audit sweeps report counts per group size") {
        SweepSpec spec;
        spec.kind = SweepKind::theorem_audit;
        spec.values = {2.0, 4.0};
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::cobra};
        spec.seeds = 1;
        spec.bias.dim = 5;
        spec.audit_instances = 500;
        const auto records = run_sweep(spec);
        CHECK(records.size() == 2);
        for (const auto& r : records) {
            CHECK(r.theorem.instances == 500);
            CHECK(r.theorem.violations == 0);
        }
    }

    TEST_CASE("mtt objectives run through the harness") {
        auto spec = tiny_sweep_spec();
        spec.values = {0.8};
        spec.objectives = {Objective::mtt};
        spec.modes = {TargetMode::vanilla, TargetMode::cobra};
        spec.seeds = 1;
        spec.ipc = 1;
        spec.distill.iterations = 3;
        spec.distill.synthetic_lr = 0.2;
        spec.distill.mtt.student_steps = 1;
        spec.distill.mtt.student_lr = 0.05;
        spec.per_cell_audit = false;
        const auto records = run_sweep(spec);
        CHECK(records.size() == 2);
        for (const auto& r : records) {
            CHECK(r.ok);
        }
        // fairdd has no mtt semantics: the cell must fail, not abort the sweep
        spec.modes = {TargetMode::fairdd};
        const auto bad = run_sweep(spec);
        CHECK(bad.size() == 1);
        CHECK_FALSE(bad[0].ok);
    }

    TEST_CASE("noise and partial sweeps transform the training set") {
        auto spec = tiny_sweep_spec();
        spec.kind = SweepKind::noise;
        spec.values = {0.0, 0.2};
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::cobra};
        spec.seeds = 1;
        auto records = run_sweep(spec);
        CHECK(records.size() == 2);
        for (const auto& r : records) CHECK(r.ok);

        spec.kind = SweepKind::partial;
        spec.values = {0.5};
        records = run_sweep(spec);
        CHECK(records.size() == 1);
        CHECK(records[0].ok);
    }

    TEST_CASE("gap sweeps drive corruption severity on image data") {
        auto spec = tiny_sweep_spec();
        spec.kind = SweepKind::gap;
        spec.values = {0.0, 3.0};
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::vanilla};
        spec.seeds = 1;
        spec.bias.kind = DataKind::colored_foreground;
        spec.bias.img_h = 4;
        spec.bias.img_w = 4;
        spec.bias.dim = 48;
        spec.distill.arch = Architecture{{48, 8, 2}};
        spec.eval.arch = Architecture{{48, 8, 2}};
        const auto records = run_sweep(spec);
        CHECK(records.size() == 2);
        for (const auto& r : records) CHECK(r.ok);
    }

    TEST_CASE("cell config echoes round-trip through the config format") {
        auto spec = tiny_sweep_spec();
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::cobra};
        spec.seeds = 1;
        const auto records = run_sweep(spec);
        for (const auto& r : records) {
            REQUIRE(!r.config_echo.empty());
            const auto parsed = distill_config_from_json(r.config_echo);
            CHECK(distill_config_to_json(parsed) == r.config_echo);
            CHECK(parsed.target.mode == TargetMode::cobra);
        }
    }

    TEST_CASE("discrepancy sweeps label rows by the discrepancy") {
        auto spec = tiny_sweep_spec();
        spec.kind = SweepKind::discrepancy;
        spec.labels = {"sqnorm", "l1", "huber"};
        spec.objectives = {Objective::dm};
        spec.modes = {TargetMode::cobra};
        spec.seeds = 1;
        const auto records = run_sweep(spec);
        CHECK(records.size() == 3);
        const std::string csv = sweep_long_csv(spec, records);
        CHECK(csv.find("l1") != std::string::npos);
        CHECK(csv.find("huber") != std::string::npos);
    }
}

TEST_SUITE("config") {
    TEST_CASE("sweep spec round-trips through JSON") {
        const auto spec = tiny_sweep_spec();
        const std::string dumped = sweep_spec_to_json(spec);
        const auto back = sweep_spec_from_json(dumped);
        CHECK(sweep_spec_to_json(back) == dumped);
        CHECK(back.values == spec.values);
        CHECK(back.seeds == spec.seeds);
        CHECK(back.bias.separation == spec.bias.separation);
    }

    TEST_CASE("schema violations carry the offending key path") {
        try {
            (void)bias_config_from_json(R"({"skew": "high"})", "bias");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.key).find("bias.skew") != std::string::npos);
        }
        try {
            (void)distill_config_from_json(R"({"objective": "???"})", "distill");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.key) == "distill.objective");
        }
    }
}

TEST_SUITE("cli") {
    TEST_CASE("missing config file exits 2 and names the path") {
        CHECK(run_cli({"gen", "--config", "/tmp/definitely_missing_cfg.json"}) == 2);
    }

    TEST_CASE("unknown subcommand exits 2") {
        CHECK(run_cli({"frobnicate"}) == 2);
    }

    TEST_CASE("gen -> distill -> eval -> audit chain through files") {
        const std::string gen_cfg = tmp_path("fd_gen_cfg.json");
        const std::string train = tmp_path("fd_train.fds");
        const std::string test = tmp_path("fd_test.fds");
        write_file(gen_cfg, R"({
            "bias": {"num_classes": 2, "num_groups": 2, "dim": 6, "skew": 0.8,
                      "separation": 1.0, "per_class": 40, "seed": 3},
            "test_per_cell": 10,
            "out": ")" + train + R"(",
            "test_out": ")" + test + R"("})");
        CHECK(run_cli({"gen", "--config", gen_cfg}) == 0);
        CHECK(load_dataset(train).size() == 80);
        CHECK(load_dataset(test).split == Split::test);

        const std::string distill_cfg = tmp_path("fd_distill_cfg.json");
        const std::string syn = tmp_path("fd_syn.fds");
        write_file(distill_cfg, R"({
            "train": ")" + train + R"(",
            "ipc": 2,
            "distill": {"objective": "dm", "mode": "cobra", "iterations": 5,
                         "synthetic_lr": 0.2, "arch": {"widths": [6, 6, 2]}},
            "out": ")" + syn + R"("})");
        CHECK(run_cli({"distill", "--config", distill_cfg}) == 0);
        CHECK(std::filesystem::exists(syn));
        CHECK(std::filesystem::exists(syn + ".json"));

        const std::string eval_cfg = tmp_path("fd_eval_cfg.json");
        const std::string eval_csv = tmp_path("fd_eval.csv");
        write_file(eval_cfg, R"({
            "synthetic": ")" + syn + R"(",
            "test": ")" + test + R"(",
            "eval": {"arch": {"widths": [6, 6, 2]}, "opt": {"epochs": 20}, "n_seeds": 3},
            "meta": {"objective": "dm", "mode": "cobra", "ipc": 2},
            "out": ")" + eval_csv + R"("})");
        CHECK(run_cli({"eval", "--config", eval_cfg}) == 0);
        // one row per seed plus header
        std::ifstream is(eval_csv);
        std::string line;
        std::size_t lines = 0;
        while (std::getline(is, line)) ++lines;
        CHECK(lines == 4);
        CHECK(std::filesystem::exists(agg_path_for(eval_csv)));

        const std::string audit_cfg = tmp_path("fd_audit_cfg.json");
        const std::string audit_csv = tmp_path("fd_audit.csv");
        write_file(audit_cfg, R"({
            "synthetic": ")" + syn + R"(",
            "train": ")" + train + R"(",
            "objective": "dm",
            "eval": {"arch": {"widths": [6, 6, 2]}, "opt": {"epochs": 20}},
            "out": ")" + audit_csv + R"("})");
        CHECK(run_cli({"audit", "--config", audit_cfg}) == 0);
        std::ifstream as(audit_csv);
        std::getline(as, line);
        CHECK(line == "objective,dataset,vanilla_mean,vanilla_worst,fairdd_mean,fairdd_worst,"
                      "cobra_mean,cobra_worst");
    }

    TEST_CASE("verify with tiny budgets exits 0 and reports zero violations") {
        const std::string cfg = tmp_path("fd_verify_cfg.json");
        write_file(cfg, R"({"theorem_instances": 200, "bound_instances": 200,
                            "sqnorm_instances": 20, "l1_instances": 20, "l2_instances": 2,
                            "huber_instances": 10, "cosine_instances": 10,
                            "gradient_instances": 3, "eod_instances": 50})");
        CHECK(run_cli({"verify", "--config", cfg}) == 0);
    }

    TEST_CASE("config schema violation exits 2") {
        const std::string cfg = tmp_path("fd_bad_cfg.json");
        write_file(cfg, R"({"bias": {"skew": 42}})");
        CHECK(run_cli({"gen", "--config", cfg}) == 2);
    }
}
