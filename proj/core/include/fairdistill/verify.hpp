#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fairdistill {

// Randomized property suites behind the `verify` subcommand and the
// acceptance harness: theorem and bound audits, solver-vs-oracle checks,
// finite-difference gradient checks, brute-force EOD re-evaluation.
struct VerifyConfig {
    std::size_t theorem_instances = 10000;
    std::size_t bound_instances = 10000;
    std::size_t sqnorm_instances = 1000;
    std::size_t l1_instances = 1000;
    std::size_t l2_instances = 50;
    std::size_t huber_instances = 200;
    std::size_t cosine_instances = 200;
    std::size_t gradient_instances = 100;
    std::size_t eod_instances = 1000;
    std::uint64_t seed = 0;
};

struct SuiteResult {
    std::string name;
    std::size_t checks = 0;
    std::size_t violations = 0;
    double worst = 0.0;  // suite-specific worst error/slack observed
    std::string detail;
};

SuiteResult verify_theorem(std::size_t instances, std::uint64_t seed);
SuiteResult verify_bound(std::size_t instances, std::uint64_t seed);
// Iterative sqnorm solver vs the arithmetic mean, inits drawn from a pool of
// 50 random start directions; tolerance 1e-6.
SuiteResult verify_sqnorm_solver(std::size_t instances, std::uint64_t seed);
// Iterative l1 solve vs the coordinate-median closed form (odd group counts,
// where the minimizer is unique); tolerance 1e-4.
SuiteResult verify_l1_solver(std::size_t instances, std::uint64_t seed);
// Weiszfeld geometric median vs a dense 2-D grid (step 1e-3); tolerance 2e-3.
SuiteResult verify_l2_solver(std::size_t instances, std::uint64_t seed);
// Huber with delta above every residual magnitude vs the mean; tolerance 1e-4.
SuiteResult verify_huber_solver(std::size_t instances, std::uint64_t seed);
// Cosine scale invariance plus solver vs the normalized-mean direction.
SuiteResult verify_cosine_solver(std::size_t instances, std::uint64_t seed);
// Parameter and input gradients vs central finite differences (eps 1e-4,
// relative error 1e-4); nets redrawn when any pre-activation sits near a kink.
SuiteResult verify_gradients(std::size_t instances, std::uint64_t seed);
// DC pixel gradient vs central finite differences on a 2-class, d=4, IPC=1
// micro instance; relative error 1e-3.
SuiteResult verify_dc_pixel_gradient(std::uint64_t seed);
// compute_eod vs brute-force pairwise definition evaluation, exact equality.
SuiteResult verify_eod(std::size_t instances, std::uint64_t seed);

std::vector<SuiteResult> run_verification(const VerifyConfig& cfg);
std::size_t total_violations(const std::vector<SuiteResult>& suites);

}  // namespace fairdistill
