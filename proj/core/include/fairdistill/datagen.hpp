#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "fairdistill/dataset.hpp"

namespace fairdistill {

enum class TintMode { foreground, background };

// Group-biased isotropic-Gaussian features. Class anchors are placed pairwise
// 6 sigma apart on the first C axes; group offsets are unit basis vectors on
// the next G axes, so `separation` is the exact scale of the per-group mean
// shift within a class. Requires dim >= C + G.
GroupedDataset gen_gaussian_groups(const BiasConfig& cfg);

// Tiny 3xHxW images: a fixed binary shape mask per class, a fixed palette
// color per group tinting the masked (foreground) or unmasked (background)
// region. Requires G <= palette size (10).
GroupedDataset gen_colored_patterns(const BiasConfig& cfg, TintMode mode);

// Dispatch on cfg.kind.
GroupedDataset generate(const BiasConfig& cfg);

// Group-balanced test split: exactly n_per_cell samples for every (y, a).
GroupedDataset make_balanced_test(const BiasConfig& cfg, std::size_t n_per_cell);

// Hierarchical corruption severity alpha in {0..4}, applied cumulatively to
// samples of the target groups:
//   >=1 channel shuffle, >=2 diagonal line, >=3 clipped noise + second line,
//   >=4 rotate 270 degrees + intensity inversion + noise.
// alpha=0 returns the input unchanged. Images only; alpha>=4 needs square ones.
GroupedDataset apply_corruption(const GroupedDataset& ds, int alpha,
                                const std::set<int>& target_groups, std::uint64_t seed);

// Adds gamma * v_a to every sample of group a, where v_a is a fixed unit
// offset per group (basis direction e_{C+a} for features, a normalized
// channel indicator for images). Labels and groups are untouched.
GroupedDataset apply_semantic_offset(const GroupedDataset& ds, double gamma);

// The unit offset v_a used by apply_semantic_offset.
std::vector<double> group_offset_direction(const GroupedDataset& ds, int group);

// Replaces the group of exactly floor(rho*N) uniformly chosen samples with a
// uniform draw over the other G-1 groups. Errors when G == 1 and rho > 0.
GroupedDataset corrupt_group_labels(const GroupedDataset& ds, double rho, std::uint64_t seed);

// Clears group_known on a uniform (1 - known_fraction) subset.
GroupedDataset mask_group_labels(const GroupedDataset& ds, double known_fraction,
                                 std::uint64_t seed);

// Lloyd k-means on raw flattened samples (<=100 iterations, relative inertia
// stop 1e-6, empty clusters reseeded from the farthest point). Each cluster
// votes with the majority group of its known-label members (global known
// majority when it has none); unknown samples inherit the vote, known labels
// are never altered.
GroupedDataset impute_groups_kmeans(const GroupedDataset& ds, int k, std::uint64_t seed);

// Per-class group assignment: round(skew * n) samples to the majority group,
// remainder split evenly over the others. Exposed for tests.
std::vector<std::size_t> group_cell_counts(std::size_t n_class, int num_groups, double skew,
                                           int majority_group);

// Majority group of class y (y mod G).
int majority_group_of_class(int y, int num_groups);

// The fixed tint palette used by gen_colored_patterns.
std::size_t palette_size();

}  // namespace fairdistill
