#include "fairdistill/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

// Class anchors sit on the first C axes at pairwise distance 6 (sigma = 1),
// so full-data classifiers are near-perfect and distillation drives the gaps.
constexpr double kAnchorScale = 4.242640687119285;  // 6 / sqrt(2)
constexpr double kPixelNoiseSigma = 0.02;
constexpr double kCorruptionNoiseSigma = 0.1;

// components kept strictly inside (0, 1): boundary values would let clipped
// corruption noise restore an original pixel exactly and break the
// severity-nesting law
constexpr double kPalette[10][3] = {
    {0.9, 0.1, 0.1}, {0.1, 0.9, 0.1},  {0.1, 0.1, 0.9},   {0.9, 0.9, 0.1},
    {0.9, 0.1, 0.9}, {0.1, 0.9, 0.9},  {0.9, 0.45, 0.1},  {0.45, 0.1, 0.9},
    {0.9, 0.9, 0.9}, {0.45, 0.45, 0.45},
};
constexpr double kNeutral = 0.5;

std::size_t floor_count(double x) {
    // tolerant floor so that e.g. 0.1*100 == 10 despite fp representation
    return static_cast<std::size_t>(std::floor(x + 1e-9));
}

// Fixed per-class binary shape mask, independent of the dataset seed.
std::vector<std::uint8_t> class_shape_mask(int cls, int h, int w) {
    Rng rng(derive_seed(0xC1A55u, static_cast<std::uint64_t>(cls)));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
    for (auto& m : mask) m = rng.uniform01() < 0.5 ? 1 : 0;
    const auto on = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    if (on == 0) mask[0] = 1;
    if (on == mask.size()) mask[0] = 0;
    return mask;
}

void append_sample(GroupedDataset& ds, const std::vector<double>& x, int y, int a) {
    ds.data.insert(ds.data.end(), x.begin(), x.end());
    ds.labels.push_back(y);
    ds.groups.push_back(a);
    ds.group_known.push_back(1);
}

GroupedDataset empty_like(const BiasConfig& cfg, Split split) {
    GroupedDataset ds;
    ds.num_classes = cfg.num_classes;
    ds.num_groups = cfg.num_groups;
    ds.dim = cfg.dim;
    ds.split = split;
    if (cfg.kind != DataKind::gaussian) {
        ds.image = ImageShape{3, cfg.img_h, cfg.img_w};
    }
    return ds;
}

std::vector<double> gaussian_sample(const BiasConfig& cfg, int y, int a, Rng& rng) {
    std::vector<double> x(cfg.dim);
    for (auto& v : x) v = rng.gauss();
    x[static_cast<std::size_t>(y)] += kAnchorScale;
    x[static_cast<std::size_t>(cfg.num_classes + a)] += cfg.separation;
    return x;
}

std::vector<double> colored_sample(const BiasConfig& cfg, TintMode mode,
                                   const std::vector<std::uint8_t>& mask, int a, Rng& rng) {
    const int h = cfg.img_h, w = cfg.img_w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> x(cfg.dim);
    const double* tint = kPalette[static_cast<std::size_t>(a)];
    for (std::size_t p = 0; p < plane; ++p) {
        const bool tinted = (mode == TintMode::foreground) == (mask[p] != 0);
        for (int c = 0; c < 3; ++c) {
            double v = tinted ? tint[c] : kNeutral;
            if (tinted) {
                v = std::clamp(v + rng.gauss(0.0, kPixelNoiseSigma), 0.0, 1.0);
            }
            x[static_cast<std::size_t>(c) * plane + p] = v;
        }
    }
    return x;
}

template <class SampleFn>
GroupedDataset generate_skewed(const BiasConfig& cfg, Split split, SampleFn&& make_sample) {
    GroupedDataset ds = empty_like(cfg, split);
    ds.data.reserve(cfg.per_class * cfg.num_classes * cfg.dim);
    Rng rng(cfg.seed);
    for (int y = 0; y < cfg.num_classes; ++y) {
        const auto counts = group_cell_counts(cfg.per_class, cfg.num_groups, cfg.skew,
                                              majority_group_of_class(y, cfg.num_groups));
        for (int a = 0; a < cfg.num_groups; ++a) {
            for (std::size_t i = 0; i < counts[static_cast<std::size_t>(a)]; ++i) {
                append_sample(ds, make_sample(y, a, rng), y, a);
            }
        }
    }
    ds.validate();
    return ds;
}

void draw_diagonal(std::vector<double>& x, const ImageShape& img, bool anti) {
    const int h = img.height, w = img.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int steps = std::max(h, w);
    for (int i = 0; i < steps; ++i) {
        const int r = std::min(h - 1, i * h / steps);
        int c = std::min(w - 1, i * w / steps);
        if (anti) c = w - 1 - c;
        for (int ch = 0; ch < 3; ++ch) {
            x[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(r) * w + c] = 1.0;
        }
    }
}

void add_clipped_noise(std::vector<double>& x, Rng& rng) {
    for (auto& v : x) v = std::clamp(v + rng.gauss(0.0, kCorruptionNoiseSigma), 0.0, 1.0);
}

void rotate270(std::vector<double>& x, const ImageShape& img) {
    const int h = img.height, w = img.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(x.size());
    // 270 degrees counterclockwise: out(r, c) = in(c, w-1-r), square images
    for (int ch = 0; ch < 3; ++ch) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                out[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(r) * w + c] =
                    x[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(c) * w +
                      (w - 1 - r)];
            }
        }
    }
    x = std::move(out);
}

}  // namespace

int majority_group_of_class(int y, int num_groups) { return y % num_groups; }

std::size_t palette_size() { return 10; }

std::vector<std::size_t> group_cell_counts(std::size_t n_class, int num_groups, double skew,
                                           int majority_group) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_groups), 0);
    if (num_groups == 1) {
        counts[0] = n_class;
        return counts;
    }
    std::size_t maj = static_cast<std::size_t>(std::llround(skew * static_cast<double>(n_class)));
    maj = std::min(maj, n_class);
    const std::size_t rest = n_class - maj;
    const std::size_t others = static_cast<std::size_t>(num_groups) - 1;
    const std::size_t base = rest / others;
    const std::size_t extra = rest % others;
    counts[static_cast<std::size_t>(majority_group)] = maj;
    std::size_t k = 0;
    for (int a = 0; a < num_groups; ++a) {
        if (a == majority_group) continue;
        counts[static_cast<std::size_t>(a)] = base + (k < extra ? 1 : 0);
        ++k;
    }
    return counts;
}

GroupedDataset gen_gaussian_groups(const BiasConfig& cfg) {
    cfg.validate();
    if (cfg.kind != DataKind::gaussian) {
        throw std::invalid_argument("gen_gaussian_groups: config kind is not gaussian");
    }
    if (cfg.dim < static_cast<std::size_t>(cfg.num_classes + cfg.num_groups)) {
        throw std::invalid_argument("gen_gaussian_groups: dim must be >= C + G");
    }
    if (cfg.per_class < static_cast<std::size_t>(cfg.num_groups)) {
        throw std::invalid_argument("gen_gaussian_groups: per_class must be >= G");
    }
    return generate_skewed(cfg, Split::train, [&](int y, int a, Rng& rng) {
        return gaussian_sample(cfg, y, a, rng);
    });
}

GroupedDataset gen_colored_patterns(const BiasConfig& cfg, TintMode mode) {
    cfg.validate();
    if (cfg.kind == DataKind::gaussian) {
        throw std::invalid_argument("gen_colored_patterns: config kind is not colored");
    }
    if (static_cast<std::size_t>(cfg.num_groups) > palette_size()) {
        throw std::invalid_argument("gen_colored_patterns: more groups than palette colors");
    }
    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(static_cast<std::size_t>(cfg.num_classes));
    for (int y = 0; y < cfg.num_classes; ++y) {
        masks.push_back(class_shape_mask(y, cfg.img_h, cfg.img_w));
    }
    return generate_skewed(cfg, Split::train, [&](int y, int a, Rng& rng) {
        return colored_sample(cfg, mode, masks[static_cast<std::size_t>(y)], a, rng);
    });
}

GroupedDataset generate(const BiasConfig& cfg) {
    switch (cfg.kind) {
        case DataKind::gaussian:
            return gen_gaussian_groups(cfg);
        case DataKind::colored_foreground:
            return gen_colored_patterns(cfg, TintMode::foreground);
        case DataKind::colored_background:
            return gen_colored_patterns(cfg, TintMode::background);
    }
    throw std::invalid_argument("generate: unknown data kind");
}

GroupedDataset make_balanced_test(const BiasConfig& cfg, std::size_t n_per_cell) {
    cfg.validate();
    if (n_per_cell == 0) throw std::invalid_argument("make_balanced_test: n_per_cell must be >= 1");
    if (cfg.kind == DataKind::gaussian &&
        cfg.dim < static_cast<std::size_t>(cfg.num_classes + cfg.num_groups)) {
        throw std::invalid_argument("make_balanced_test: dim must be >= C + G");
    }

    std::vector<std::vector<std::uint8_t>> masks;
    if (cfg.kind != DataKind::gaussian) {
        if (static_cast<std::size_t>(cfg.num_groups) > palette_size()) {
            throw std::invalid_argument("make_balanced_test: more groups than palette colors");
        }
        for (int y = 0; y < cfg.num_classes; ++y) {
            masks.push_back(class_shape_mask(y, cfg.img_h, cfg.img_w));
        }
    }

    GroupedDataset ds = empty_like(cfg, Split::test);
    Rng rng(derive_seed(cfg.seed, 0x7e57u));
    for (int y = 0; y < cfg.num_classes; ++y) {
        for (int a = 0; a < cfg.num_groups; ++a) {
            for (std::size_t i = 0; i < n_per_cell; ++i) {
                std::vector<double> x;
                switch (cfg.kind) {
                    case DataKind::gaussian:
                        x = gaussian_sample(cfg, y, a, rng);
                        break;
                    case DataKind::colored_foreground:
                        x = colored_sample(cfg, TintMode::foreground,
                                           masks[static_cast<std::size_t>(y)], a, rng);
                        break;
                    case DataKind::colored_background:
                        x = colored_sample(cfg, TintMode::background,
                                           masks[static_cast<std::size_t>(y)], a, rng);
                        break;
                }
                append_sample(ds, x, y, a);
            }
        }
    }
    ds.validate();
    return ds;
}

GroupedDataset apply_corruption(const GroupedDataset& ds, int alpha,
                                const std::set<int>& target_groups, std::uint64_t seed) {
    if (!ds.is_image()) {
        throw std::invalid_argument("apply_corruption: dataset does not hold images");
    }
    if (alpha < 0 || alpha > 4) {
        throw std::invalid_argument("apply_corruption: alpha must lie in {0..4}");
    }
    GroupedDataset out = ds;
    if (alpha == 0) return out;
    if (alpha >= 4 && ds.image.height != ds.image.width) {
        throw std::invalid_argument("apply_corruption: alpha >= 4 requires square images");
    }

    const std::size_t plane = static_cast<std::size_t>(ds.image.height) * ds.image.width;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!target_groups.contains(ds.groups[i])) continue;
        std::vector<double> x(ds.sample(i).begin(), ds.sample(i).end());
        Rng rng(derive_seed(seed, i));

        // channel shuffle [R,G,B] -> [G,B,R]
        {
            std::vector<double> shuffled(x.size());
            for (int c = 0; c < 3; ++c) {
                const int src = (c + 1) % 3;
                std::copy(x.begin() + static_cast<std::ptrdiff_t>(src * plane),
                          x.begin() + static_cast<std::ptrdiff_t>((src + 1) * plane),
                          shuffled.begin() + static_cast<std::ptrdiff_t>(c * plane));
            }
            x = std::move(shuffled);
        }
        if (alpha >= 2) draw_diagonal(x, ds.image, /*anti=*/false);
        if (alpha >= 3) {
            add_clipped_noise(x, rng);
            draw_diagonal(x, ds.image, /*anti=*/true);
        }
        if (alpha >= 4) {
            rotate270(x, ds.image);
            for (auto& v : x) v = 1.0 - v;
            add_clipped_noise(x, rng);
        }
        std::copy(x.begin(), x.end(), out.sample_mut(i).begin());
    }
    return out;
}

std::vector<double> group_offset_direction(const GroupedDataset& ds, int group) {
    if (group < 0 || group >= ds.num_groups) {
        throw std::invalid_argument("group_offset_direction: group out of range");
    }
    std::vector<double> v(ds.dim, 0.0);
    if (ds.is_image()) {
        const std::size_t plane = static_cast<std::size_t>(ds.image.height) * ds.image.width;
        const std::size_t ch = static_cast<std::size_t>(group % ds.image.channels);
        const double val = 1.0 / std::sqrt(static_cast<double>(plane));
        for (std::size_t p = 0; p < plane; ++p) v[ch * plane + p] = val;
    } else {
        const std::size_t idx = static_cast<std::size_t>(ds.num_classes + group);
        if (idx >= ds.dim) {
            throw std::invalid_argument("group_offset_direction: dim too small for C + G offsets");
        }
        v[idx] = 1.0;
    }
    return v;
}

GroupedDataset apply_semantic_offset(const GroupedDataset& ds, double gamma) {
    GroupedDataset out = ds;
    std::vector<std::vector<double>> offsets;
    offsets.reserve(static_cast<std::size_t>(ds.num_groups));
    for (int a = 0; a < ds.num_groups; ++a) offsets.push_back(group_offset_direction(ds, a));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& v = offsets[static_cast<std::size_t>(out.groups[i])];
        auto x = out.sample_mut(i);
        for (std::size_t j = 0; j < out.dim; ++j) x[j] += gamma * v[j];
    }
    return out;
}

GroupedDataset corrupt_group_labels(const GroupedDataset& ds, double rho, std::uint64_t seed) {
    if (rho < 0.0 || rho > 1.0) {
        throw std::invalid_argument("corrupt_group_labels: rho must lie in [0, 1]");
    }
    if (ds.num_groups < 2 && rho > 0.0) {
        throw std::invalid_argument("corrupt_group_labels: no incorrect group exists when G == 1");
    }
    GroupedDataset out = ds;
    const std::size_t n_corrupt = floor_count(rho * static_cast<double>(ds.size()));
    if (n_corrupt == 0) return out;

    Rng rng(seed);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t k = 0; k < n_corrupt; ++k) {
        const std::size_t i = idx[k];
        const int old = out.groups[i];
        const int shift = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(ds.num_groups - 1)));
        out.groups[i] = (old + shift) % ds.num_groups;
    }
    return out;
}

GroupedDataset mask_group_labels(const GroupedDataset& ds, double known_fraction,
                                 std::uint64_t seed) {
    if (known_fraction <= 0.0 || known_fraction > 1.0) {
        throw std::invalid_argument("mask_group_labels: known_fraction must lie in (0, 1]");
    }
    GroupedDataset out = ds;
    const std::size_t n_known =
        static_cast<std::size_t>(std::llround(known_fraction * static_cast<double>(ds.size())));
    const std::size_t n_masked = ds.size() - std::min(n_known, ds.size());
    if (n_masked == 0) return out;

    Rng rng(seed);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t k = 0; k < n_masked; ++k) out.group_known[idx[k]] = 0;
    return out;
}

GroupedDataset impute_groups_kmeans(const GroupedDataset& ds, int k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("impute_groups_kmeans: k must be >= 1");
    const std::size_t n = ds.size();
    if (k > static_cast<int>(n)) {
        throw std::invalid_argument("impute_groups_kmeans: k exceeds dataset size");
    }
    bool any_known = false;
    for (auto known : ds.group_known) {
        if (known) {
            any_known = true;
            break;
        }
    }
    if (!any_known) {
        throw std::invalid_argument("impute_groups_kmeans: no known group labels to vote with");
    }

    const std::size_t d = ds.dim;
    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::vector<double> centers(static_cast<std::size_t>(k) * d);
    for (int c = 0; c < k; ++c) {
        const auto s = ds.sample(idx[static_cast<std::size_t>(c)]);
        std::copy(s.begin(), s.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * d));
    }

    std::vector<int> assign(n, 0);
    std::vector<double> dist_to_center(n, 0.0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 100; ++iter) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = ds.sample(i);
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                double s = 0.0;
                const double* ctr = centers.data() + static_cast<std::size_t>(c) * d;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = x[j] - ctr[j];
                    s += diff * diff;
                }
                if (s < best) {
                    best = s;
                    best_c = c;
                }
            }
            assign[i] = best_c;
            dist_to_center[i] = best;
            inertia += best;
        }

        std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = ds.sample(i);
            double* s = sums.data() + static_cast<std::size_t>(assign[i]) * d;
            for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
            counts[static_cast<std::size_t>(assign[i])]++;
        }
        for (int c = 0; c < k; ++c) {
            double* ctr = centers.data() + static_cast<std::size_t>(c) * d;
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // reseed empty cluster at the point farthest from its center
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i) {
                    if (dist_to_center[i] > dist_to_center[far]) far = i;
                }
                const auto x = ds.sample(far);
                std::copy(x.begin(), x.end(), ctr);
                dist_to_center[far] = 0.0;
                continue;
            }
            const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            for (std::size_t j = 0; j < d; ++j) {
                ctr[j] = sums[static_cast<std::size_t>(c) * d + j] * inv;
            }
        }

        if (prev_inertia < std::numeric_limits<double>::infinity()) {
            const double rel = std::abs(prev_inertia - inertia) / std::max(prev_inertia, 1e-12);
            if (rel < 1e-6) break;
        }
        prev_inertia = inertia;
    }

    // global majority over known labels; ties resolved toward the lowest index
    std::vector<std::size_t> global_counts(static_cast<std::size_t>(ds.num_groups), 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.group_known[i]) global_counts[static_cast<std::size_t>(ds.groups[i])]++;
    }
    const int global_majority = static_cast<int>(
        std::max_element(global_counts.begin(), global_counts.end()) - global_counts.begin());

    std::vector<std::vector<std::size_t>> cluster_votes(
        static_cast<std::size_t>(k), std::vector<std::size_t>(static_cast<std::size_t>(ds.num_groups), 0));
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.group_known[i]) {
            cluster_votes[static_cast<std::size_t>(assign[i])]
                         [static_cast<std::size_t>(ds.groups[i])]++;
        }
    }
    std::vector<int> cluster_group(static_cast<std::size_t>(k), global_majority);
    for (int c = 0; c < k; ++c) {
        const auto& votes = cluster_votes[static_cast<std::size_t>(c)];
        const std::size_t total = std::accumulate(votes.begin(), votes.end(), std::size_t{0});
        if (total > 0) {
            cluster_group[static_cast<std::size_t>(c)] =
                static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
    }

    GroupedDataset out = ds;
    for (std::size_t i = 0; i < n; ++i) {
        if (!out.group_known[i]) {
            out.groups[i] = cluster_group[static_cast<std::size_t>(assign[i])];
        }
    }
    return out;
}

}  // namespace fairdistill
