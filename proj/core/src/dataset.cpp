#include "fairdistill/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fairdistill {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'S', '1'};

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_raw(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

template <class T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void read_vec(std::istream& is, std::vector<T>& v, std::size_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

}  // namespace

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

void GroupedDataset::validate() const {
    const std::size_t n = labels.size();
    if (groups.size() != n || group_known.size() != n) {
        throw std::invalid_argument("dataset: labels/groups/group_known length mismatch");
    }
    if (data.size() != n * dim) {
        throw std::invalid_argument("dataset: data size does not match count*dim");
    }
    if (num_classes <= 0 || num_groups <= 0) {
        throw std::invalid_argument("dataset: num_classes and num_groups must be positive");
    }
    if (image.channels != 0 && image.pixels() != dim) {
        throw std::invalid_argument("dataset: image shape does not match dim");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw std::invalid_argument("dataset: label out of range at row " + std::to_string(i));
        }
        if (groups[i] < 0 || groups[i] >= num_groups) {
            throw std::invalid_argument("dataset: group out of range at row " + std::to_string(i));
        }
    }
    if (split == Split::test) {
        // balanced-test law: within each class, all present groups share one count
        std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes) * num_groups, 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[static_cast<std::size_t>(labels[i]) * num_groups + groups[i]]++;
        }
        for (int y = 0; y < num_classes; ++y) {
            std::size_t ref = 0;
            bool have_ref = false;
            for (int a = 0; a < num_groups; ++a) {
                const std::size_t c = counts[static_cast<std::size_t>(y) * num_groups + a];
                if (c == 0) continue;
                if (!have_ref) {
                    ref = c;
                    have_ref = true;
                } else if (c != ref) {
                    throw std::invalid_argument("dataset: test split not group-balanced in class " +
                                                std::to_string(y));
                }
            }
        }
    }
}

std::vector<std::vector<std::vector<std::size_t>>> GroupedDataset::cell_indices() const {
    std::vector<std::vector<std::vector<std::size_t>>> out(
        static_cast<std::size_t>(num_classes),
        std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(num_groups)));
    for (std::size_t i = 0; i < size(); ++i) {
        out[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(groups[i])].push_back(i);
    }
    return out;
}

std::vector<std::vector<std::size_t>> GroupedDataset::class_indices() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < size(); ++i) {
        out[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return out;
}

void BiasConfig::validate() const {
    if (num_classes < 1 || num_groups < 1) {
        throw std::invalid_argument("bias config: num_classes and num_groups must be >= 1");
    }
    if (dim == 0) throw std::invalid_argument("bias config: dim must be positive");
    if (num_groups == 1) {
        // one group holds everything; only skew == 1 is meaningful
        if (std::abs(skew - 1.0) > 1e-12) {
            throw std::invalid_argument("bias config: skew must be 1 when G == 1");
        }
    } else {
        const double min_skew = 1.0 / num_groups;
        if (skew < min_skew - 1e-12 || skew >= 1.0) {
            throw std::invalid_argument("bias config: skew must lie in [1/G, 1)");
        }
    }
    if (separation < 0.0) throw std::invalid_argument("bias config: separation must be >= 0");
    if (per_class == 0) throw std::invalid_argument("bias config: per_class must be positive");
    if (kind != DataKind::gaussian) {
        if (img_h < 1 || img_w < 1 || img_h > 8 || img_w > 8) {
            throw std::invalid_argument("bias config: colored kinds need 1 <= img_h, img_w <= 8");
        }
        if (static_cast<std::size_t>(3 * img_h * img_w) != dim) {
            throw std::invalid_argument("bias config: dim must equal 3*img_h*img_w for colored kinds");
        }
    }
}

void save_dataset(const std::string& path, const GroupedDataset& ds) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(kMagic, 4);
    write_raw(os, static_cast<std::uint32_t>(ds.num_classes));
    write_raw(os, static_cast<std::uint32_t>(ds.num_groups));
    write_raw(os, static_cast<std::uint64_t>(ds.dim));
    write_raw(os, static_cast<std::uint64_t>(ds.size()));
    write_raw(os, static_cast<std::uint8_t>(ds.split));
    write_raw(os, static_cast<std::uint8_t>(ds.image.channels));
    write_raw(os, static_cast<std::uint8_t>(ds.image.height));
    write_raw(os, static_cast<std::uint8_t>(ds.image.width));
    write_vec(os, ds.data);
    write_vec(os, ds.labels);
    write_vec(os, ds.groups);
    write_vec(os, ds.group_known);
    if (!os) throw std::runtime_error("write failed: " + path);
}

GroupedDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a dataset container: " + path);
    }
    GroupedDataset ds;
    std::uint32_t c = 0, g = 0;
    std::uint64_t dim = 0, n = 0;
    std::uint8_t split = 0, ch = 0, h = 0, w = 0;
    read_raw(is, c);
    read_raw(is, g);
    read_raw(is, dim);
    read_raw(is, n);
    read_raw(is, split);
    read_raw(is, ch);
    read_raw(is, h);
    read_raw(is, w);
    ds.num_classes = static_cast<int>(c);
    ds.num_groups = static_cast<int>(g);
    ds.dim = static_cast<std::size_t>(dim);
    ds.split = split == 0 ? Split::train : Split::test;
    ds.image = ImageShape{static_cast<int>(ch), static_cast<int>(h), static_cast<int>(w)};
    read_vec(is, ds.data, static_cast<std::size_t>(n * dim));
    read_vec(is, ds.labels, static_cast<std::size_t>(n));
    read_vec(is, ds.groups, static_cast<std::size_t>(n));
    read_vec(is, ds.group_known, static_cast<std::size_t>(n));
    if (!is) throw std::runtime_error("truncated dataset container: " + path);
    ds.validate();
    return ds;
}

}  // namespace fairdistill
