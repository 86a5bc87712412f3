#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fairdistill {

enum class Split : std::uint8_t { train = 0, test = 1 };

enum class DataKind { gaussian, colored_foreground, colored_background };

// Image layout is channel-major: data[c*h*w + r*w + col].
struct ImageShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    bool valid() const { return channels > 0 && height > 0 && width > 0; }
    std::size_t pixels() const { return static_cast<std::size_t>(channels) * height * width; }
};

// Labeled, group-annotated samples with a per-sample "group observed" flag.
struct GroupedDataset {
    int num_classes = 0;
    int num_groups = 0;
    std::size_t dim = 0;
    Split split = Split::train;
    ImageShape image;  // channels == 0 means plain feature vectors

    std::vector<double> data;  // size() x dim, row-major
    std::vector<std::int32_t> labels;
    std::vector<std::int32_t> groups;
    std::vector<std::uint8_t> group_known;

    std::size_t size() const { return labels.size(); }
    bool is_image() const { return image.valid(); }

    std::span<const double> sample(std::size_t i) const {
        return {data.data() + i * dim, dim};
    }
    std::span<double> sample_mut(std::size_t i) { return {data.data() + i * dim, dim}; }

    // Throws std::invalid_argument on any structural invariant violation
    // (array lengths, label/group ranges, balanced-test law for test splits).
    void validate() const;

    // indices by (class, group); shape [num_classes][num_groups]
    std::vector<std::vector<std::vector<std::size_t>>> cell_indices() const;
    // indices by class
    std::vector<std::vector<std::size_t>> class_indices() const;
};

struct BiasConfig {
    int num_classes = 2;
    int num_groups = 2;
    std::size_t dim = 8;
    double skew = 0.5;        // majority-group fraction per class, in [1/G, 1)
    double separation = 0.0;  // distance knob between per-group class means
    std::size_t per_class = 100;
    std::uint64_t seed = 0;

    DataKind kind = DataKind::gaussian;
    int img_h = 0;  // colored kinds: dim must equal 3*img_h*img_w
    int img_w = 0;

    void validate() const;  // throws std::invalid_argument
};

// Binary container ("FDS1"): header {C, G, d, N, split_tag, image dims},
// then the row-major sample matrix, then label/group/known arrays.
void save_dataset(const std::string& path, const GroupedDataset& ds);
GroupedDataset load_dataset(const std::string& path);

const char* split_name(Split s);

}  // namespace fairdistill
