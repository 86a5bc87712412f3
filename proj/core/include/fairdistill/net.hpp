#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairdistill/dataset.hpp"

namespace fairdistill {

// Small ReLU MLP: widths = [input_dim, hidden..., num_classes].
// The embedding is the post-ReLU activation of the last hidden layer.
struct Architecture {
    std::vector<int> widths;

    void validate() const;  // throws std::invalid_argument
    std::size_t param_count() const;
    int input_dim() const { return widths.front(); }
    int num_classes() const { return widths.back(); }
    int embedding_dim() const { return widths[widths.size() - 2]; }
    std::size_t num_layers() const { return widths.size() - 1; }

    bool operator==(const Architecture&) const = default;
};

// Flat parameter vector; per layer l the weight matrix W_l (out x in,
// row-major) precedes the bias b_l. Flatten/unflatten is the identity by
// construction: theta IS the flat order.
struct NetworkParams {
    Architecture arch;
    std::vector<double> theta;

    std::size_t weight_offset(std::size_t layer) const;
    std::size_t bias_offset(std::size_t layer) const;
};

NetworkParams init_network(const Architecture& arch, std::uint64_t seed);

struct ForwardResult {
    std::vector<double> logits;
    std::vector<double> embedding;
};
ForwardResult forward(const NetworkParams& p, std::span<const double> x);

// argmax over logits, lowest index on ties
int predict(const NetworkParams& p, std::span<const double> x);

// Non-owning view over row-major samples with labels; `rows` selects which
// rows participate (empty span = all rows 0..count-1).
struct BatchView {
    const double* data = nullptr;
    std::size_t dim = 0;
    std::size_t count = 0;
    const std::int32_t* labels = nullptr;
    std::span<const std::size_t> rows;

    std::size_t batch_size() const { return rows.empty() ? count : rows.size(); }
    std::size_t row(std::size_t i) const { return rows.empty() ? i : rows[i]; }
    std::span<const double> x(std::size_t i) const { return {data + row(i) * dim, dim}; }
    int y(std::size_t i) const { return labels[row(i)]; }
};

BatchView batch_of(const GroupedDataset& ds, std::span<const std::size_t> rows = {});

struct LossGrads {
    double loss = 0.0;
    std::vector<double> dtheta;
    std::vector<double> dinputs;  // batch_size x dim, filled when requested
};

// Mean softmax cross-entropy over the batch with exact reverse-mode gradients
// with respect to theta and (optionally) the inputs.
LossGrads loss_and_grads(const NetworkParams& p, const BatchView& batch,
                         bool want_input_grads = false);

// d/dx of <cotangent, embedding(x)>; cotangent has embedding_dim entries.
std::vector<double> embedding_pullback(const NetworkParams& p, std::span<const double> x,
                                       std::span<const double> cotangent);

// d/dx of <cotangent, grad_theta CE(x, label)> — the mixed second-order term
// gradient matching needs. Computed by forward-mode differentiation of the
// backward pass in the theta-direction `cotangent`; exact wherever ReLU is
// differentiable.
std::vector<double> param_grad_input_pullback(const NetworkParams& p, std::span<const double> x,
                                              int label, std::span<const double> cotangent);

struct OptimizerConfig {
    double lr = 0.05;
    double lr_decay = 0.0;  // eta_t = lr / (1 + lr_decay * epoch)
    double momentum = 0.0;
    std::size_t batch_size = 0;  // 0 = full batch
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    bool last_layer_only = false;

    void validate() const;
    double lr_at(std::size_t epoch) const { return lr / (1.0 + lr_decay * static_cast<double>(epoch)); }
};

// Plain SGD on the view; deterministic given (data, params, opt).
NetworkParams train(NetworkParams p, const BatchView& full, const OptimizerConfig& opt);
NetworkParams train_classifier(NetworkParams p, const GroupedDataset& ds,
                               const OptimizerConfig& opt);

struct Trajectory {
    Architecture arch;
    std::vector<std::size_t> epochs;                // strictly increasing
    std::vector<std::vector<double>> snapshots;     // theta at each epoch
    OptimizerConfig opt;
    int group_tag = -1;

    void validate() const;
};

Trajectory record_trajectory(const GroupedDataset& ds, const Architecture& arch,
                             const OptimizerConfig& opt,
                             std::span<const std::size_t> snapshot_epochs);
Trajectory record_trajectory(const BatchView& full, const Architecture& arch,
                             const OptimizerConfig& opt,
                             std::span<const std::size_t> snapshot_epochs);

// "FNP1" container: JSON architecture header + raw little-endian doubles.
void save_params(const std::string& path, const NetworkParams& p);
NetworkParams load_params(const std::string& path);

}  // namespace fairdistill
