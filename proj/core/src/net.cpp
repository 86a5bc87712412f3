#include "fairdistill/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fairdistill/rng.hpp"

namespace fairdistill {

namespace {

// Per-layer activations of one forward pass. zs[l] are pre-activations of
// layer l (l = 0..L-1), as[l] are the post-activation inputs to layer l
// (as[0] = x); the logits are zs[L-1] without activation.
struct Activations {
    std::vector<std::vector<double>> as;
    std::vector<std::vector<double>> zs;
};

Activations run_forward(const NetworkParams& p, std::span<const double> x) {
    const auto& widths = p.arch.widths;
    const std::size_t L = p.arch.num_layers();
    Activations act;
    act.as.resize(L);
    act.zs.resize(L);
    act.as[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double* W = p.theta.data() + p.weight_offset(l);
        const double* b = p.theta.data() + p.bias_offset(l);
        const auto& a = act.as[l];
        auto& z = act.zs[l];
        z.assign(static_cast<std::size_t>(out), 0.0);
        for (int o = 0; o < out; ++o) {
            double s = b[o];
            const double* wrow = W + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) s += wrow[i] * a[static_cast<std::size_t>(i)];
            z[static_cast<std::size_t>(o)] = s;
        }
        if (l + 1 < L) {
            auto& next = act.as[l + 1];
            next.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) next[i] = z[i] > 0.0 ? z[i] : 0.0;
        }
    }
    return act;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// Backprop of dlogits through the net; accumulates into dtheta (scaled by
// `scale`) and optionally writes the input gradient.
void backward_from_logits(const NetworkParams& p, const Activations& act,
                          std::span<const double> dlogits, double scale, double* dtheta,
                          double* dinput) {
    const auto& widths = p.arch.widths;
    const std::size_t L = p.arch.num_layers();
    std::vector<double> delta(dlogits.begin(), dlogits.end());
    for (std::size_t l = L; l-- > 0;) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double* W = p.theta.data() + p.weight_offset(l);
        double* dW = dtheta + p.weight_offset(l);
        double* db = dtheta + p.bias_offset(l);
        const auto& a = act.as[l];
        for (int o = 0; o < out; ++o) {
            const double d = delta[static_cast<std::size_t>(o)] * scale;
            db[o] += d;
            double* dwrow = dW + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) dwrow[i] += d * a[static_cast<std::size_t>(i)];
        }
        if (l == 0) {
            if (dinput != nullptr) {
                for (int i = 0; i < in; ++i) {
                    double s = 0.0;
                    for (int o = 0; o < out; ++o) {
                        s += W[static_cast<std::size_t>(o) * in + i] *
                             delta[static_cast<std::size_t>(o)];
                    }
                    dinput[i] = s * scale;
                }
            }
            break;
        }
        std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
        const auto& z_prev = act.zs[l - 1];
        for (int i = 0; i < in; ++i) {
            if (z_prev[static_cast<std::size_t>(i)] <= 0.0) continue;
            double s = 0.0;
            for (int o = 0; o < out; ++o) {
                s += W[static_cast<std::size_t>(o) * in + i] * delta[static_cast<std::size_t>(o)];
            }
            prev[static_cast<std::size_t>(i)] = s;
        }
        delta = std::move(prev);
    }
}

}  // namespace

void Architecture::validate() const {
    if (widths.size() < 3) {
        throw std::invalid_argument("architecture: need at least one hidden layer");
    }
    for (int w : widths) {
        if (w < 1) throw std::invalid_argument("architecture: widths must be positive");
    }
}

std::size_t Architecture::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        n += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    }
    return n;
}

std::size_t NetworkParams::weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) {
        off += static_cast<std::size_t>(arch.widths[l]) * arch.widths[l + 1] + arch.widths[l + 1];
    }
    return off;
}

std::size_t NetworkParams::bias_offset(std::size_t layer) const {
    return weight_offset(layer) +
           static_cast<std::size_t>(arch.widths[layer]) * arch.widths[layer + 1];
}

NetworkParams init_network(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    NetworkParams p;
    p.arch = arch;
    p.theta.assign(arch.param_count(), 0.0);
    Rng rng(derive_seed(seed, 0x1417u));
    for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l) {
        const int in = arch.widths[l];
        const int out = arch.widths[l + 1];
        const double scale = std::sqrt(6.0 / static_cast<double>(in + out));
        double* W = p.theta.data() + p.weight_offset(l);
        for (std::size_t i = 0; i < static_cast<std::size_t>(in) * out; ++i) {
            W[i] = rng.uniform(-scale, scale);
        }
        // biases stay zero
    }
    return p;
}

ForwardResult forward(const NetworkParams& p, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(p.arch.input_dim())) {
        throw std::invalid_argument("forward: input dimension mismatch");
    }
    const auto act = run_forward(p, x);
    ForwardResult r;
    r.logits = act.zs.back();
    r.embedding = act.as.back();
    return r;
}

int predict(const NetworkParams& p, std::span<const double> x) {
    const auto r = forward(p, x);
    int best = 0;
    for (std::size_t i = 1; i < r.logits.size(); ++i) {
        if (r.logits[i] > r.logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

BatchView batch_of(const GroupedDataset& ds, std::span<const std::size_t> rows) {
    return BatchView{ds.data.data(), ds.dim, ds.size(), ds.labels.data(), rows};
}

LossGrads loss_and_grads(const NetworkParams& p, const BatchView& batch, bool want_input_grads) {
    const std::size_t B = batch.batch_size();
    if (B == 0) throw std::invalid_argument("loss_and_grads: empty batch");
    if (batch.dim != static_cast<std::size_t>(p.arch.input_dim())) {
        throw std::invalid_argument("loss_and_grads: input dimension mismatch");
    }
    const int C = p.arch.num_classes();

    LossGrads out;
    out.dtheta.assign(p.theta.size(), 0.0);
    if (want_input_grads) out.dinputs.assign(B * batch.dim, 0.0);

    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i) {
        const int y = batch.y(i);
        if (y < 0 || y >= C) throw std::invalid_argument("loss_and_grads: label out of range");
        const auto act = run_forward(p, batch.x(i));
        const auto prob = softmax(act.zs.back());
        out.loss -= std::log(std::max(prob[static_cast<std::size_t>(y)], 1e-300)) * inv_b;
        std::vector<double> dlogits(prob);
        dlogits[static_cast<std::size_t>(y)] -= 1.0;
        backward_from_logits(p, act, dlogits, inv_b, out.dtheta.data(),
                             want_input_grads ? out.dinputs.data() + i * batch.dim : nullptr);
    }
    return out;
}

std::vector<double> embedding_pullback(const NetworkParams& p, std::span<const double> x,
                                       std::span<const double> cotangent) {
    if (cotangent.size() != static_cast<std::size_t>(p.arch.embedding_dim())) {
        throw std::invalid_argument("embedding_pullback: cotangent dimension mismatch");
    }
    const auto act = run_forward(p, x);
    const auto& widths = p.arch.widths;
    const std::size_t L = p.arch.num_layers();

    // seed delta at the last hidden activation: d<c, a_{L-1}>/dz_{L-2} = c .* relu'(z)
    std::vector<double> delta(cotangent.begin(), cotangent.end());
    const auto& z_embed = act.zs[L - 2];
    for (std::size_t i = 0; i < delta.size(); ++i) {
        if (z_embed[i] <= 0.0) delta[i] = 0.0;
    }
    for (std::size_t l = L - 1; l-- > 0;) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double* W = p.theta.data() + p.weight_offset(l);
        std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
        for (int i = 0; i < in; ++i) {
            double s = 0.0;
            for (int o = 0; o < out; ++o) {
                s += W[static_cast<std::size_t>(o) * in + i] * delta[static_cast<std::size_t>(o)];
            }
            prev[static_cast<std::size_t>(i)] = s;
        }
        if (l == 0) return prev;
        const auto& z_prev = act.zs[l - 1];
        for (int i = 0; i < in; ++i) {
            if (z_prev[static_cast<std::size_t>(i)] <= 0.0) prev[static_cast<std::size_t>(i)] = 0.0;
        }
        delta = std::move(prev);
    }
    return {};
}

std::vector<double> param_grad_input_pullback(const NetworkParams& p, std::span<const double> x,
                                              int label, std::span<const double> cotangent) {
    if (cotangent.size() != p.theta.size()) {
        throw std::invalid_argument("param_grad_input_pullback: cotangent size mismatch");
    }
    const auto& widths = p.arch.widths;
    const std::size_t L = p.arch.num_layers();
    const int C = p.arch.num_classes();
    if (label < 0 || label >= C) {
        throw std::invalid_argument("param_grad_input_pullback: label out of range");
    }

    // Forward pass carrying tangents in the theta-direction `cotangent`
    // (theta_dot = cotangent, x_dot = 0). The tangent of the backprop input
    // gradient is exactly d/dx <cotangent, grad_theta CE>.
    std::vector<std::vector<double>> as(L), as_dot(L), zs(L), zs_dot(L);
    as[0].assign(x.begin(), x.end());
    as_dot[0].assign(x.size(), 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double* W = p.theta.data() + p.weight_offset(l);
        const double* b = p.theta.data() + p.bias_offset(l);
        const double* Wd = cotangent.data() + p.weight_offset(l);
        const double* bd = cotangent.data() + p.bias_offset(l);
        zs[l].assign(static_cast<std::size_t>(out), 0.0);
        zs_dot[l].assign(static_cast<std::size_t>(out), 0.0);
        for (int o = 0; o < out; ++o) {
            double s = b[o];
            double sd = bd[o];
            const double* wrow = W + static_cast<std::size_t>(o) * in;
            const double* wdrow = Wd + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) {
                s += wrow[i] * as[l][static_cast<std::size_t>(i)];
                sd += wdrow[i] * as[l][static_cast<std::size_t>(i)] +
                      wrow[i] * as_dot[l][static_cast<std::size_t>(i)];
            }
            zs[l][static_cast<std::size_t>(o)] = s;
            zs_dot[l][static_cast<std::size_t>(o)] = sd;
        }
        if (l + 1 < L) {
            as[l + 1].resize(zs[l].size());
            as_dot[l + 1].resize(zs[l].size());
            for (std::size_t i = 0; i < zs[l].size(); ++i) {
                const bool on = zs[l][i] > 0.0;
                as[l + 1][i] = on ? zs[l][i] : 0.0;
                as_dot[l + 1][i] = on ? zs_dot[l][i] : 0.0;
            }
        }
    }

    const auto prob = softmax(zs[L - 1]);
    // p_dot = p .* (z_dot - <p, z_dot>)
    double mean_zdot = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) mean_zdot += prob[i] * zs_dot[L - 1][i];
    std::vector<double> delta(prob);
    std::vector<double> delta_dot(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) {
        delta_dot[i] = prob[i] * (zs_dot[L - 1][i] - mean_zdot);
    }
    delta[static_cast<std::size_t>(label)] -= 1.0;

    for (std::size_t l = L; l-- > 0;) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const double* W = p.theta.data() + p.weight_offset(l);
        const double* Wd = cotangent.data() + p.weight_offset(l);
        std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
        std::vector<double> prev_dot(static_cast<std::size_t>(in), 0.0);
        for (int i = 0; i < in; ++i) {
            double s = 0.0, sd = 0.0;
            for (int o = 0; o < out; ++o) {
                const double w = W[static_cast<std::size_t>(o) * in + i];
                const double wd = Wd[static_cast<std::size_t>(o) * in + i];
                s += w * delta[static_cast<std::size_t>(o)];
                sd += wd * delta[static_cast<std::size_t>(o)] +
                      w * delta_dot[static_cast<std::size_t>(o)];
            }
            prev[static_cast<std::size_t>(i)] = s;
            prev_dot[static_cast<std::size_t>(i)] = sd;
        }
        if (l == 0) return prev_dot;
        const auto& z_prev = zs[l - 1];
        for (int i = 0; i < in; ++i) {
            if (z_prev[static_cast<std::size_t>(i)] <= 0.0) {
                prev[static_cast<std::size_t>(i)] = 0.0;
                prev_dot[static_cast<std::size_t>(i)] = 0.0;
            }
        }
        delta = std::move(prev);
        delta_dot = std::move(prev_dot);
    }
    return {};
}

void OptimizerConfig::validate() const {
    if (lr < 0.0) throw std::invalid_argument("optimizer: lr must be >= 0");
    if (lr_decay < 0.0) throw std::invalid_argument("optimizer: lr_decay must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
    }
}

namespace {

// One SGD loop serves both plain training and trajectory recording so that
// shuffle and momentum streams are identical in the two paths.
NetworkParams train_loop(NetworkParams p, const BatchView& full, const OptimizerConfig& opt,
                         std::span<const std::size_t> snapshot_epochs, Trajectory* traj) {
    opt.validate();
    const std::size_t n = full.batch_size();
    if (n == 0) throw std::invalid_argument("train: empty dataset");
    const std::size_t bs = opt.batch_size == 0 ? n : std::min(opt.batch_size, n);
    const std::size_t freeze_below = opt.last_layer_only ? p.weight_offset(p.arch.num_layers() - 1) : 0;

    std::size_t total_epochs = opt.epochs;
    std::size_t next_snap = 0;
    if (traj != nullptr && !snapshot_epochs.empty()) {
        total_epochs = std::max(total_epochs, snapshot_epochs.back());
    }
    auto maybe_snapshot = [&](std::size_t epoch_done) {
        if (traj == nullptr) return;
        while (next_snap < snapshot_epochs.size() && snapshot_epochs[next_snap] == epoch_done) {
            traj->epochs.push_back(epoch_done);
            traj->snapshots.push_back(p.theta);
            ++next_snap;
        }
    };

    std::vector<double> velocity;
    if (opt.momentum > 0.0) velocity.assign(p.theta.size(), 0.0);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, 0x7824u));

    maybe_snapshot(0);
    std::vector<std::size_t> rows(bs);
    for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
        if (bs < n) rng.shuffle(order);
        const double eta = opt.lr_at(epoch);
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t take = std::min(bs, n - start);
            rows.resize(take);
            for (std::size_t i = 0; i < take; ++i) {
                rows[i] = full.row(order[start + i]);
            }
            BatchView mb{full.data, full.dim, full.count, full.labels, rows};
            auto lg = loss_and_grads(p, mb, false);
            for (std::size_t j = freeze_below; j < p.theta.size(); ++j) {
                double step = lg.dtheta[j];
                if (opt.momentum > 0.0) {
                    velocity[j] = opt.momentum * velocity[j] + step;
                    step = velocity[j];
                }
                p.theta[j] -= eta * step;
            }
        }
        maybe_snapshot(epoch + 1);
    }
    return p;
}

}  // namespace

NetworkParams train(NetworkParams p, const BatchView& full, const OptimizerConfig& opt) {
    return train_loop(std::move(p), full, opt, {}, nullptr);
}

NetworkParams train_classifier(NetworkParams p, const GroupedDataset& ds,
                               const OptimizerConfig& opt) {
    if (ds.split != Split::train) {
        throw std::invalid_argument("train_classifier: dataset must be train-tagged");
    }
    return train(std::move(p), batch_of(ds), opt);
}

void Trajectory::validate() const {
    if (epochs.size() != snapshots.size()) {
        throw std::invalid_argument("trajectory: epochs/snapshots length mismatch");
    }
    for (std::size_t i = 1; i < epochs.size(); ++i) {
        if (epochs[i] <= epochs[i - 1]) {
            throw std::invalid_argument("trajectory: epochs must be strictly increasing");
        }
    }
    for (const auto& s : snapshots) {
        if (s.size() != arch.param_count()) {
            throw std::invalid_argument("trajectory: snapshot size does not match architecture");
        }
    }
}

Trajectory record_trajectory(const BatchView& full, const Architecture& arch,
                             const OptimizerConfig& opt,
                             std::span<const std::size_t> snapshot_epochs) {
    if (snapshot_epochs.empty()) {
        throw std::invalid_argument("record_trajectory: no snapshot epochs given");
    }
    for (std::size_t i = 1; i < snapshot_epochs.size(); ++i) {
        if (snapshot_epochs[i] <= snapshot_epochs[i - 1]) {
            throw std::invalid_argument("record_trajectory: snapshot epochs must be increasing");
        }
    }
    Trajectory traj;
    traj.arch = arch;
    traj.opt = opt;
    NetworkParams p = init_network(arch, opt.seed);
    train_loop(std::move(p), full, opt, snapshot_epochs, &traj);
    traj.validate();
    return traj;
}

Trajectory record_trajectory(const GroupedDataset& ds, const Architecture& arch,
                             const OptimizerConfig& opt,
                             std::span<const std::size_t> snapshot_epochs) {
    if (ds.split != Split::train) {
        throw std::invalid_argument("record_trajectory: dataset must be train-tagged");
    }
    return record_trajectory(batch_of(ds), arch, opt, snapshot_epochs);
}

void save_params(const std::string& path, const NetworkParams& p) {
    nlohmann::json header;
    header["widths"] = p.arch.widths;
    const std::string hs = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("FNP1", 4);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(p.theta.data()),
             static_cast<std::streamsize>(p.theta.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

NetworkParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FNP1", 4) != 0) {
        throw std::runtime_error("not a parameter container: " + path);
    }
    std::uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    is.read(hs.data(), len);
    const auto header = nlohmann::json::parse(hs);
    NetworkParams p;
    p.arch.widths = header.at("widths").get<std::vector<int>>();
    p.arch.validate();
    p.theta.assign(p.arch.param_count(), 0.0);
    is.read(reinterpret_cast<char*>(p.theta.data()),
            static_cast<std::streamsize>(p.theta.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated parameter container: " + path);
    return p;
}

}  // namespace fairdistill
