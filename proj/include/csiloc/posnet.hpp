#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "csiloc/adam.hpp"
#include "csiloc/errors.hpp"
#include "csiloc/probmap.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"
#include "csiloc/tensor_ops.hpp"

namespace csiloc {

// fully connected layer, Glorot-uniform weights, zero bias
template <typename R>
struct Dense {
    Tensor<R> w, b;

    Dense() = default;
    Dense(int in, int out, Rng &rng) {
        if (in <= 0 || out <= 0) throw DimensionError("dense: nonpositive layer width");
        const double limit = std::sqrt(6.0 / (double(in) + double(out)));
        std::vector<R> wv(std::size_t(in) * std::size_t(out));
        for (auto &x : wv) x = R(rng.uniform(-limit, limit));
        w = Tensor<R>::param({in, out}, wv);
        b = Tensor<R>::param({1, out}, std::vector<R>(std::size_t(out), R(0)));
    }

    Tensor<R> forward(const Tensor<R> &x) const { return add_rowvec(matmul(x, w), b); }
};

struct PosNetConfig {
    std::vector<int> hidden{968, 512, 512, 512, 512};
    double dropout_rate = 0.5;
};

// Probability-map network: ReLU hidden stack with batch normalization on the
// first two hidden layers, dropout after the first, softmax output over the
// grid cells.
template <typename R>
class PosNet {
  public:
    PosNet() = default;
    PosNet(int input_dim, int k, const PosNetConfig &cfg, Rng &rng)
        : input_dim_(input_dim), k_(k), cfg_(cfg) {
        if (input_dim <= 0 || k <= 0) throw DimensionError("posnet: nonpositive dimension");
        if (cfg.hidden.empty()) throw ConfigError("posnet: at least one hidden layer required");
        if (cfg.dropout_rate < 0 || cfg.dropout_rate >= 1)
            throw ConfigError("posnet: dropout rate must be in [0,1)");
        int prev = input_dim;
        for (int width : cfg.hidden) {
            layers_.emplace_back(prev, width, rng);
            prev = width;
        }
        out_ = Dense<R>(prev, k, rng);
        const std::size_t n_bn = std::min<std::size_t>(2, cfg.hidden.size());
        for (std::size_t i = 0; i < n_bn; ++i) bns_.emplace_back(cfg.hidden[i]);
    }

    int input_dim() const { return input_dim_; }
    int output_dim() const { return k_; }
    const PosNetConfig &config() const { return cfg_; }

    // rng is only consulted for dropout in train mode
    Tensor<R> forward(const Tensor<R> &x, Mode mode, Rng *rng = nullptr) {
        if (x.ndim() != 2 || x.dim(1) != input_dim_)
            throw DimensionError("posnet: input width mismatch");
        Tensor<R> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].forward(h);
            if (i < bns_.size()) h = bns_[i].forward(h, mode);
            h = relu(h);
            if (i == 0 && cfg_.dropout_rate > 0 && mode == Mode::kTrain) {
                if (!rng) throw ContractError("posnet: train-mode dropout needs an rng");
                h = dropout(h, cfg_.dropout_rate, *rng, mode);
            }
        }
        return softmax_rows(out_.forward(h));
    }

    std::vector<Tensor<R>> parameters() {
        std::vector<Tensor<R>> ps;
        for (auto &l : layers_) {
            ps.push_back(l.w);
            ps.push_back(l.b);
        }
        ps.push_back(out_.w);
        ps.push_back(out_.b);
        for (auto &bn : bns_) {
            ps.push_back(bn.gamma);
            ps.push_back(bn.beta);
        }
        return ps;
    }

    std::vector<Dense<R>> &layers() { return layers_; }
    Dense<R> &output_layer() { return out_; }
    std::vector<BatchNorm<R>> &batch_norms() { return bns_; }

  private:
    int input_dim_ = 0, k_ = 0;
    PosNetConfig cfg_;
    std::vector<Dense<R>> layers_;
    Dense<R> out_;
    std::vector<BatchNorm<R>> bns_;
};

template <typename R>
Tensor<R> rows_to_tensor(const std::vector<std::vector<R>> &rows, const std::vector<std::size_t> &idx) {
    if (idx.empty()) throw ContractError("rows_to_tensor: empty batch");
    const std::size_t d = rows[idx[0]].size();
    std::vector<R> v;
    v.reserve(idx.size() * d);
    for (std::size_t i : idx) {
        if (rows[i].size() != d) throw DimensionError("rows_to_tensor: ragged rows");
        v.insert(v.end(), rows[i].begin(), rows[i].end());
    }
    return Tensor<R>::from({int(idx.size()), int(d)}, std::move(v));
}

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 100;
    int batch = 128;
    std::uint64_t seed = 1;
    bool verbose = false;
};

namespace detail {
template <typename R>
inline std::string param_norms(std::vector<Tensor<R>> &params) {
    std::ostringstream os;
    os.setf(std::ios::scientific);
    os.precision(3);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double n = 0;
        for (R x : params[i].values()) n += double(x) * double(x);
        os << (i ? " " : "") << std::sqrt(n);
    }
    return os.str();
}
} // namespace detail

// Mini-batch training on precomputed feature rows. Targets are reference
// probability maps. Returns the mean training loss per epoch.
template <typename R>
std::vector<double> train_posnet(PosNet<R> &net, const std::vector<std::vector<R>> &xs,
                                 const std::vector<std::vector<R>> &ys, const TrainConfig &tc) {
    if (xs.empty() || xs.size() != ys.size()) throw DataError("train: empty or mismatched dataset");
    if (tc.epochs < 0 || tc.batch < 1) throw ConfigError("train: nonpositive epochs/batch");
    auto params = net.parameters();
    Adam<R> opt(params, {tc.lr});
    Rng rng(tc.seed);
    Rng dropout_rng = Rng::stream(tc.seed, 0x9e3779b9ull);

    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> curve;
    curve.reserve(std::size_t(tc.epochs));
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        double epoch_loss = 0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(tc.batch)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(tc.batch));
            std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start),
                                         order.begin() + std::ptrdiff_t(stop));
            if (idx.size() < 2 && order.size() >= 2) continue; // BN needs a real batch
            auto x = rows_to_tensor(xs, idx);
            auto y = rows_to_tensor(ys, idx);
            auto p = net.forward(x, Mode::kTrain, &dropout_rng);
            auto loss = bce_entrywise(p, y);
            const double lv = double(loss.scalar());
            if (!std::isfinite(lv))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(start / std::size_t(tc.batch)) +
                                     "; parameter norms " + detail::param_norms(params));
            backward(loss);
            opt.step();
            opt.zero_grad();
            epoch_loss += lv * double(idx.size());
            epoch_count += idx.size();
        }
        curve.push_back(epoch_count ? epoch_loss / double(epoch_count) : 0.0);
        if (tc.verbose)
            std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, curve.back());
    }
    return curve;
}

// batched eval-mode probability maps for a feature matrix
template <typename R>
std::vector<ProbMap> predict_maps(PosNet<R> &net, const std::vector<std::vector<R>> &xs,
                                  std::size_t batch = 256) {
    NoGradGuard ng;
    std::vector<ProbMap> out;
    out.reserve(xs.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < xs.size(); start += batch) {
        const std::size_t stop = std::min(xs.size(), start + batch);
        idx.resize(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        auto p = net.forward(rows_to_tensor(xs, idx), Mode::kEval);
        const auto &v = p.values();
        const std::size_t k = p.shape()[1];
        for (std::size_t r = 0; r < idx.size(); ++r)
            out.emplace_back(v.begin() + std::ptrdiff_t(r * k),
                             v.begin() + std::ptrdiff_t((r + 1) * k));
    }
    return out;
}

struct EvalMetrics {
    double mde = 0;
    double p50 = 0, p90 = 0, p95 = 0;
    std::size_t count = 0;
};

inline double percentile(std::vector<double> sorted, double q) {
    if (sorted.empty()) throw ContractError("percentile: empty sample");
    const double rank = q / 100.0 * double(sorted.size() - 1);
    const std::size_t lo = std::size_t(rank);
    const double frac = rank - double(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline EvalMetrics error_metrics(std::vector<double> errors) {
    if (errors.empty()) throw ContractError("error_metrics: no samples");
    EvalMetrics m;
    m.count = errors.size();
    m.mde = std::accumulate(errors.begin(), errors.end(), 0.0) / double(errors.size());
    std::sort(errors.begin(), errors.end());
    m.p50 = percentile(errors, 50);
    m.p90 = percentile(errors, 90);
    m.p95 = percentile(errors, 95);
    return m;
}

inline std::vector<double> position_errors(const std::vector<PositionEstimate> &est,
                                           const std::vector<Vec2> &truth) {
    if (est.size() != truth.size()) throw DataError("position_errors: size mismatch");
    std::vector<double> e(est.size());
    for (std::size_t i = 0; i < est.size(); ++i)
        e[i] = std::hypot(est[i].x[0] - truth[i][0], est[i].x[1] - truth[i][1]);
    return e;
}

template <typename R>
EvalMetrics evaluate_posnet(PosNet<R> &net, const std::vector<std::vector<R>> &xs,
                            const std::vector<Vec2> &truth, const Grid &grid) {
    auto maps = predict_maps(net, xs);
    std::vector<PositionEstimate> est;
    est.reserve(maps.size());
    for (const auto &p : maps) est.push_back(extract_position(p, grid));
    return error_metrics(position_errors(est, truth));
}

} // namespace csiloc
