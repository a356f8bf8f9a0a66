#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "csiloc/errors.hpp"
#include "csiloc/learned_frontend.hpp"
#include "csiloc/posnet.hpp"
#include "csiloc/probmap.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"
#include "csiloc/tensor_ops.hpp"

namespace csiloc {

enum class MapFusionKind { kRnn, kConflation };

struct FusionConfig {
    int delta = 0; // feature window is delta+1 measurements
    int tau = 0;   // map window is tau+1 groups
    MapFusionKind map_fusion = MapFusionKind::kConflation;

    void validate() const {
        if (delta < 0 || tau < 0) throw ConfigError("fusion: delta and tau must be >= 0");
    }
    int window() const { return (tau + 1) * (delta + 1); }
};

// Gated recurrent unit. Gates are sigmoid; the candidate activation is linear
// by default and tanh when configured. Update rule: h' = (1-z).h + z.h~, so a
// fully open update gate replaces the state with the candidate. `passthrough`
// cells have the update gate forced open and the candidate wired to the input,
// which makes a step return its input unchanged (bit for bit).
template <typename R>
struct GruCell {
    int in = 0, hidden = 0;
    bool tanh_candidate = false;
    bool passthrough = false;
    Tensor<R> wz, uz, bz, wr, ur, br, wh, uh, bh;

    GruCell() = default;
    GruCell(int in_dim, int hidden_dim, Rng &rng, bool tanh_cand = false)
        : in(in_dim), hidden(hidden_dim), tanh_candidate(tanh_cand) {
        if (in_dim <= 0 || hidden_dim <= 0) throw DimensionError("gru: nonpositive dimension");
        auto mat = [&](int r, int c) {
            const double limit = std::sqrt(6.0 / (double(r) + double(c)));
            std::vector<R> v(std::size_t(r) * std::size_t(c));
            for (auto &x : v) x = R(rng.uniform(-limit, limit));
            return Tensor<R>::param({r, c}, std::move(v));
        };
        auto bias = [&](int c) {
            return Tensor<R>::param({1, c}, std::vector<R>(std::size_t(c), R(0)));
        };
        wz = mat(in, hidden);
        uz = mat(hidden, hidden);
        bz = bias(hidden);
        wr = mat(in, hidden);
        ur = mat(hidden, hidden);
        br = bias(hidden);
        wh = mat(in, hidden);
        uh = mat(hidden, hidden);
        bh = bias(hidden);
    }

    static GruCell identity_passthrough(int dim) {
        Rng rng(0);
        GruCell cell(dim, dim, rng);
        auto zero = [&](Tensor<R> &t) {
            for (auto &v : t.values()) v = R(0);
        };
        zero(cell.wz);
        zero(cell.uz);
        zero(cell.wr);
        zero(cell.ur);
        zero(cell.br);
        zero(cell.uh);
        zero(cell.bh);
        zero(cell.wh);
        for (int i = 0; i < dim; ++i) cell.wh.values()[std::size_t(i) * dim + i] = R(1);
        for (auto &v : cell.bz.values()) v = R(50); // sigmoid(50) == 1 in fp
        cell.passthrough = true;
        return cell;
    }

    Tensor<R> step(const Tensor<R> &x, const Tensor<R> &h) {
        if (x.ndim() != 2 || x.dim(1) != in) throw DimensionError("gru: input width mismatch");
        if (h.ndim() != 2 || h.dim(1) != hidden || h.dim(0) != x.dim(0))
            throw DimensionError("gru: state shape mismatch");
        if (passthrough) return x; // engineered identity
        auto z = sigmoid(add_rowvec(add(matmul(x, wz), matmul(h, uz)), bz));
        auto r = sigmoid(add_rowvec(add(matmul(x, wr), matmul(h, ur)), br));
        auto pre = add_rowvec(add(matmul(x, wh), matmul(mul(r, h), uh)), bh);
        auto cand = tanh_candidate ? tanh_op(pre) : pre;
        return add(mul(one_minus(z), h), mul(z, cand));
    }

    std::vector<Tensor<R>> parameters() { return {wz, uz, bz, wr, ur, br, wh, uh, bh}; }
};

// Unroll a GRU over an oldest-first sequence of [B, S] feature batches; the
// final hidden state, re-normalized to unit row norm, is the fused feature.
// Pass-through cells return the last input untouched to preserve the already
// unit-norm features exactly.
template <typename R>
Tensor<R> fuse_features(GruCell<R> &cell, const std::vector<Tensor<R>> &sequence) {
    if (sequence.empty()) throw ContractError("fuse_features: empty sequence");
    Tensor<R> h = Tensor<R>::zeros({sequence[0].dim(0), cell.hidden});
    for (const auto &x : sequence) h = cell.step(x, h);
    if (cell.passthrough) return h;
    return l2_normalize_rows(h);
}

// Map-fusion RNN: one GRU layer of width K over the map sequence, three dense
// ReLU layers of width K, then a dense softmax output layer.
template <typename R>
struct MapFusionRnn {
    int k = 0;
    GruCell<R> gru;
    Dense<R> d1, d2, d3, out;

    MapFusionRnn() = default;
    MapFusionRnn(int k_, Rng &rng, bool tanh_cand = false)
        : k(k_), gru(k_, k_, rng, tanh_cand), d1(k_, k_, rng), d2(k_, k_, rng), d3(k_, k_, rng),
          out(k_, k_, rng) {}

    Tensor<R> forward(const std::vector<Tensor<R>> &maps) {
        if (maps.empty()) throw ContractError("fuse_maps_rnn: empty sequence");
        for (const auto &m : maps)
            if (m.ndim() != 2 || m.dim(1) != k)
                throw DimensionError("fuse_maps_rnn: map width mismatch");
        Tensor<R> h = Tensor<R>::zeros({maps[0].dim(0), k});
        for (const auto &m : maps) h = gru.step(m, h);
        h = relu(d1.forward(h));
        h = relu(d2.forward(h));
        h = relu(d3.forward(h));
        return softmax_rows(out.forward(h));
    }

    std::vector<Tensor<R>> parameters() {
        auto ps = gru.parameters();
        for (auto *d : {&d1, &d2, &d3, &out}) {
            ps.push_back(d->w);
            ps.push_back(d->b);
        }
        return ps;
    }
};

// Gaussian-conflation map fusion: extract a position estimate from each map
// and combine them with inverse-variance weights.
inline PositionEstimate fuse_maps_conflation(const std::vector<ProbMap> &maps, const Grid &grid) {
    if (maps.empty()) throw ContractError("fuse_maps_conflation: empty sequence");
    std::vector<PositionEstimate> est;
    est.reserve(maps.size());
    for (const auto &m : maps) est.push_back(extract_position(m, grid));
    return conflate(est);
}

// Streaming combined pipeline: a sliding window of the newest
// (tau+1)*(delta+1) measurements is split into tau+1 consecutive groups of
// delta+1; each group runs front-end -> feature fusion -> posnet, and the
// tau+1 maps are fused into one position. Emits nothing until the window is
// full, then one estimate per push.
template <typename R>
class CombinedPipeline {
  public:
    CombinedPipeline(LearnedFrontend<R> &frontend, GruCell<R> &feature_gru, PosNet<R> &net,
                     const Grid &grid, FusionConfig cfg, MapFusionRnn<R> *map_rnn = nullptr)
        : fe_(&frontend), gru_(&feature_gru), net_(&net), map_rnn_(map_rnn), grid_(grid),
          cfg_(cfg) {
        cfg_.validate();
        if (cfg_.map_fusion == MapFusionKind::kRnn && !map_rnn_)
            throw ConfigError("combined pipeline: rnn map fusion needs a MapFusionRnn");
        if (map_rnn_ && map_rnn_->k != net_->output_dim())
            throw DimensionError("combined pipeline: map rnn width != grid size");
    }

    std::size_t warmup() const { return std::size_t(cfg_.window()) - 1; }

    void reset() { window_.clear(); }

    std::optional<PositionEstimate> push(const Cmat &h) {
        window_.push_back(h);
        const std::size_t need = std::size_t(cfg_.window());
        if (window_.size() > need) window_.pop_front();
        if (window_.size() < need) return std::nullopt;

        NoGradGuard ng;
        const int group_len = cfg_.delta + 1;
        std::vector<Tensor<R>> maps;
        maps.reserve(std::size_t(cfg_.tau) + 1);
        for (int g = 0; g <= cfg_.tau; ++g) {
            std::vector<Tensor<R>> feats;
            feats.reserve(std::size_t(group_len));
            for (int t = 0; t < group_len; ++t)
                feats.push_back(fe_->forward_one(window_[std::size_t(g * group_len + t)]));
            auto fused = fuse_features(*gru_, feats);
            maps.push_back(net_->forward(fused, Mode::kEval));
        }
        if (cfg_.map_fusion == MapFusionKind::kRnn) {
            auto fused_map = map_rnn_->forward(maps);
            return extract_position(to_probmap(fused_map), grid_);
        }
        std::vector<ProbMap> pm;
        pm.reserve(maps.size());
        for (const auto &m : maps) pm.push_back(to_probmap(m));
        return fuse_maps_conflation(pm, grid_);
    }

  private:
    static ProbMap to_probmap(const Tensor<R> &t) {
        ProbMap p(t.values().size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = double(t.values()[i]);
        return p;
    }

    LearnedFrontend<R> *fe_;
    GruCell<R> *gru_;
    PosNet<R> *net_;
    MapFusionRnn<R> *map_rnn_;
    Grid grid_;
    FusionConfig cfg_;
    std::deque<Cmat> window_;
};

} // namespace csiloc
