#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "csiloc/adam.hpp"
#include "csiloc/checkpoint.hpp"
#include "csiloc/config.hpp"
#include "csiloc/dataset_io.hpp"
#include "csiloc/fusion.hpp"
#include "csiloc/learned_frontend.hpp"
#include "csiloc/posnet.hpp"
#include "csiloc/probmap.hpp"

// Experiment orchestration: one model container covering every input mode
// (raw | designed | learned) and fusion variant, a single windowed trainer
// and evaluator over all of them, checkpoint round trips, and the
// mode x variant replication matrix.

namespace csiloc {

// RNG stream ids, kept clear of the channel simulator's ranges.
inline constexpr std::uint64_t kStreamNetInit = 3ull << 40;
inline constexpr std::uint64_t kStreamGruInit = (3ull << 40) + 1;
inline constexpr std::uint64_t kStreamMapRnnInit = (3ull << 40) + 2;
inline constexpr std::uint64_t kStreamShuffle = 4ull << 40; // + epoch
inline constexpr std::uint64_t kStreamDropout = 5ull << 40; // + epoch

// ------------------------------------------------------------ feature rows

// Raw-CSI baseline input: [Re(H); Im(H)] flattened row-major, unit l2 norm so
// all three modes feed the network on the same scale.
template <typename R> std::vector<R> raw_feature_row(const Cmat &h) {
    std::vector<R> row;
    row.reserve(2 * h.v.size());
    for (const auto &z : h.v) row.push_back(static_cast<R>(z.real()));
    for (const auto &z : h.v) row.push_back(static_cast<R>(z.imag()));
    double norm2 = 0;
    for (R v : row) norm2 += double(v) * double(v);
    if (!(norm2 > 0)) throw DegenerateInputError("raw features: all-zero CSI");
    const R inv = static_cast<R>(1.0 / std::sqrt(norm2));
    for (R &v : row) v *= inv;
    return row;
}

template <typename R> std::vector<R> designed_feature_row(const Cmat &h) {
    const std::vector<double> f = designed_features(h);
    return std::vector<R>(f.begin(), f.end());
}

inline int input_feature_dim(InputMode mode, int m_r, int w) {
    return mode == InputMode::kRaw ? 2 * m_r * w : feature_length(m_r, w);
}

// Which fusion stages a variant actually exercises. A window of one is a
// no-op, so zero delta/tau degrade each stage to the plain pipeline.
inline int delta_eff(const ExperimentConfig &cfg, FusionVariant v) {
    return (v == FusionVariant::kFeature || v == FusionVariant::kCombined) ? cfg.delta : 0;
}
inline int tau_eff(const ExperimentConfig &cfg, FusionVariant v) {
    return (v == FusionVariant::kMapRnn || v == FusionVariant::kMapConflation ||
            v == FusionVariant::kCombined)
               ? cfg.tau
               : 0;
}
inline bool variant_uses_map_rnn(const ExperimentConfig &cfg, FusionVariant v) {
    if (tau_eff(cfg, v) == 0) return false;
    return v == FusionVariant::kMapRnn ||
           (v == FusionVariant::kCombined && cfg.combined_map_fusion == MapFusionKind::kRnn);
}

// ------------------------------------------------------------------- model

template <typename R> struct Model {
    ExperimentConfig cfg;
    Grid grid;
    std::optional<LearnedFrontend<R>> frontend; // mode == learned
    std::optional<GruCell<R>> gru;              // feature fusion with delta > 0
    PosNet<R> net;
    std::optional<MapFusionRnn<R>> map_rnn; // RNN map fusion with tau > 0

    int feature_dim() const { return input_feature_dim(cfg.mode, cfg.sim.m_r, cfg.sim.w); }
    int delta_len() const { return delta_eff(cfg, cfg.fusion) + 1; }
    int tau_len() const { return tau_eff(cfg, cfg.fusion) + 1; }
    int window() const { return delta_len() * tau_len(); }

    // Component construction is keyed on what the variant trains, but each
    // component draws from its own seed stream, so shared parts (the posnet
    // in particular) initialize identically across variants.
    static Model init(const ExperimentConfig &cfg) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.grid = cfg.grid();
        const int s = m.feature_dim();
        const int k = m.grid.num_points();
        if (cfg.mode == InputMode::kLearned)
            m.frontend = LearnedFrontend<R>::init(cfg.sim.m_r, cfg.sim.w);
        if (delta_eff(cfg, cfg.fusion) > 0) {
            Rng rng = Rng::stream(cfg.seed, kStreamGruInit);
            m.gru.emplace(s, s, rng, cfg.gru_tanh_candidate);
        }
        {
            Rng rng = Rng::stream(cfg.seed, kStreamNetInit);
            m.net = PosNet<R>(s, k, cfg.net, rng);
        }
        if (variant_uses_map_rnn(cfg, cfg.fusion)) {
            Rng rng = Rng::stream(cfg.seed, kStreamMapRnnInit);
            m.map_rnn.emplace(k, rng, cfg.gru_tanh_candidate);
        }
        return m;
    }

    std::vector<std::pair<std::string, Tensor<R>>> named_parameters() {
        std::vector<std::pair<std::string, Tensor<R>>> out;
        if (frontend) {
            out.push_back({"frontend.w1.re", frontend->w1.re});
            out.push_back({"frontend.w1.im", frontend->w1.im});
            out.push_back({"frontend.w2.re", frontend->w2.re});
            out.push_back({"frontend.w2.im", frontend->w2.im});
            out.push_back({"frontend.w3.re", frontend->w3.re});
            out.push_back({"frontend.w3.im", frontend->w3.im});
        }
        auto add_gru = [&out](const std::string &p, GruCell<R> &g) {
            out.push_back({p + ".wz", g.wz});
            out.push_back({p + ".uz", g.uz});
            out.push_back({p + ".bz", g.bz});
            out.push_back({p + ".wr", g.wr});
            out.push_back({p + ".ur", g.ur});
            out.push_back({p + ".br", g.br});
            out.push_back({p + ".wh", g.wh});
            out.push_back({p + ".uh", g.uh});
            out.push_back({p + ".bh", g.bh});
        };
        if (gru) add_gru("gru", *gru);
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            const std::string p = "net.h" + std::to_string(i);
            out.push_back({p + ".w", net.layers()[i].w});
            out.push_back({p + ".b", net.layers()[i].b});
        }
        out.push_back({"net.out.w", net.output_layer().w});
        out.push_back({"net.out.b", net.output_layer().b});
        for (std::size_t i = 0; i < net.batch_norms().size(); ++i) {
            const std::string p = "net.bn" + std::to_string(i);
            out.push_back({p + ".gamma", net.batch_norms()[i].gamma});
            out.push_back({p + ".beta", net.batch_norms()[i].beta});
        }
        if (map_rnn) {
            add_gru("map_rnn.gru", map_rnn->gru);
            auto add_dense = [&out](const std::string &p, Dense<R> &d) {
                out.push_back({p + ".w", d.w});
                out.push_back({p + ".b", d.b});
            };
            add_dense("map_rnn.d1", map_rnn->d1);
            add_dense("map_rnn.d2", map_rnn->d2);
            add_dense("map_rnn.d3", map_rnn->d3);
            add_dense("map_rnn.out", map_rnn->out);
        }
        return out;
    }

    std::vector<Tensor<R>> parameters() {
        std::vector<Tensor<R>> out;
        for (auto &[name, t] : named_parameters()) out.push_back(t);
        return out;
    }
};

// ----------------------------------------------------------------- windows

// Sliding windows of `len` consecutive measurements, never crossing a UE
// boundary (each UE is an independent trajectory). Indices oldest first.
inline std::vector<std::vector<std::size_t>>
index_windows(const std::vector<CsiMeasurement> &recs, int len) {
    if (len < 1) throw ContractError("index_windows: window must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    std::size_t run_start = 0;
    for (std::size_t i = 0; i <= recs.size(); ++i) {
        const bool boundary = i == recs.size() || (i > 0 && recs[i].ue_id != recs[i - 1].ue_id);
        if (!boundary) continue;
        for (std::size_t end = run_start + std::size_t(len); end <= i; ++end) {
            std::vector<std::size_t> w(static_cast<std::size_t>(len));
            for (int t = 0; t < len; ++t) w[std::size_t(t)] = end - std::size_t(len) + std::size_t(t);
            out.push_back(std::move(w));
        }
        run_start = i;
    }
    return out;
}

inline void check_dataset_shape(const ExperimentConfig &cfg,
                                const std::vector<CsiMeasurement> &recs) {
    for (const auto &m : recs)
        if (m.h.rows != cfg.sim.m_r || m.h.cols != cfg.sim.w)
            throw DataError("dataset CSI is " + std::to_string(m.h.rows) + "x" +
                            std::to_string(m.h.cols) + ", config expects " +
                            std::to_string(cfg.sim.m_r) + "x" + std::to_string(cfg.sim.w));
}

namespace detail {

// Precomputed per-record inputs: feature rows for raw/designed (learned mode
// recomputes through the trainable front-end), plus target map rows.
template <typename R> struct Prepared {
    std::vector<std::vector<R>> feature_rows; // empty in learned mode
    std::vector<std::vector<R>> target_rows;
};

template <typename R>
Prepared<R> prepare_records(const Model<R> &m, const std::vector<CsiMeasurement> &recs) {
    Prepared<R> prep;
    prep.target_rows.reserve(recs.size());
    for (const auto &rec : recs) {
        // Targets clamp into the grid hull: the outer half-cell ring is not
        // representable by a bilinear map, and neither can the network place
        // an expectation there. Error metrics still use the true position.
        const Vec2 target{std::clamp(rec.position[0], m.grid.min_x(), m.grid.max_x()),
                          std::clamp(rec.position[1], m.grid.min_y(), m.grid.max_y())};
        const ProbMap t = reference_map(target, m.grid);
        prep.target_rows.emplace_back(t.begin(), t.end());
    }
    if (m.cfg.mode != InputMode::kLearned) {
        prep.feature_rows.reserve(recs.size());
        for (const auto &rec : recs)
            prep.feature_rows.push_back(m.cfg.mode == InputMode::kRaw
                                            ? raw_feature_row<R>(rec.h)
                                            : designed_feature_row<R>(rec.h));
    }
    return prep;
}

// Input tensor for one window step across a batch of windows.
template <typename R>
Tensor<R> step_input(const Model<R> &m, const std::vector<CsiMeasurement> &recs,
                     const Prepared<R> &prep, const std::vector<std::vector<std::size_t>> &windows,
                     const std::vector<std::size_t> &batch, std::size_t offset) {
    std::vector<std::size_t> idx;
    idx.reserve(batch.size());
    for (std::size_t wid : batch) idx.push_back(windows[wid][offset]);
    if (m.cfg.mode != InputMode::kLearned) return rows_to_tensor(prep.feature_rows, idx);
    std::vector<const Cmat *> hs;
    hs.reserve(idx.size());
    for (std::size_t i : idx) hs.push_back(&recs[i].h);
    return m.frontend->forward(stack_csi_blocks<R>(hs), static_cast<int>(hs.size()));
}

// Per-group probability maps for a batch of windows under fusion variant v.
template <typename R>
std::vector<Tensor<R>> group_maps(Model<R> &m, const std::vector<CsiMeasurement> &recs,
                                  const Prepared<R> &prep,
                                  const std::vector<std::vector<std::size_t>> &windows,
                                  const std::vector<std::size_t> &batch, int dl, int tl, Mode mode,
                                  Rng *dropout_rng) {
    std::vector<Tensor<R>> maps;
    maps.reserve(std::size_t(tl));
    for (int g = 0; g < tl; ++g) {
        std::vector<Tensor<R>> feats;
        feats.reserve(std::size_t(dl));
        for (int t = 0; t < dl; ++t)
            feats.push_back(
                step_input(m, recs, prep, windows, batch, std::size_t(g) * dl + std::size_t(t)));
        Tensor<R> fused = dl > 1 ? fuse_features(*m.gru, feats) : feats[0];
        maps.push_back(m.net.forward(fused, mode, dropout_rng));
    }
    return maps;
}

template <typename R> ProbMap map_row(const Tensor<R> &t, std::size_t b) {
    const std::size_t k = std::size_t(t.dim(1));
    ProbMap p(k);
    for (std::size_t j = 0; j < k; ++j) p[j] = double(t.values()[b * k + j]);
    return p;
}

} // namespace detail

// ---------------------------------------------------------------- training

template <typename R> struct TrainState {
    Model<R> model;
    std::optional<Adam<R>> opt;
    std::uint64_t epochs_done = 0;
};

template <typename R> TrainState<R> init_state(const ExperimentConfig &cfg) {
    TrainState<R> st;
    st.model = Model<R>::init(cfg);
    return st;
}

// Train for `epochs` more epochs; returns the per-epoch mean losses of this
// run. Shuffle and dropout streams are derived from the global epoch index,
// so training 3+2 epochs walks the same batch sequence as training 5.
template <typename R>
std::vector<double> fit(TrainState<R> &st, const std::vector<CsiMeasurement> &recs, int epochs,
                        std::ostream *log = nullptr) {
    Model<R> &m = st.model;
    const ExperimentConfig &cfg = m.cfg;
    check_dataset_shape(cfg, recs);
    const int dl = m.delta_len(), tl = m.tau_len();
    const auto windows = index_windows(recs, dl * tl);
    if (windows.size() < 2)
        throw DataError("training needs at least 2 windows of " + std::to_string(dl * tl) +
                        " consecutive same-UE measurements, got " +
                        std::to_string(windows.size()));
    const auto prep = detail::prepare_records(m, recs);

    if (!st.opt && epochs > 0)
        st.opt.emplace(m.parameters(), typename Adam<R>::Hyper{cfg.train.lr});

    auto params = m.parameters();
    std::vector<double> curve;
    curve.reserve(std::size_t(epochs));
    for (int e = 0; e < epochs; ++e) {
        const std::uint64_t epoch = st.epochs_done + std::uint64_t(e);
        Rng shuffle_rng = Rng::stream(cfg.seed, kStreamShuffle + epoch);
        Rng dropout_rng = Rng::stream(cfg.seed, kStreamDropout + epoch);
        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        double acc = 0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.train.batch)) {
            const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.train.batch));
            if (b1 - b0 < 2) continue; // batch norm needs 2+ rows
            const std::vector<std::size_t> batch(order.begin() + std::ptrdiff_t(b0),
                                                 order.begin() + std::ptrdiff_t(b1));
            st.opt->zero_grad();
            auto maps = detail::group_maps(m, recs, prep, windows, batch, dl, tl, Mode::kTrain,
                                           &dropout_rng);
            auto target = [&](int g) {
                std::vector<std::size_t> idx;
                idx.reserve(batch.size());
                for (std::size_t wid : batch)
                    idx.push_back(windows[wid][std::size_t(g + 1) * std::size_t(dl) - 1]);
                return rows_to_tensor(prep.target_rows, idx);
            };
            Tensor<R> loss = [&] {
                if (m.map_rnn && tl > 1)
                    return bce_entrywise(m.map_rnn->forward(maps), target(tl - 1));
                Tensor<R> l = bce_entrywise(maps[0], target(0));
                for (int g = 1; g < tl; ++g) l = add(l, bce_entrywise(maps[std::size_t(g)], target(g)));
                return tl > 1 ? scale(l, static_cast<R>(1.0 / tl)) : l;
            }();
            const double lv = double(loss.values()[0]);
            if (!std::isfinite(lv))
                throw NumericalError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b0 / std::size_t(cfg.train.batch)) +
                                     "; parameter norms " + detail::param_norms(params));
            backward(loss);
            st.opt->step();
            acc += lv * double(b1 - b0);
            seen += b1 - b0;
        }
        curve.push_back(acc / double(seen));
        if (log)
            (*log) << "epoch " << epoch << " loss " << curve.back() << "\n";
    }
    st.epochs_done += std::uint64_t(epochs);
    return curve;
}

// -------------------------------------------------------------- evaluation

struct EvalOutput {
    std::vector<std::size_t> record_idx; // newest record of each window
    std::vector<PositionEstimate> estimates;
    std::vector<double> errors;
    EvalMetrics metrics{};
};

// Evaluate over every full window in the dataset. `variant_override` lets a
// fused model report its fusion-off column (variant none) from the same
// weights.
template <typename R>
EvalOutput evaluate_model(Model<R> &m, const std::vector<CsiMeasurement> &recs,
                          std::optional<FusionVariant> variant_override = std::nullopt,
                          int batch_cap = 256) {
    check_dataset_shape(m.cfg, recs);
    const FusionVariant v = variant_override.value_or(m.cfg.fusion);
    const int dl = delta_eff(m.cfg, v) + 1, tl = tau_eff(m.cfg, v) + 1;
    if (dl > 1 && !m.gru) throw ContractError("evaluate: variant needs a feature GRU");
    const bool use_rnn = variant_uses_map_rnn(m.cfg, v);
    if (use_rnn && !m.map_rnn) throw ContractError("evaluate: variant needs a map-fusion RNN");

    const auto windows = index_windows(recs, dl * tl);
    if (windows.empty())
        throw DataError("evaluation needs at least one window of " + std::to_string(dl * tl) +
                        " consecutive same-UE measurements");
    const auto prep = detail::prepare_records(m, recs);

    NoGradGuard ng;
    EvalOutput out;
    out.record_idx.reserve(windows.size());
    out.estimates.reserve(windows.size());
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += std::size_t(batch_cap)) {
        const std::size_t b1 = std::min(windows.size(), b0 + std::size_t(batch_cap));
        std::vector<std::size_t> batch(b1 - b0);
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = b0 + i;
        auto maps =
            detail::group_maps(m, recs, prep, windows, batch, dl, tl, Mode::kEval, nullptr);
        std::optional<Tensor<R>> rnn_fused;
        if (use_rnn) rnn_fused = m.map_rnn->forward(maps);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            PositionEstimate est;
            if (use_rnn) {
                est = extract_position(detail::map_row(*rnn_fused, b), m.grid);
            } else if (tl > 1) {
                std::vector<ProbMap> pm;
                pm.reserve(std::size_t(tl));
                for (const auto &map : maps) pm.push_back(detail::map_row(map, b));
                est = fuse_maps_conflation(pm, m.grid);
            } else {
                est = extract_position(detail::map_row(maps[0], b), m.grid);
            }
            out.estimates.push_back(est);
            out.record_idx.push_back(windows[batch[b]].back());
        }
    }
    out.errors.reserve(out.estimates.size());
    for (std::size_t i = 0; i < out.estimates.size(); ++i) {
        const Vec2 &truth = recs[out.record_idx[i]].position;
        const double ex = out.estimates[i].x[0] - truth[0];
        const double ey = out.estimates[i].x[1] - truth[1];
        out.errors.push_back(std::sqrt(ex * ex + ey * ey));
    }
    out.metrics = error_metrics(out.errors);
    return out;
}

// ------------------------------------------------------------- checkpoints

namespace detail {

template <typename R> Blob tensor_blob(const std::string &name, const Tensor<R> &t) {
    Blob b;
    b.name = name;
    for (int i = 0; i < t.ndim(); ++i) b.shape.push_back(std::uint32_t(t.dim(i)));
    b.data.reserve(t.values().size());
    for (R v : t.values()) b.data.push_back(float(v));
    return b;
}

template <typename R> void load_blob(Tensor<R> &t, const Checkpoint &ck, const std::string &name) {
    const Blob &b = ck.require(name);
    bool ok = b.shape.size() == std::size_t(t.ndim());
    for (int i = 0; ok && i < t.ndim(); ++i) ok = int(b.shape[std::size_t(i)]) == t.dim(i);
    if (!ok) throw DataError("checkpoint: tensor '" + name + "' has the wrong shape");
    for (std::size_t i = 0; i < b.data.size(); ++i) t.values()[i] = static_cast<R>(b.data[i]);
}

} // namespace detail

template <typename R> Checkpoint to_checkpoint(TrainState<R> &st) {
    Checkpoint ck;
    ck.config_json = experiment_config_json(st.model.cfg);
    auto named = st.model.named_parameters();
    for (auto &[name, t] : named) ck.blobs.push_back(detail::tensor_blob(name, t));
    auto &bns = st.model.net.batch_norms();
    for (std::size_t i = 0; i < bns.size(); ++i) {
        const std::string p = "net.bn" + std::to_string(i);
        Blob mean, var;
        mean.name = p + ".running_mean";
        var.name = p + ".running_var";
        mean.shape = var.shape = {std::uint32_t(bns[i].running_mean.size())};
        for (R v : bns[i].running_mean) mean.data.push_back(float(v));
        for (R v : bns[i].running_var) var.data.push_back(float(v));
        ck.blobs.push_back(std::move(mean));
        ck.blobs.push_back(std::move(var));
    }
    if (st.opt && st.opt->steps() > 0) {
        const auto &m1 = st.opt->moments1();
        const auto &m2 = st.opt->moments2();
        for (std::size_t i = 0; i < named.size(); ++i) {
            Blob bm, bv;
            bm.name = "adam.m." + named[i].first;
            bv.name = "adam.v." + named[i].first;
            for (int d = 0; d < named[i].second.ndim(); ++d) {
                bm.shape.push_back(std::uint32_t(named[i].second.dim(d)));
                bv.shape.push_back(std::uint32_t(named[i].second.dim(d)));
            }
            for (double v : m1[i]) bm.data.push_back(float(v));
            for (double v : m2[i]) bv.data.push_back(float(v));
            ck.blobs.push_back(std::move(bm));
            ck.blobs.push_back(std::move(bv));
        }
        ck.counters["adam_t"] = st.opt->steps();
    }
    ck.counters["epochs"] = st.epochs_done;
    return ck;
}

template <typename R> TrainState<R> state_from_checkpoint(const Checkpoint &ck) {
    TrainState<R> st;
    const ExperimentConfig cfg = parse_experiment_config(ck.config_json);
    st.model = Model<R>::init(cfg);
    for (auto &[name, t] : st.model.named_parameters()) detail::load_blob(t, ck, name);
    auto &bns = st.model.net.batch_norms();
    for (std::size_t i = 0; i < bns.size(); ++i) {
        const std::string p = "net.bn" + std::to_string(i);
        const Blob &mean = ck.require(p + ".running_mean");
        const Blob &var = ck.require(p + ".running_var");
        if (mean.data.size() != bns[i].running_mean.size() ||
            var.data.size() != bns[i].running_var.size())
            throw DataError("checkpoint: batch-norm stat size mismatch");
        for (std::size_t j = 0; j < mean.data.size(); ++j) {
            bns[i].running_mean[j] = static_cast<R>(mean.data[j]);
            bns[i].running_var[j] = static_cast<R>(var.data[j]);
        }
    }
    st.epochs_done = ck.counter("epochs");
    const std::uint64_t adam_t = ck.counter("adam_t");
    if (adam_t > 0) {
        st.opt.emplace(st.model.parameters(), typename Adam<R>::Hyper{cfg.train.lr});
        auto named = st.model.named_parameters();
        auto &m1 = st.opt->moments1();
        auto &m2 = st.opt->moments2();
        for (std::size_t i = 0; i < named.size(); ++i) {
            const Blob &bm = ck.require("adam.m." + named[i].first);
            const Blob &bv = ck.require("adam.v." + named[i].first);
            if (bm.data.size() != m1[i].size() || bv.data.size() != m2[i].size())
                throw DataError("checkpoint: optimizer moment size mismatch");
            for (std::size_t j = 0; j < bm.data.size(); ++j) {
                m1[i][j] = double(bm.data[j]);
                m2[i][j] = double(bv.data[j]);
            }
        }
        st.opt->restore_step(adam_t);
    }
    return st;
}

template <typename R> void save_state(const std::string &path, TrainState<R> &st) {
    write_checkpoint(path, to_checkpoint(st));
}

template <typename R> TrainState<R> load_state(const std::string &path) {
    return state_from_checkpoint<R>(read_checkpoint(path));
}

// --------------------------------------------------------------- replicate

struct ReplicateCell {
    InputMode mode{};
    FusionVariant variant{};
    std::vector<double> seed_mdes;
    double median_mde = 0;
};

struct ReplicateTable {
    std::vector<InputMode> modes;
    std::vector<FusionVariant> variants;
    std::vector<std::vector<ReplicateCell>> cells; // [mode][variant]
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw ContractError("median: no values");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline int replicate_threads() {
    if (const char *env = std::getenv("CSI_LOCATE_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

// Train and evaluate every (mode, variant, seed) cell on one shared dataset;
// report the per-cell median MDE over seeds. Cells run on a worker pool
// capped by CSI_LOCATE_THREADS; each worker touches only its own model.
template <typename R>
ReplicateTable replicate_matrix(const ExperimentConfig &base,
                                const std::vector<CsiMeasurement> &train,
                                const std::vector<CsiMeasurement> &test,
                                const std::vector<InputMode> &modes,
                                const std::vector<FusionVariant> &variants, int num_seeds,
                                int threads, std::ostream *log = nullptr) {
    if (num_seeds < 1) throw ConfigError("replicate: need at least one seed");
    struct Task {
        std::size_t mi, vi;
        int s;
    };
    std::vector<Task> tasks;
    for (std::size_t mi = 0; mi < modes.size(); ++mi)
        for (std::size_t vi = 0; vi < variants.size(); ++vi)
            for (int s = 0; s < num_seeds; ++s) tasks.push_back({mi, vi, s});

    std::vector<double> mdes(tasks.size(), 0.0);
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    std::exception_ptr first_error;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task &t = tasks[i];
            try {
                ExperimentConfig cfg = base;
                cfg.mode = modes[t.mi];
                cfg.fusion = variants[t.vi];
                cfg.seed = base.seed + std::uint64_t(t.s);
                cfg.train.seed = cfg.seed;
                TrainState<R> st = init_state<R>(cfg);
                fit(st, train, cfg.train.epochs);
                const EvalOutput ev = evaluate_model(st.model, test);
                mdes[i] = ev.metrics.mde;
                if (log) {
                    std::lock_guard<std::mutex> lk(log_mu);
                    (*log) << "replicate: mode=" << to_string(cfg.mode)
                           << " fusion=" << to_string(cfg.fusion) << " seed=" << cfg.seed
                           << " mde=" << ev.metrics.mde << "\n";
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(log_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    const int nthreads = std::max(1, std::min<int>(threads, int(tasks.size())));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(nthreads));
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto &th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    ReplicateTable table;
    table.modes = modes;
    table.variants = variants;
    table.cells.assign(modes.size(), std::vector<ReplicateCell>(variants.size()));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto &cell = table.cells[tasks[i].mi][tasks[i].vi];
        cell.mode = modes[tasks[i].mi];
        cell.variant = variants[tasks[i].vi];
        cell.seed_mdes.push_back(mdes[i]);
    }
    for (auto &row : table.cells)
        for (auto &cell : row) cell.median_mde = median(cell.seed_mdes);
    return table;
}

} // namespace csiloc
