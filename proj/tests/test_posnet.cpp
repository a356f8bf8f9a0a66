#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"

#include "csiloc/channel_sim.hpp"
#include "csiloc/features.hpp"
#include "csiloc/grad_check.hpp"
#include "csiloc/learned_frontend.hpp"
#include "csiloc/posnet.hpp"

using namespace csiloc;

namespace {

// small simulated dataset with designed features and reference-map targets
template <typename R>
struct ToySet {
    std::vector<std::vector<R>> xs, ys;
    std::vector<Vec2> pos;
    Grid grid;
};

template <typename R>
ToySet<R> make_toyset(int n, int m_r, int w, int grid_side, std::uint64_t seed) {
    SimConfig cfg;
    cfg.m_r = m_r;
    cfg.w = w;
    cfg.area_w = cfg.area_h = 4.0;
    cfg.num_paths = 1;
    cfg.los = true;
    cfg.seed = seed;
    ChannelSim sim(cfg);
    ToySet<R> set{{}, {}, {}, Grid::cell_centered(4.0, 4.0, grid_side, grid_side)};
    Rng rng = Rng::stream(seed, 12345);
    for (int i = 0; i < n; ++i) {
        const Vec2 p{set.grid.min_x() + rng.uniform() * (set.grid.max_x() - set.grid.min_x()),
                     set.grid.min_y() + rng.uniform() * (set.grid.max_y() - set.grid.min_y())};
        auto m = sim.synthesize(p, rng);
        auto f = designed_features(m.h);
        set.xs.emplace_back(f.begin(), f.end());
        auto ref = reference_map(p, set.grid);
        set.ys.emplace_back(ref.begin(), ref.end());
        set.pos.push_back(p);
    }
    return set;
}

double map_entropy(const std::vector<float> &p) {
    double h = 0;
    for (float x : p)
        if (x > 0) h -= double(x) * std::log(double(x));
    return h;
}

} // namespace

TEST_CASE("glorot init variance matches 2/(fan_in+fan_out)") {
    Rng rng(7);
    for (auto [in, out] : {std::pair{200, 100}, std::pair{968, 512}}) {
        Dense<float> d(in, out, rng);
        const auto &w = d.w.values();
        REQUIRE(w.size() >= 10000);
        double mean = 0;
        for (float x : w) mean += x;
        mean /= double(w.size());
        double var = 0;
        for (float x : w) var += (x - mean) * (x - mean);
        var /= double(w.size());
        const double want = 2.0 / (in + out);
        CHECK(std::abs(var - want) / want < 0.10);
        // bias starts at zero
        for (float x : d.b.values()) CHECK(x == 0.0f);
    }
}

TEST_CASE("construction validation") {
    Rng rng(1);
    PosNetConfig cfg;
    cfg.hidden = {8, 8};
    CHECK_THROWS_AS(PosNet<float>(0, 4, cfg, rng), DimensionError);
    CHECK_THROWS_AS(PosNet<float>(8, 0, cfg, rng), DimensionError);
    PosNetConfig empty;
    empty.hidden.clear();
    CHECK_THROWS_AS(PosNet<float>(8, 4, empty, rng), ConfigError);
    PosNetConfig bad = cfg;
    bad.dropout_rate = 1.0;
    CHECK_THROWS_AS(PosNet<float>(8, 4, bad, rng), ConfigError);
}

TEST_CASE("forward emits valid probability maps and eval is deterministic") {
    Rng rng(3);
    PosNetConfig cfg;
    cfg.hidden = {32, 24, 16};
    PosNet<float> net(40, 32, cfg, rng);
    std::vector<std::vector<float>> xs;
    for (int i = 0; i < 8; ++i) {
        std::vector<float> x(40);
        for (auto &v : x) v = float(rng.normal());
        xs.push_back(x);
    }
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    auto x = rows_to_tensor(xs, idx);
    auto p1 = net.forward(x, Mode::kEval);
    auto p2 = net.forward(x, Mode::kEval);
    REQUIRE(p1.dim(0) == 8);
    REQUIRE(p1.dim(1) == 32);
    for (int r = 0; r < 8; ++r) {
        double sum = 0;
        for (int k = 0; k < 32; ++k) {
            const float v = p1.values()[std::size_t(r) * 32 + k];
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK(p1.values() == p2.values()); // pure function of (input, params)

    // width mismatch rejected; train-mode dropout requires an rng
    auto bad = Tensor<float>::zeros({2, 39});
    CHECK_THROWS_AS(net.forward(bad, Mode::kEval), DimensionError);
    auto ok = Tensor<float>::zeros({2, 40});
    CHECK_THROWS_AS(net.forward(ok, Mode::kTrain), ContractError);
}

TEST_CASE("glorot-initialized net is near-uniform: entropy within 5% of log K") {
    const int kK = 64, kIn = 128;
    const double log_k = std::log(double(kK));
    double mean_entropy = 0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(std::uint64_t(seed) + 1);
        PosNetConfig cfg;
        cfg.hidden = {64, 48};
        PosNet<float> net(kIn, kK, cfg, rng);
        std::vector<float> x(kIn);
        double nrm = 0;
        for (auto &v : x) {
            v = float(rng.normal());
            nrm += double(v) * double(v);
        }
        for (auto &v : x) v = float(v / std::sqrt(nrm)); // unit-norm like real features
        auto p = net.forward(Tensor<float>::from({1, kIn}, x), Mode::kEval);
        const double h = map_entropy(p.values());
        CHECK(h <= log_k + 1e-6);
        CHECK(h > 0.95 * log_k);
        mean_entropy += h;
    }
    mean_entropy /= 100.0;
    CHECK(std::abs(mean_entropy - log_k) / log_k < 0.05);
}

TEST_CASE("bce on a perfect one-hot prediction is below 1e-5") {
    auto y = Tensor<double>::from({1, 4}, {1, 0, 0, 0});
    auto p = Tensor<double>::from({1, 4}, {1, 0, 0, 0}); // clamped internally
    auto loss = bce_entrywise(p, y);
    CHECK(loss.scalar() < 1e-5);
}

TEST_CASE("adam: first step moves each coordinate by about lr, zero lr freezes") {
    auto w = Tensor<double>::param({1, 2}, {0.5, -0.25});
    auto c = Tensor<double>::from({1, 2}, {3.0, -7.0});
    {
        Adam<double> opt({w}, {1e-2});
        auto loss = sum(mul(w, c));
        backward(loss);
        opt.step();
        // bias-corrected first step is lr * g/(|g|+eps) = lr * sign(g)
        CHECK(w.values()[0] == doctest::Approx(0.5 - 1e-2).epsilon(1e-6));
        CHECK(w.values()[1] == doctest::Approx(-0.25 + 1e-2).epsilon(1e-6));
        CHECK(opt.steps() == 1);
    }
    {
        auto v = Tensor<double>::param({1, 2}, {1.0, 2.0});
        Adam<double> opt({v}, {0.0});
        auto loss = sum(mul(v, c));
        backward(loss);
        opt.step();
        CHECK(v.values()[0] == 1.0);
        CHECK(v.values()[1] == 2.0);
    }
    CHECK_THROWS_AS(Adam<double>({w}, {1e-3, 1.5}), ConfigError);
}

TEST_CASE("training loss strictly decreases over the first 10 epochs") {
    auto set = make_toyset<float>(256, 2, 8, 4, 11);
    Rng rng(2);
    PosNetConfig cfg;
    cfg.hidden = {64, 32};
    PosNet<float> net(int(set.xs[0].size()), set.grid.num_points(), cfg, rng);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 10;
    tc.batch = 32;
    tc.seed = 5;
    auto curve = train_posnet(net, set.xs, set.ys, tc);
    REQUIRE(curve.size() == 10);
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] < curve[i - 1]);
}

TEST_CASE("capacity: overfits 256 samples to train MDE below grid spacing") {
    auto set = make_toyset<float>(256, 2, 8, 4, 13);
    Rng rng(4);
    PosNetConfig cfg;
    cfg.hidden = {96, 48};
    cfg.dropout_rate = 0.0;
    PosNet<float> net(int(set.xs[0].size()), set.grid.num_points(), cfg, rng);
    TrainConfig tc;
    tc.lr = 2e-3;
    tc.batch = 32;
    tc.seed = 6;
    double mde = 1e9;
    for (int block = 0; block < 10 && mde >= set.grid.dx; ++block) {
        tc.epochs = 50; // up to 500 total
        train_posnet(net, set.xs, set.ys, tc);
        mde = evaluate_posnet(net, set.xs, set.pos, set.grid).mde;
    }
    CHECK(mde < set.grid.dx);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto set = make_toyset<float>(32, 1, 4, 3, 17);
    Rng rng(5);
    PosNetConfig cfg;
    cfg.hidden = {16, 8};
    PosNet<float> net(int(set.xs[0].size()), set.grid.num_points(), cfg, rng);
    std::vector<std::vector<float>> before;
    for (auto &p : net.parameters()) before.push_back(p.values());
    TrainConfig tc;
    tc.lr = 0.0;
    tc.epochs = 2;
    tc.batch = 8;
    auto curve = train_posnet(net, set.xs, set.ys, tc);
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].values() == before[i]);
}

TEST_CASE("error metrics: hand percentiles, permutation invariance, exact predictions") {
    auto m = error_metrics({5, 1, 4, 2, 3});
    CHECK(m.mde == doctest::Approx(3.0));
    CHECK(m.p50 == doctest::Approx(3.0));
    CHECK(m.p90 == doctest::Approx(4.6));
    CHECK(m.p95 == doctest::Approx(4.8));
    auto m2 = error_metrics({3, 2, 1, 5, 4});
    CHECK(m2.mde == m.mde);
    CHECK(m2.p90 == m.p90);
    CHECK_THROWS_AS(error_metrics({}), ContractError);

    std::vector<PositionEstimate> est{{{1, 2}, {}}, {{3, 4}, {}}};
    std::vector<Vec2> truth{{1, 2}, {3, 4}};
    auto errs = position_errors(est, truth);
    CHECK(error_metrics(errs).mde == 0.0);
}

TEST_CASE("constant centroid prediction matches the mean-distance oracle") {
    // uniform positions on [0,L]^2 against the center: closed form
    // (L/6)(sqrt 2 + asinh 1) = 0.382598 L
    const double kL = 3.0;
    Rng rng(23);
    std::vector<PositionEstimate> est;
    std::vector<Vec2> truth;
    for (int i = 0; i < 20000; ++i) {
        truth.push_back({rng.uniform(0, kL), rng.uniform(0, kL)});
        est.push_back({{kL / 2, kL / 2}, {}});
    }
    const double mde = error_metrics(position_errors(est, truth)).mde;
    const double oracle = kL * (std::sqrt(2.0) + std::log(1.0 + std::sqrt(2.0))) / 6.0;
    CHECK(std::abs(mde - oracle) / oracle < 0.02);
}

TEST_CASE("shuffled labels do not train below true labels") {
    std::vector<double> true_final, shuf_final;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto set = make_toyset<float>(128, 2, 4, 3, 100 + seed);
        auto shuffled = set.ys;
        Rng perm(seed);
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[perm.uniform_index(i)]);

        TrainConfig tc;
        tc.lr = 1e-3;
        tc.epochs = 30;
        tc.batch = 32;
        tc.seed = seed;
        PosNetConfig cfg;
        cfg.hidden = {48, 24};

        Rng r1(seed * 7 + 1), r2(seed * 7 + 1);
        PosNet<float> net_t(int(set.xs[0].size()), set.grid.num_points(), cfg, r1);
        PosNet<float> net_s(int(set.xs[0].size()), set.grid.num_points(), cfg, r2);
        true_final.push_back(train_posnet(net_t, set.xs, set.ys, tc).back());
        shuf_final.push_back(train_posnet(net_s, set.xs, shuffled, tc).back());
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    CHECK(median(shuf_final) >= median(true_final));
}

TEST_CASE("end-to-end gradient check: frontend -> posnet -> bce") {
    const int kMr = 1, kW = 2, kK = 4;
    auto fe = LearnedFrontend<double>::init(kMr, kW);
    Rng rng(31);
    PosNetConfig cfg;
    cfg.hidden = {6, 5};
    cfg.dropout_rate = 0.0;
    PosNet<double> net(fe.feature_dim(), kK, cfg, rng);

    // two fixed CSI matrices and a fixed target map
    Cmat h1(kMr, kW), h2(kMr, kW);
    h1.v = {{0.3, -0.2}, {0.8, 0.5}};
    h2.v = {{-0.4, 0.9}, {0.1, -0.6}};
    auto y = Tensor<double>::from({2, kK}, {0.7, 0.1, 0.1, 0.1, 0.05, 0.15, 0.5, 0.3});

    auto params = fe.parameters();
    for (auto &p : net.parameters()) params.push_back(p);
    auto loss_fn = [&]() {
        auto x = fe.forward(stack_csi_blocks<double>({&h1, &h2}), 2);
        auto p = net.forward(x, Mode::kEval); // BN eval, dropout off
        return bce_entrywise(p, y);
    };
    auto rep = grad_check<double>(loss_fn, params, 1e-5);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    auto set = make_toyset<float>(16, 1, 4, 3, 19);
    Rng rng(6);
    PosNetConfig cfg;
    cfg.hidden = {8};
    PosNet<float> net(int(set.xs[0].size()), set.grid.num_points(), cfg, rng);
    // poison one output weight (hidden-layer NaNs would be masked by relu)
    net.output_layer().w.values()[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch = 8;
    CHECK_THROWS_AS(train_posnet(net, set.xs, set.ys, tc), NumericalError);
}
