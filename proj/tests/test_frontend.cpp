#include <cmath>
#include <complex>

#include "doctest.h"

#include "csiloc/features.hpp"
#include "csiloc/grad_check.hpp"
#include "csiloc/learned_frontend.hpp"
#include "csiloc/rng.hpp"

using namespace csiloc;
using cd = std::complex<double>;

namespace {

Cmat random_cmat(int r, int c, Rng &rng) {
    Cmat m(r, c);
    for (auto &z : m.v) z = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return m;
}

// max |designed[s] - learned[perm[s]]| over the whole feature vector
template <typename R>
double init_equivalence_gap(const Cmat &h, const LearnedFrontend<R> &fe) {
    auto designed = designed_features(h);
    auto learned = fe.forward_one(h);
    auto perm = circular_lag_permutation(fe.m_r, fe.w);
    double worst = 0;
    for (std::size_t s = 0; s < designed.size(); ++s)
        worst = std::max(worst, std::abs(designed[s] - double(learned.values()[perm[s]])));
    return worst;
}

} // namespace

TEST_CASE("initialization matches the DFT matrices") {
    auto fe = LearnedFrontend<double>::init(2, 4);
    // W1 = F_4^H
    auto want = dft_matrix_values(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(fe.w1.at(i, j).real() ==
                  doctest::Approx(std::conj(want[std::size_t(i) * 4 + j]).real()).epsilon(1e-7));
            CHECK(fe.w1.at(i, j).imag() ==
                  doctest::Approx(std::conj(want[std::size_t(i) * 4 + j]).imag()).epsilon(1e-7));
        }
    // W2 unitary: W2^H W2 = I
    NoGradGuard guard;
    auto eye = cmatmul(chermitian(fe.w2), fe.w2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(eye.at(i, j).real() == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-6));
            CHECK(eye.at(i, j).imag() == doctest::Approx(0.0).epsilon(1e-6));
        }
    CHECK(fe.w2.rows() == 4);  // 2*M_R
    CHECK(fe.w3.rows() == 8);  // 2*W
    for (auto &p : fe.parameters()) CHECK(p.requires_grad());
}

TEST_CASE("DFT-initialized front-end reproduces designed features (double)") {
    Rng rng(1001);
    for (int m_r : {1, 2}) {
        for (int w : {2, 4, 8}) {
            auto fe = LearnedFrontend<double>::init(m_r, w);
            NoGradGuard guard;
            for (int trial = 0; trial < 8; ++trial) {
                Cmat h = random_cmat(m_r, w, rng);
                CHECK(init_equivalence_gap(h, fe) < 1e-10);
            }
        }
    }
}

TEST_CASE("DFT-initialized front-end reproduces designed features (float)") {
    Rng rng(1002);
    auto fe = LearnedFrontend<float>::init(2, 8);
    NoGradGuard guard;
    for (int trial = 0; trial < 10; ++trial) {
        Cmat h = random_cmat(2, 8, rng);
        CHECK(init_equivalence_gap(h, fe) < 1e-5);
    }
}

TEST_CASE("batched forward equals per-sample forward") {
    Rng rng(33);
    const int m_r = 2, w = 4, B = 3;
    auto fe = LearnedFrontend<double>::init(m_r, w);
    NoGradGuard guard;
    std::vector<Cmat> hs;
    for (int b = 0; b < B; ++b) hs.push_back(random_cmat(m_r, w, rng));
    std::vector<const Cmat *> ptrs;
    for (auto &h : hs) ptrs.push_back(&h);
    auto batch = fe.forward(stack_csi_blocks<double>(ptrs), B);
    REQUIRE(batch.dim(0) == B);
    REQUIRE(batch.dim(1) == fe.feature_dim());
    for (int b = 0; b < B; ++b) {
        auto one = fe.forward_one(hs[b]);
        for (int s = 0; s < fe.feature_dim(); ++s)
            CHECK(batch.values()[std::size_t(b) * fe.feature_dim() + s] ==
                  doctest::Approx(one.values()[s]).epsilon(1e-12));
    }
}

TEST_CASE("phase invariance holds at init and for perturbed weights") {
    Rng rng(71);
    const int m_r = 2, w = 4;
    auto fe = LearnedFrontend<double>::init(m_r, w);
    // perturb all three matrices away from the DFT point
    for (auto &p : fe.parameters())
        for (auto &v : p.values()) v += rng.uniform(-0.05, 0.05);
    NoGradGuard guard;
    for (int trial = 0; trial < 5; ++trial) {
        Cmat h = random_cmat(m_r, w, rng);
        Cmat rotated = h;
        const cd phase = std::polar(1.0, rng.uniform(0, 2 * M_PI));
        for (auto &z : rotated.v) z *= phase;
        auto f1 = fe.forward_one(h);
        auto f2 = fe.forward_one(rotated);
        for (std::size_t i = 0; i < f1.size(); ++i)
            CHECK(std::abs(f1.values()[i] - f2.values()[i]) < 1e-6);
    }
}

TEST_CASE("all-zero CSI is degenerate") {
    auto fe = LearnedFrontend<double>::init(2, 4);
    NoGradGuard guard;
    Cmat h(2, 4);
    CHECK_THROWS_AS(fe.forward_one(h), DegenerateInputError);
}

TEST_CASE("gradients reach all three matrices") {
    Rng rng(88);
    auto fe = LearnedFrontend<double>::init(1, 2);
    Cmat h = random_cmat(1, 2, rng);
    auto f = fe.forward_one(h);
    backward(sum(f));
    for (auto &p : fe.parameters()) {
        REQUIRE(p.has_grad());
        double asum = 0;
        for (double g : p.grad()) {
            CHECK(std::isfinite(g));
            asum += std::abs(g);
        }
        CHECK(asum > 0.0);
    }
}

TEST_CASE("front-end gradients match finite differences") {
    Rng rng(99);
    const int m_r = 1, w = 2;
    auto fe = LearnedFrontend<double>::init(m_r, w);
    Cmat h = random_cmat(m_r, w, rng);
    std::vector<double> wvec(std::size_t(fe.feature_dim()));
    for (auto &x : wvec) x = rng.uniform(-1, 1);
    auto weight = Tensor<double>::from({1, fe.feature_dim()}, wvec);
    auto fn = [&] { return sum(mul(fe.forward_one(h), weight)); };
    auto rep = grad_check<double>(fn, fe.parameters());
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.max_rel_err < 1e-7); // should be far tighter in double
}
