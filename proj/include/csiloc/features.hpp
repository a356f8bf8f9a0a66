#ifndef CSILOC_FEATURES_HPP
#define CSILOC_FEATURES_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "csiloc/errors.hpp"

// Hand-designed CSI feature pipeline: delay-domain transform, instantaneous
// 2D autocorrelation over antenna and delay lags, real decomposition, l2
// normalization. Pure double-precision reference path (no autodiff); the
// trainable front-end must reproduce it at initialization.

namespace csiloc {

// Small dense complex matrix, row-major.
struct Cmat {
    int rows = 0;
    int cols = 0;
    std::vector<std::complex<double>> v;

    Cmat() = default;
    Cmat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c) {
        if (r <= 0 || c <= 0) throw DimensionError("Cmat dimensions must be positive");
    }

    std::complex<double> &at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    const std::complex<double> &at(int i, int j) const {
        return v[static_cast<std::size_t>(i) * cols + j];
    }
};

// Antenna/delay lag layout of the autocorrelation matrix: rows kappa=1..2M_R
// hold antenna lags kappa-M_R, columns tau=1..2W hold delay lags tau-W. The
// zero-lag entry therefore sits at 0-based (M_R-1, W-1), and Hermitian lag
// symmetry reads R[i][j] = conj(R[2M_R-2-i... ]) via kappa' = 2M_R-kappa,
// tau' = 2W-tau (offsets Delta-kappa = Delta-tau = 0). The row kappa=2M_R and
// column tau=2W carry the out-of-range lag +M_R / +W and are identically zero.
inline int autocorr_zero_lag_row(int m_r) { return m_r - 1; }
inline int autocorr_zero_lag_col(int w) { return w - 1; }

// Delay-domain transform: Hhat = H F_W^H with F_W the unitary W-point DFT,
// applied over the used subcarriers only.
inline Cmat delay_transform(const Cmat &h) {
    const int m_r = h.rows, w = h.cols;
    Cmat out(m_r, w);
    const double s = 1.0 / std::sqrt(double(w));
    for (int m = 0; m < m_r; ++m)
        for (int d = 0; d < w; ++d) {
            std::complex<double> acc{0, 0};
            for (int k = 0; k < w; ++k) {
                // (F^H)[k,d] = conj(F[k,d]) = s * exp(+2*pi*i*k*d/W)
                const double ang = 2.0 * M_PI * double(k) * double(d) / double(w);
                acc += h.at(m, k) * std::polar(s, ang);
            }
            out.at(m, d) = acc;
        }
    return out;
}

// Instantaneous 2D autocorrelation, linear correlation with implicit zero
// extension: R[kappa,tau] = sum_{m,k} Hhat[m,k] conj(Hhat[m+kappa-M_R,
// k+tau-W]). Summation is restricted to in-range index pairs, which is exactly
// the zero-extension of the double sum.
inline Cmat autocorrelation_direct(const Cmat &hhat) {
    const int m_r = hhat.rows, w = hhat.cols;
    Cmat out(2 * m_r, 2 * w);
    for (int i = 0; i < 2 * m_r; ++i) {
        const int lag_a = i + 1 - m_r;  // antenna lag, kappa - M_R
        const int m_lo = std::max(0, -lag_a);
        const int m_hi = std::min(m_r, m_r - lag_a); // m and m+lag_a both in range
        if (m_lo >= m_hi) continue;                  // all-zero padding row
        for (int j = 0; j < 2 * w; ++j) {
            const int lag_d = j + 1 - w;             // delay lag, tau - W
            const int k_lo = std::max(0, -lag_d);
            const int k_hi = std::min(w, w - lag_d);
            if (k_lo >= k_hi) continue;
            std::complex<double> acc{0, 0};
            for (int m = m_lo; m < m_hi; ++m)
                for (int k = k_lo; k < k_hi; ++k)
                    acc += hhat.at(m, k) * std::conj(hhat.at(m + lag_a, k + lag_d));
            out.at(i, j) = acc;
        }
    }
    return out;
}

// Column-wise vectorization, real decomposition [Re; Im], l2 normalization.
inline std::vector<double> make_feature(const Cmat &r) {
    const std::size_t half = r.v.size();
    std::vector<double> f(2 * half);
    for (int j = 0; j < r.cols; ++j)
        for (int i = 0; i < r.rows; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j) * r.rows + i;
            f[idx] = r.at(i, j).real();
            f[half + idx] = r.at(i, j).imag();
        }
    double n2 = 0;
    for (double x : f) n2 += x * x;
    const double norm = std::sqrt(n2);
    if (!(norm > 0)) throw DegenerateInputError("make_feature: all-zero autocorrelation");
    for (double &x : f) x /= norm;
    return f;
}

inline std::vector<double> designed_features(const Cmat &h) {
    return make_feature(autocorrelation_direct(delay_transform(h)));
}

// Feature length for a given CSI shape: 2 * (2 M_R) * (2 W).
inline int feature_length(int m_r, int w) { return 8 * m_r * w; }

// Index permutation relating the trainable front-end's circular lag layout to
// the designed layout above: designed feature index s maps to circular index
// perm[s]. Derived from zero-padded circular autocorrelation, where circular
// shift a equals negated linear lag: a = (M_R-1-i) mod 2M_R, d = (W-1-j) mod
// 2W, identical on the imaginary half.
inline std::vector<int> circular_lag_permutation(int m_r, int w) {
    const int rows = 2 * m_r, cols = 2 * w;
    const int half = rows * cols;
    std::vector<int> perm(static_cast<std::size_t>(2) * half);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const int a = ((m_r - 1 - i) % rows + rows) % rows;
            const int d = ((w - 1 - j) % cols + cols) % cols;
            const int designed = j * rows + i;
            const int circular = d * rows + a;
            perm[designed] = circular;
            perm[half + designed] = half + circular;
        }
    return perm;
}

} // namespace csiloc

#endif
