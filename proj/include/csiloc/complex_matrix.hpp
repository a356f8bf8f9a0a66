#ifndef CSILOC_COMPLEX_MATRIX_HPP
#define CSILOC_COMPLEX_MATRIX_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "csiloc/tensor.hpp"
#include "csiloc/tensor_ops.hpp"

// Complex matrices for the differentiable pipeline, carried as a pair of real
// tensors so the autodiff core stays real-valued. A complex product expands to
// four real products.

namespace csiloc {

template <typename R> struct ComplexMatrix {
    Tensor<R> re;
    Tensor<R> im;

    ComplexMatrix() = default;
    ComplexMatrix(Tensor<R> re_, Tensor<R> im_) : re(std::move(re_)), im(std::move(im_)) {
        detail::check_same_shape(re, im, "complex matrix");
    }

    int rows() const { return re.dim(0); }
    int cols() const { return re.dim(1); }

    static ComplexMatrix zeros(int r, int c) {
        return {Tensor<R>::zeros({r, c}), Tensor<R>::zeros({r, c})};
    }

    static ComplexMatrix from(int r, int c, const std::vector<std::complex<double>> &v) {
        if (v.size() != static_cast<std::size_t>(r) * c)
            throw DimensionError("complex matrix: value count does not match shape");
        std::vector<R> re(v.size()), im(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            re[i] = static_cast<R>(v[i].real());
            im[i] = static_cast<R>(v[i].imag());
        }
        return {Tensor<R>::from({r, c}, std::move(re)), Tensor<R>::from({r, c}, std::move(im))};
    }

    // Mark both parts trainable.
    ComplexMatrix &make_param() {
        re.set_requires_grad(true);
        im.set_requires_grad(true);
        return *this;
    }

    std::complex<double> at(int i, int j) const {
        const std::size_t idx = static_cast<std::size_t>(i) * cols() + j;
        return {double(re.values()[idx]), double(im.values()[idx])};
    }
};

template <typename R>
ComplexMatrix<R> cmatmul(const ComplexMatrix<R> &a, const ComplexMatrix<R> &b) {
    return {sub(matmul(a.re, b.re), matmul(a.im, b.im)),
            add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

template <typename R> ComplexMatrix<R> cconj(const ComplexMatrix<R> &a) {
    return {a.re, neg(a.im)};
}

template <typename R> ComplexMatrix<R> ctranspose(const ComplexMatrix<R> &a) {
    return {transpose(a.re), transpose(a.im)};
}

template <typename R> ComplexMatrix<R> chermitian(const ComplexMatrix<R> &a) {
    return {transpose(a.re), neg(transpose(a.im))};
}

// Entry-wise |z|^2, a real tensor.
template <typename R> Tensor<R> cabs2(const ComplexMatrix<R> &a) {
    return add(mul(a.re, a.re), mul(a.im, a.im));
}

// Batched (block-stacked) complex left-multiplication: out_b = W · x_b.
template <typename R>
ComplexMatrix<R> cblock_matmul_left(const ComplexMatrix<R> &w, const ComplexMatrix<R> &x,
                                    int blocks) {
    return {sub(block_matmul_left(w.re, x.re, blocks), block_matmul_left(w.im, x.im, blocks)),
            add(block_matmul_left(w.re, x.im, blocks), block_matmul_left(w.im, x.re, blocks))};
}

template <typename R>
ComplexMatrix<R> cblock_zero_pad(const ComplexMatrix<R> &x, int blocks, int r, int c, int rows_out,
                                 int cols_out) {
    return {block_zero_pad(x.re, blocks, r, c, rows_out, cols_out),
            block_zero_pad(x.im, blocks, r, c, rows_out, cols_out)};
}

// Unitary n-point DFT matrix: F[j,k] = exp(-2πi jk/n)/√n.
inline std::vector<std::complex<double>> dft_matrix_values(int n) {
    std::vector<std::complex<double>> v(static_cast<std::size_t>(n) * n);
    const double s = 1.0 / std::sqrt(double(n));
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            const double ang = -2.0 * M_PI * double(j) * double(k) / double(n);
            v[static_cast<std::size_t>(j) * n + k] = std::polar(s, ang);
        }
    return v;
}

template <typename R> ComplexMatrix<R> dft_matrix(int n) {
    return ComplexMatrix<R>::from(n, n, dft_matrix_values(n));
}

// Conjugate (inverse) unitary DFT matrix.
template <typename R> ComplexMatrix<R> idft_matrix(int n) {
    auto v = dft_matrix_values(n);
    for (auto &z : v) z = std::conj(z);
    return ComplexMatrix<R>::from(n, n, v);
}

template <typename R> ComplexMatrix<R> cidentity(int n) {
    std::vector<R> re(static_cast<std::size_t>(n) * n, R(0));
    for (int i = 0; i < n; ++i) re[static_cast<std::size_t>(i) * n + i] = R(1);
    return {Tensor<R>::from({n, n}, std::move(re)), Tensor<R>::zeros({n, n})};
}

} // namespace csiloc

#endif
