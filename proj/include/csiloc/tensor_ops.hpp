#ifndef CSILOC_TENSOR_OPS_HPP
#define CSILOC_TENSOR_OPS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"

// Differentiable ops over Tensor<R>. Conventions:
//  - matrices are row-major [rows, cols];
//  - backward closures accumulate (+=) into parent gradients;
//  - reductions and normalizations accumulate in double regardless of R.

namespace csiloc {

namespace detail {

template <typename R>
inline void check_matrix(const Tensor<R> &t, const char *op) {
    if (t.ndim() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + t.shape_str());
}

template <typename R>
inline void check_same_shape(const Tensor<R> &a, const Tensor<R> &b, const char *op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
}

// C(m×n) += A(m×k) · B(k×n)
template <typename R>
inline void mm_accum(const R *A, const R *B, R *C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R *arow = A + static_cast<std::size_t>(i) * k;
        R *crow = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const R a = arow[p];
            const R *brow = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C(k×n) += Aᵀ · B, with A(m×k), B(m×n)
template <typename R>
inline void mm_at_b_accum(const R *A, const R *B, R *C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R *arow = A + static_cast<std::size_t>(i) * k;
        const R *brow = B + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const R a = arow[p];
            R *crow = C + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C(m×k) += A · Bᵀ, with A(m×n), B(k×n)
template <typename R>
inline void mm_a_bt_accum(const R *A, const R *B, R *C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R *arow = A + static_cast<std::size_t>(i) * n;
        R *crow = C + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const R *brow = B + static_cast<std::size_t>(p) * n;
            double acc = 0;
            for (int j = 0; j < n; ++j) acc += double(arow[j]) * double(brow[j]);
            crow[p] += static_cast<R>(acc);
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename R> Tensor<R> add(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_same_shape(a, b, "add");
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a, b},
                              [an, bn](detail::TensorNode<R> &o) {
                                  if (an->requires_grad) {
                                      auto &g = an->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      auto &g = bn->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  }
                              });
}

template <typename R> Tensor<R> sub(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a, b},
                              [an, bn](detail::TensorNode<R> &o) {
                                  if (an->requires_grad) {
                                      auto &g = an->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      auto &g = bn->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                                  }
                              });
}

// Hadamard product.
template <typename R> Tensor<R> mul(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a, b},
                              [an, bn](detail::TensorNode<R> &o) {
                                  if (an->requires_grad) {
                                      auto &g = an->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          g[i] += o.grad[i] * bn->values[i];
                                  }
                                  if (bn->requires_grad) {
                                      auto &g = bn->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          g[i] += o.grad[i] * an->values[i];
                                  }
                              });
}

// y = alpha*x + beta, scalar constants.
template <typename R> Tensor<R> affine(const Tensor<R> &a, R alpha, R beta) {
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * a.values()[i] + beta;
    auto *an = a.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, alpha](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += alpha * o.grad[i];
                              });
}

template <typename R> Tensor<R> scale(const Tensor<R> &a, R alpha) { return affine(a, alpha, R(0)); }
template <typename R> Tensor<R> neg(const Tensor<R> &a) { return affine(a, R(-1), R(0)); }
template <typename R> Tensor<R> one_minus(const Tensor<R> &a) { return affine(a, R(-1), R(1)); }

template <typename R> Tensor<R> relu(const Tensor<R> &a) {
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > R(0) ? a.values()[i] : R(0);
    auto *an = a.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      if (an->values[i] > R(0)) g[i] += o.grad[i];
                              });
}

template <typename R> Tensor<R> sigmoid(const Tensor<R> &a) {
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = double(a.values()[i]);
        v[i] = static_cast<R>(x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x)));
    }
    auto *an = a.raw();
    std::vector<R> s = v;
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, s = std::move(s)](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += o.grad[i] * s[i] * (R(1) - s[i]);
                              });
}

template <typename R> Tensor<R> tanh_op(const Tensor<R> &a) {
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<R>(std::tanh(double(a.values()[i])));
    auto *an = a.raw();
    std::vector<R> t = v;
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, t = std::move(t)](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += o.grad[i] * (R(1) - t[i] * t[i]);
                              });
}

// ------------------------------------------------------------ linear algebra

template <typename R> Tensor<R> matmul(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_matrix(a, "matmul");
    detail::check_matrix(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                             b.shape_str());
    std::vector<R> v(static_cast<std::size_t>(m) * n, R(0));
    detail::mm_accum(a.values().data(), b.values().data(), v.data(), m, k, n);
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>({m, n}, std::move(v), {a, b},
                              [an, bn, m, k, n](detail::TensorNode<R> &o) {
                                  if (an->requires_grad)
                                      detail::mm_a_bt_accum(o.grad.data(), bn->values.data(),
                                                            an->grad_buffer().data(), m, k, n);
                                  if (bn->requires_grad)
                                      detail::mm_at_b_accum(an->values.data(), o.grad.data(),
                                                            bn->grad_buffer().data(), m, k, n);
                              });
}

template <typename R> Tensor<R> transpose(const Tensor<R> &a) {
    detail::check_matrix(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<R> v(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            v[static_cast<std::size_t>(j) * m + i] = a.values()[static_cast<std::size_t>(i) * n + j];
    auto *an = a.raw();
    return detail::make_op<R>({n, m}, std::move(v), {a},
                              [an, m, n](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (int i = 0; i < m; ++i)
                                      for (int j = 0; j < n; ++j)
                                          g[static_cast<std::size_t>(i) * n + j] +=
                                              o.grad[static_cast<std::size_t>(j) * m + i];
                              });
}

template <typename R> Tensor<R> reshape(const Tensor<R> &a, std::vector<int> shape) {
    if (detail::shape_numel(shape) != a.size())
        throw DimensionError("reshape: element count mismatch for " + a.shape_str());
    std::vector<R> v = a.values();
    auto *an = a.raw();
    return detail::make_op<R>(std::move(shape), std::move(v), {a},
                              [an](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                              });
}

// Broadcast-add a length-n vector across the rows of an [m, n] matrix.
template <typename R> Tensor<R> add_rowvec(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_matrix(a, "add_rowvec");
    const int m = a.dim(0), n = a.dim(1);
    if (static_cast<int>(b.size()) != n)
        throw DimensionError("add_rowvec: vector length " + b.shape_str() + " does not match " +
                             a.shape_str());
    std::vector<R> v(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            v[static_cast<std::size_t>(i) * n + j] =
                a.values()[static_cast<std::size_t>(i) * n + j] + b.values()[j];
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a, b},
                              [an, bn, m, n](detail::TensorNode<R> &o) {
                                  if (an->requires_grad) {
                                      auto &g = an->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      auto &g = bn->grad_buffer();
                                      for (int i = 0; i < m; ++i)
                                          for (int j = 0; j < n; ++j)
                                              g[j] += o.grad[static_cast<std::size_t>(i) * n + j];
                                  }
                              });
}

template <typename R> Tensor<R> concat_cols(const Tensor<R> &a, const Tensor<R> &b) {
    detail::check_matrix(a, "concat_cols");
    detail::check_matrix(b, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw DimensionError("concat_cols: row counts differ, " + a.shape_str() + " vs " +
                             b.shape_str());
    const int m = a.dim(0), p = a.dim(1), q = b.dim(1);
    std::vector<R> v(static_cast<std::size_t>(m) * (p + q));
    for (int i = 0; i < m; ++i) {
        std::copy_n(a.values().data() + static_cast<std::size_t>(i) * p, p,
                    v.data() + static_cast<std::size_t>(i) * (p + q));
        std::copy_n(b.values().data() + static_cast<std::size_t>(i) * q, q,
                    v.data() + static_cast<std::size_t>(i) * (p + q) + p);
    }
    auto *an = a.raw();
    auto *bn = b.raw();
    return detail::make_op<R>({m, p + q}, std::move(v), {a, b},
                              [an, bn, m, p, q](detail::TensorNode<R> &o) {
                                  for (int i = 0; i < m; ++i) {
                                      const R *grow = o.grad.data() + static_cast<std::size_t>(i) * (p + q);
                                      if (an->requires_grad) {
                                          R *g = an->grad_buffer().data() + static_cast<std::size_t>(i) * p;
                                          for (int j = 0; j < p; ++j) g[j] += grow[j];
                                      }
                                      if (bn->requires_grad) {
                                          R *g = bn->grad_buffer().data() + static_cast<std::size_t>(i) * q;
                                          for (int j = 0; j < q; ++j) g[j] += grow[p + j];
                                      }
                                  }
                              });
}

// ------------------------------------------------------------------ reductions

template <typename R> Tensor<R> sum(const Tensor<R> &a) {
    double acc = 0;
    for (R x : a.values()) acc += double(x);
    auto *an = a.raw();
    return detail::make_op<R>({1}, {static_cast<R>(acc)}, {a},
                              [an](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0];
                              });
}

template <typename R> Tensor<R> mean(const Tensor<R> &a) {
    double acc = 0;
    for (R x : a.values()) acc += double(x);
    const double n = double(a.size());
    auto *an = a.raw();
    return detail::make_op<R>({1}, {static_cast<R>(acc / n)}, {a},
                              [an, n](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  const R w = static_cast<R>(double(o.grad[0]) / n);
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += w;
                              });
}

// -------------------------------------------------------------- normalizations

// Row-wise softmax of an [m, n] matrix, numerically stabilized, accumulated in
// double so each output row sums to 1 well within 1e-6 even for R = float.
template <typename R> Tensor<R> softmax_rows(const Tensor<R> &a) {
    detail::check_matrix(a, "softmax_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<R> v(a.size());
    for (int i = 0; i < m; ++i) {
        const R *row = a.values().data() + static_cast<std::size_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) mx = std::max(mx, double(row[j]));
        double denom = 0;
        std::vector<double> e(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            e[j] = std::exp(double(row[j]) - mx);
            denom += e[j];
        }
        R *out = v.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[j] = static_cast<R>(e[j] / denom);
    }
    auto *an = a.raw();
    std::vector<R> s = v;
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, s = std::move(s), m, n](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (int i = 0; i < m; ++i) {
                                      const std::size_t off = static_cast<std::size_t>(i) * n;
                                      double dot = 0;
                                      for (int j = 0; j < n; ++j)
                                          dot += double(o.grad[off + j]) * double(s[off + j]);
                                      for (int j = 0; j < n; ++j)
                                          g[off + j] += static_cast<R>(
                                              double(s[off + j]) * (double(o.grad[off + j]) - dot));
                                  }
                              });
}

namespace detail {

template <typename R>
inline void l2_row_backward(const R *y, const R *g_out, R *g_in, int n, double norm) {
    double dot = 0;
    for (int j = 0; j < n; ++j) dot += double(y[j]) * double(g_out[j]);
    for (int j = 0; j < n; ++j)
        g_in[j] += static_cast<R>((double(g_out[j]) - double(y[j]) * dot) / norm);
}

} // namespace detail

// Normalize each row of an [m, n] matrix to unit Euclidean norm.
template <typename R> Tensor<R> l2_normalize_rows(const Tensor<R> &a) {
    detail::check_matrix(a, "l2_normalize_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<R> v(a.size());
    std::vector<double> norms(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const R *row = a.values().data() + static_cast<std::size_t>(i) * n;
        double acc = 0;
        for (int j = 0; j < n; ++j) acc += double(row[j]) * double(row[j]);
        const double norm = std::sqrt(acc);
        if (!(norm > 0))
            throw DegenerateInputError("l2_normalize_rows: zero-norm row");
        norms[i] = norm;
        R *out = v.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[j] = static_cast<R>(double(row[j]) / norm);
    }
    auto *an = a.raw();
    std::vector<R> y = v;
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, y = std::move(y), norms = std::move(norms), m,
                               n](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (int i = 0; i < m; ++i) {
                                      const std::size_t off = static_cast<std::size_t>(i) * n;
                                      detail::l2_row_backward(y.data() + off, o.grad.data() + off,
                                                              g.data() + off, n, norms[i]);
                                  }
                              });
}

// Normalize the whole tensor to unit Euclidean norm.
template <typename R> Tensor<R> l2_normalize(const Tensor<R> &a) {
    const int n = static_cast<int>(a.size());
    double acc = 0;
    for (R x : a.values()) acc += double(x) * double(x);
    const double norm = std::sqrt(acc);
    if (!(norm > 0)) throw DegenerateInputError("l2_normalize: zero-norm input");
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<R>(double(a.values()[i]) / norm);
    auto *an = a.raw();
    std::vector<R> y = v;
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, y = std::move(y), norm, n](detail::TensorNode<R> &o) {
                                  detail::l2_row_backward(y.data(), o.grad.data(),
                                                          an->grad_buffer().data(), n, norm);
                              });
}

// ----------------------------------------------------------------- block ops
// Batched complex-pipeline helpers. A "block tensor" stacks B equally sized
// [r, c] matrices along the row axis into one [B*r, c] tensor.

// Place each [r, c] block into the top-left corner of an [rows_out, cols_out]
// zero block.
template <typename R>
Tensor<R> block_zero_pad(const Tensor<R> &x, int blocks, int r, int c, int rows_out, int cols_out) {
    detail::check_matrix(x, "block_zero_pad");
    if (x.dim(0) != blocks * r || x.dim(1) != c)
        throw DimensionError("block_zero_pad: input shape " + x.shape_str() + " does not match " +
                             std::to_string(blocks) + " blocks of " + std::to_string(r) + "x" +
                             std::to_string(c));
    if (rows_out < r || cols_out < c)
        throw DimensionError("block_zero_pad: output block smaller than input block");
    std::vector<R> v(static_cast<std::size_t>(blocks) * rows_out * cols_out, R(0));
    for (int b = 0; b < blocks; ++b)
        for (int i = 0; i < r; ++i)
            std::copy_n(x.values().data() + (static_cast<std::size_t>(b) * r + i) * c, c,
                        v.data() + (static_cast<std::size_t>(b) * rows_out + i) * cols_out);
    auto *xn = x.raw();
    return detail::make_op<R>(
        {blocks * rows_out, cols_out}, std::move(v), {x},
        [xn, blocks, r, c, rows_out, cols_out](detail::TensorNode<R> &o) {
            auto &g = xn->grad_buffer();
            for (int b = 0; b < blocks; ++b)
                for (int i = 0; i < r; ++i) {
                    const R *src = o.grad.data() + (static_cast<std::size_t>(b) * rows_out + i) * cols_out;
                    R *dst = g.data() + (static_cast<std::size_t>(b) * r + i) * c;
                    for (int j = 0; j < c; ++j) dst[j] += src[j];
                }
        });
}

// Left-multiply every block by a shared [p, r] matrix: out_b = W · x_b.
template <typename R>
Tensor<R> block_matmul_left(const Tensor<R> &w, const Tensor<R> &x, int blocks) {
    detail::check_matrix(w, "block_matmul_left");
    detail::check_matrix(x, "block_matmul_left");
    const int p = w.dim(0), r = w.dim(1);
    if (blocks <= 0 || x.dim(0) % blocks != 0)
        throw DimensionError("block_matmul_left: row count not divisible by block count");
    if (x.dim(0) / blocks != r)
        throw DimensionError("block_matmul_left: block height " +
                             std::to_string(x.dim(0) / blocks) + " does not match W " +
                             w.shape_str());
    const int c = x.dim(1);
    std::vector<R> v(static_cast<std::size_t>(blocks) * p * c, R(0));
    for (int b = 0; b < blocks; ++b)
        detail::mm_accum(w.values().data(), x.values().data() + static_cast<std::size_t>(b) * r * c,
                         v.data() + static_cast<std::size_t>(b) * p * c, p, r, c);
    auto *wn = w.raw();
    auto *xn = x.raw();
    return detail::make_op<R>(
        {blocks * p, c}, std::move(v), {w, x},
        [wn, xn, blocks, p, r, c](detail::TensorNode<R> &o) {
            for (int b = 0; b < blocks; ++b) {
                const R *gb = o.grad.data() + static_cast<std::size_t>(b) * p * c;
                if (wn->requires_grad)
                    detail::mm_a_bt_accum(gb, xn->values.data() + static_cast<std::size_t>(b) * r * c,
                                          wn->grad_buffer().data(), p, r, c);
                if (xn->requires_grad)
                    detail::mm_at_b_accum(wn->values.data(), gb,
                                          xn->grad_buffer().data() + static_cast<std::size_t>(b) * r * c,
                                          p, r, c);
            }
        });
}

// Column-major vectorization of each block: out[b, j*r + i] = x[b*r + i, j].
template <typename R> Tensor<R> block_vec_cols(const Tensor<R> &x, int blocks, int r, int c) {
    detail::check_matrix(x, "block_vec_cols");
    if (x.dim(0) != blocks * r || x.dim(1) != c)
        throw DimensionError("block_vec_cols: input shape " + x.shape_str() + " does not match " +
                             std::to_string(blocks) + " blocks of " + std::to_string(r) + "x" +
                             std::to_string(c));
    std::vector<R> v(x.size());
    for (int b = 0; b < blocks; ++b)
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                v[static_cast<std::size_t>(b) * r * c + static_cast<std::size_t>(j) * r + i] =
                    x.values()[(static_cast<std::size_t>(b) * r + i) * c + j];
    auto *xn = x.raw();
    return detail::make_op<R>(
        {blocks, r * c}, std::move(v), {x},
        [xn, blocks, r, c](detail::TensorNode<R> &o) {
            auto &g = xn->grad_buffer();
            for (int b = 0; b < blocks; ++b)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        g[(static_cast<std::size_t>(b) * r + i) * c + j] +=
                            o.grad[static_cast<std::size_t>(b) * r * c +
                                   static_cast<std::size_t>(j) * r + i];
        });
}

// -------------------------------------------------------------- regularization

// Inverted dropout: in train mode keeps each entry with probability 1-p and
// scales by 1/(1-p); eval mode is the identity.
template <typename R> Tensor<R> dropout(const Tensor<R> &a, double p, Rng &rng, Mode mode) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must be in [0, 1)");
    if (mode == Mode::kEval || p == 0.0) return a;
    const R keep_scale = static_cast<R>(1.0 / (1.0 - p));
    std::vector<R> mask(a.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() >= p ? keep_scale : R(0);
    std::vector<R> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * mask[i];
    auto *an = a.raw();
    return detail::make_op<R>(a.shape(), std::move(v), {a},
                              [an, mask = std::move(mask)](detail::TensorNode<R> &o) {
                                  auto &g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += o.grad[i] * mask[i];
                              });
}

// Batch normalization over the rows of an [B, N] activation matrix with
// per-feature scale/shift and running statistics for eval mode. Batch variance
// is the biased estimate (divide by B) both for normalization and for the
// running-average update.
template <typename R> struct BatchNorm {
    Tensor<R> gamma;
    Tensor<R> beta;
    std::vector<R> running_mean;
    std::vector<R> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNorm(int features, double momentum_ = 0.1, double eps_ = 1e-5)
        : gamma(Tensor<R>::param({features}, std::vector<R>(features, R(1)))),
          beta(Tensor<R>::param({features}, std::vector<R>(features, R(0)))),
          running_mean(features, R(0)), running_var(features, R(1)), momentum(momentum_),
          eps(eps_) {}

    std::vector<Tensor<R>> parameters() { return {gamma, beta}; }

    Tensor<R> forward(const Tensor<R> &x, Mode mode) {
        detail::check_matrix(x, "batchnorm");
        const int B = x.dim(0), N = x.dim(1);
        if (static_cast<int>(running_mean.size()) != N)
            throw DimensionError("batchnorm: feature count " + std::to_string(N) +
                                 " does not match layer width " +
                                 std::to_string(running_mean.size()));
        if (mode == Mode::kTrain) {
            if (B < 2)
                throw DegenerateInputError("batchnorm: training batch must have at least 2 rows");
            std::vector<double> mu(N, 0.0), var(N, 0.0), invstd(N, 0.0);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < N; ++j) mu[j] += double(x.values()[std::size_t(i) * N + j]);
            for (int j = 0; j < N; ++j) mu[j] /= B;
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < N; ++j) {
                    const double d = double(x.values()[std::size_t(i) * N + j]) - mu[j];
                    var[j] += d * d;
                }
            for (int j = 0; j < N; ++j) {
                var[j] /= B;
                invstd[j] = 1.0 / std::sqrt(var[j] + eps);
            }
            for (int j = 0; j < N; ++j) {
                running_mean[j] = static_cast<R>((1.0 - momentum) * double(running_mean[j]) +
                                                 momentum * mu[j]);
                running_var[j] = static_cast<R>((1.0 - momentum) * double(running_var[j]) +
                                                momentum * var[j]);
            }
            std::vector<R> xhat(x.size());
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < N; ++j)
                    xhat[std::size_t(i) * N + j] = static_cast<R>(
                        (double(x.values()[std::size_t(i) * N + j]) - mu[j]) * invstd[j]);
            std::vector<R> v(x.size());
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < N; ++j)
                    v[std::size_t(i) * N + j] = gamma.values()[j] * xhat[std::size_t(i) * N + j] +
                                                beta.values()[j];
            auto *xn = x.raw();
            auto *gn = gamma.raw();
            auto *bn = beta.raw();
            return detail::make_op<R>(
                x.shape(), std::move(v), {x, gamma, beta},
                [xn, gn, bn, xhat = std::move(xhat), invstd = std::move(invstd), B,
                 N](detail::TensorNode<R> &o) {
                    // Column sums of g and g∘x̂ feed every input's gradient.
                    std::vector<double> sg(N, 0.0), sgx(N, 0.0);
                    for (int i = 0; i < B; ++i)
                        for (int j = 0; j < N; ++j) {
                            const double gij = double(o.grad[std::size_t(i) * N + j]);
                            sg[j] += gij;
                            sgx[j] += gij * double(xhat[std::size_t(i) * N + j]);
                        }
                    if (gn->requires_grad) {
                        auto &gg = gn->grad_buffer();
                        for (int j = 0; j < N; ++j) gg[j] += static_cast<R>(sgx[j]);
                    }
                    if (bn->requires_grad) {
                        auto &gb = bn->grad_buffer();
                        for (int j = 0; j < N; ++j) gb[j] += static_cast<R>(sg[j]);
                    }
                    if (xn->requires_grad) {
                        auto &gx = xn->grad_buffer();
                        for (int i = 0; i < B; ++i)
                            for (int j = 0; j < N; ++j) {
                                const std::size_t idx = std::size_t(i) * N + j;
                                const double gij = double(o.grad[idx]);
                                gx[idx] += static_cast<R>(
                                    double(gn->values[j]) * invstd[j] *
                                    (gij - sg[j] / B - double(xhat[idx]) * sgx[j] / B));
                            }
                    }
                });
        }
        // Eval: affine transform by the running statistics.
        std::vector<R> v(x.size());
        std::vector<double> invstd(N);
        for (int j = 0; j < N; ++j) invstd[j] = 1.0 / std::sqrt(double(running_var[j]) + eps);
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < N; ++j) {
                const std::size_t idx = std::size_t(i) * N + j;
                v[idx] = static_cast<R>(double(gamma.values()[j]) *
                                            (double(x.values()[idx]) - double(running_mean[j])) *
                                            invstd[j] +
                                        double(beta.values()[j]));
            }
        auto *xn = x.raw();
        auto *gn = gamma.raw();
        auto *bn = beta.raw();
        std::vector<double> rm(static_cast<std::size_t>(N));
        for (int j = 0; j < N; ++j) rm[std::size_t(j)] = double(running_mean[j]);
        return detail::make_op<R>(
            x.shape(), std::move(v), {x, gamma, beta},
            [xn, gn, bn, invstd = std::move(invstd), rm = std::move(rm), B,
             N](detail::TensorNode<R> &o) {
                if (gn->requires_grad || bn->requires_grad) {
                    std::vector<double> sg(static_cast<std::size_t>(N), 0.0),
                        sgx(static_cast<std::size_t>(N), 0.0);
                    for (int i = 0; i < B; ++i)
                        for (int j = 0; j < N; ++j) {
                            const std::size_t idx = std::size_t(i) * N + j;
                            const double gij = double(o.grad[idx]);
                            sg[j] += gij;
                            sgx[j] += gij * (double(xn->values[idx]) - rm[j]) * invstd[j];
                        }
                    if (gn->requires_grad) {
                        auto &gg = gn->grad_buffer();
                        for (int j = 0; j < N; ++j) gg[j] += static_cast<R>(sgx[j]);
                    }
                    if (bn->requires_grad) {
                        auto &gb = bn->grad_buffer();
                        for (int j = 0; j < N; ++j) gb[j] += static_cast<R>(sg[j]);
                    }
                }
                if (!xn->requires_grad) return;
                auto &gx = xn->grad_buffer();
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < N; ++j) {
                        const std::size_t idx = std::size_t(i) * N + j;
                        gx[idx] +=
                            static_cast<R>(double(o.grad[idx]) * double(gn->values[j]) * invstd[j]);
                    }
            });
    }
};

// ---------------------------------------------------------------------- losses

// Entry-wise binary cross-entropy between predictions p and targets y, averaged
// over all entries. Predictions are clamped to [eps, 1-eps]; clamped entries
// contribute zero gradient.
template <typename R>
Tensor<R> bce_entrywise(const Tensor<R> &p, const Tensor<R> &y, double eps = 1e-7) {
    detail::check_same_shape(p, y, "bce_entrywise");
    const std::size_t n = p.size();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(double(p.values()[i]), eps, 1.0 - eps);
        const double yv = double(y.values()[i]);
        acc += -(yv * std::log(pc) + (1.0 - yv) * std::log(1.0 - pc));
    }
    auto *pn = p.raw();
    auto *yn = y.raw();
    return detail::make_op<R>(
        {1}, {static_cast<R>(acc / double(n))}, {p, y},
        [pn, yn, eps, n](detail::TensorNode<R> &o) {
            if (!pn->requires_grad) return;
            auto &g = pn->grad_buffer();
            const double g0 = double(o.grad[0]) / double(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double pv = double(pn->values[i]);
                if (pv <= eps || pv >= 1.0 - eps) continue;
                const double yv = double(yn->values[i]);
                g[i] += static_cast<R>(g0 * (pv - yv) / (pv * (1.0 - pv)));
            }
        });
}

} // namespace csiloc

#endif
