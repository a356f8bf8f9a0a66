#ifndef CSILOC_LEARNED_FRONTEND_HPP
#define CSILOC_LEARNED_FRONTEND_HPP

#include <vector>

#include "csiloc/complex_matrix.hpp"
#include "csiloc/features.hpp"
#include "csiloc/tensor.hpp"
#include "csiloc/tensor_ops.hpp"

// Trainable structured front-end: delay transform with trainable W1, then a
// Wiener-Khinchin autocorrelation with trainable W2/W3 on the zero-padded
// matrix, real decomposition and l2 normalization. At DFT initialization the
// output equals the designed feature pipeline up to a fixed circular-shift
// index permutation (circular_lag_permutation) and a positive scale absorbed
// by normalization.

namespace csiloc {

template <typename R> struct LearnedFrontend {
    int m_r = 0;
    int w = 0;
    ComplexMatrix<R> w1; // W x W, init F_W^H
    ComplexMatrix<R> w2; // 2M_R x 2M_R, init F_{2M_R}
    ComplexMatrix<R> w3; // 2W x 2W, init F_{2W}

    static LearnedFrontend init(int m_r, int w) {
        if (m_r < 1 || w < 1) throw ConfigError("frontend: M_R and W must be >= 1");
        LearnedFrontend fe;
        fe.m_r = m_r;
        fe.w = w;
        fe.w1 = idft_matrix<R>(w).make_param();
        fe.w2 = dft_matrix<R>(2 * m_r).make_param();
        fe.w3 = dft_matrix<R>(2 * w).make_param();
        return fe;
    }

    std::vector<Tensor<R>> parameters() {
        return {w1.re, w1.im, w2.re, w2.im, w3.re, w3.im};
    }

    int feature_dim() const { return feature_length(m_r, w); }

    // Batched forward: `h` stacks B measurements of shape M_R x W along the
    // row axis ([B*M_R, W]); returns one unit-norm feature row per
    // measurement, [B, 8*M_R*W]. Differentiable into W1, W2, W3 and h.
    Tensor<R> forward(const ComplexMatrix<R> &h, int blocks) const {
        if (h.cols() != w || h.rows() != blocks * m_r)
            throw DimensionError("frontend: CSI block stack is " + h.re.shape_str() +
                                 ", expected " + std::to_string(blocks * m_r) + "x" +
                                 std::to_string(w));
        const int r2 = 2 * m_r, c2 = 2 * w;
        // Delay-domain transform with trainable W1 (right-multiply acts per block).
        ComplexMatrix<R> hhat = cmatmul(h, w1);
        ComplexMatrix<R> hz = cblock_zero_pad(hhat, blocks, m_r, w, r2, c2);
        // Power spectrum |W2 Hz W3|^2.
        ComplexMatrix<R> y = cblock_matmul_left(w2, hz, blocks);
        y = cmatmul(y, w3);
        Tensor<R> p = cabs2(y);
        // Back-transform: W2^H P W3^H with P real.
        Tensor<R> w2h_re = transpose(w2.re);
        Tensor<R> w2h_im = neg(transpose(w2.im));
        ComplexMatrix<R> c1{block_matmul_left(w2h_re, p, blocks),
                            block_matmul_left(w2h_im, p, blocks)};
        ComplexMatrix<R> rhat = cmatmul(c1, chermitian(w3));
        // Column-wise vec per block, [Re; Im], unit norm.
        Tensor<R> re_v = block_vec_cols(rhat.re, blocks, r2, c2);
        Tensor<R> im_v = block_vec_cols(rhat.im, blocks, r2, c2);
        return l2_normalize_rows(concat_cols(re_v, im_v));
    }

    // Single-measurement convenience (no gradients needed by callers that use
    // this; still differentiable).
    Tensor<R> forward_one(const Cmat &h) const {
        std::vector<R> re(h.v.size()), im(h.v.size());
        for (std::size_t i = 0; i < h.v.size(); ++i) {
            re[i] = static_cast<R>(h.v[i].real());
            im[i] = static_cast<R>(h.v[i].imag());
        }
        ComplexMatrix<R> hc{Tensor<R>::from({h.rows, h.cols}, std::move(re)),
                            Tensor<R>::from({h.rows, h.cols}, std::move(im))};
        return forward(hc, 1);
    }
};

// Stack measurements into the block layout forward() expects.
template <typename R>
ComplexMatrix<R> stack_csi_blocks(const std::vector<const Cmat *> &hs) {
    if (hs.empty()) throw ContractError("stack_csi_blocks: empty batch");
    const int m_r = hs[0]->rows, w = hs[0]->cols;
    const int blocks = static_cast<int>(hs.size());
    std::vector<R> re(static_cast<std::size_t>(blocks) * m_r * w);
    std::vector<R> im(re.size());
    for (int b = 0; b < blocks; ++b) {
        if (hs[b]->rows != m_r || hs[b]->cols != w)
            throw DimensionError("stack_csi_blocks: inconsistent CSI shapes in batch");
        for (std::size_t i = 0; i < hs[b]->v.size(); ++i) {
            re[static_cast<std::size_t>(b) * m_r * w + i] = static_cast<R>(hs[b]->v[i].real());
            im[static_cast<std::size_t>(b) * m_r * w + i] = static_cast<R>(hs[b]->v[i].imag());
        }
    }
    return {Tensor<R>::from({blocks * m_r, w}, std::move(re)),
            Tensor<R>::from({blocks * m_r, w}, std::move(im))};
}

} // namespace csiloc

#endif
