#pragma once

#include "fseg/tensor/tensor.hpp"

namespace fseg {

namespace detail {

template <class S>
void require_rank4(const char* op, const Tensor<S>& x) {
    if (x.shape().size() != 4)
        throw ShapeError(std::string(op) + ": rank-4 [N,C,H,W] tensor required, got " +
                         shape_str(x.shape()));
}

// Scatters one sample's x values into an im2col matrix (K x Ho*Wo, column-major).
template <class S>
void im2col(const S* x, int C, int H, int W, int k, int pad, int Ho, int Wo,
            MatrixRM<S>& col) {
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
                const int row = (c * k + di) * k + dj;
                for (int i = 0; i < Ho; ++i) {
                    const int si = i + di - pad;
                    for (int j = 0; j < Wo; ++j) {
                        const int sj = j + dj - pad;
                        col(row, i * Wo + j) =
                            (si >= 0 && si < H && sj >= 0 && sj < W)
                                ? x[(static_cast<std::int64_t>(c) * H + si) * W + sj]
                                : S(0);
                    }
                }
            }
}

template <class S>
void col2im_add(const MatrixRM<S>& col, int C, int H, int W, int k, int pad, int Ho, int Wo,
                S* gx) {
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
                const int row = (c * k + di) * k + dj;
                for (int i = 0; i < Ho; ++i) {
                    const int si = i + di - pad;
                    if (si < 0 || si >= H) continue;
                    for (int j = 0; j < Wo; ++j) {
                        const int sj = j + dj - pad;
                        if (sj < 0 || sj >= W) continue;
                        gx[(static_cast<std::int64_t>(c) * H + si) * W + sj] +=
                            col(row, i * Wo + j);
                    }
                }
            }
}

}  // namespace detail

/// 2-d convolution, stride 1. The model uses 3x3 kernels with zero-padding of
/// size one (spatial dims preserved) and 1x1 kernels with no padding.
/// Differentiable w.r.t. input, weights and bias.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int pad = 1) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("conv2d", x);
    if (w.shape().size() != 4)
        throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Cin)
        throw ShapeError("conv2d: weight input channels " + std::to_string(w.dim(1)) +
                         " != input channels " + std::to_string(Cin));
    if (w.dim(3) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(w.shape()));
    if (b.shape() != std::vector<int>{Cout})
        throw ShapeError("conv2d: bias must be [" + std::to_string(Cout) + "], got " +
                         shape_str(b.shape()));
    const int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
    if (Ho <= 0 || Wo <= 0)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " with pad " +
                         std::to_string(pad) + " exceeds input " + std::to_string(H) + "x" +
                         std::to_string(W));
    const int K = Cin * k * k;
    const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;

    Vec out(static_cast<std::int64_t>(N) * Cout * plane);
    Eigen::Map<const MatrixRM<S>> Wm(w.values().data(), Cout, K);
    MatrixRM<S> col(K, plane);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.values().data() + static_cast<std::int64_t>(n) * Cin * H * W, Cin, H,
                       W, k, pad, Ho, Wo, col);
        Eigen::Map<MatrixRM<S>> Yn(out.data() + static_cast<std::int64_t>(n) * Cout * plane,
                                   Cout, plane);
        Yn.noalias() = Wm * col;
        Yn.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
            b.values().data(), Cout);
    }

    return detail::make_op<S>(
        {N, Cout, Ho, Wo}, std::move(out), {x, w, b},
        [x, w, b, N, Cin, H, W, Cout, k, pad, Ho, Wo, K, plane](TensorImpl<S>& self) {
            Eigen::Map<const MatrixRM<S>> Wm(w.values().data(), Cout, K);
            const bool need_x = x.impl()->needs_grad();
            const bool need_w = w.impl()->needs_grad();
            const bool need_b = b.impl()->needs_grad();
            if (need_x) x.impl()->ensure_grad();
            if (need_w) w.impl()->ensure_grad();
            if (need_b) b.impl()->ensure_grad();
            MatrixRM<S> col(K, plane), gcol(K, plane);
            MatrixRM<S> gW = MatrixRM<S>::Zero(Cout, K);
            for (int n = 0; n < N; ++n) {
                Eigen::Map<const MatrixRM<S>> Gn(
                    self.grad.data() + static_cast<std::int64_t>(n) * Cout * plane, Cout,
                    plane);
                if (need_x) {
                    gcol.noalias() = Wm.transpose() * Gn;
                    detail::col2im_add(gcol, Cin, H, W, k, pad, Ho, Wo,
                                       x.impl()->grad.data() +
                                           static_cast<std::int64_t>(n) * Cin * H * W);
                }
                if (need_w) {
                    detail::im2col(
                        x.values().data() + static_cast<std::int64_t>(n) * Cin * H * W, Cin,
                        H, W, k, pad, Ho, Wo, col);
                    gW.noalias() += Gn * col.transpose();
                }
                if (need_b)
                    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.impl()->grad.data(),
                                                                    Cout) += Gn.rowwise().sum();
            }
            if (need_w)
                Eigen::Map<MatrixRM<S>>(w.impl()->grad.data(), Cout, K) += gW;
        });
}

/// 2x2 max pooling, stride 2. H and W must be even. The gradient routes to the
/// argmax; ties go to the first element in row-major window order.
template <class S>
Tensor<S> maxpool2d(const Tensor<S>& x) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("maxpool2d", x);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2d: odd spatial dims " + std::to_string(H) + "x" +
                         std::to_string(W));
    const int Ho = H / 2, Wo = W / 2;
    Vec out(static_cast<std::int64_t>(N) * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const S* xv = x.values().data();
    std::int64_t o = 0;
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        const std::int64_t base = nc * H * W;
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j, ++o) {
                std::int64_t best = base + (2 * i) * W + 2 * j;
                S bv = xv[best];
                const std::int64_t cand[3] = {base + (2 * i) * W + 2 * j + 1,
                                              base + (2 * i + 1) * W + 2 * j,
                                              base + (2 * i + 1) * W + 2 * j + 1};
                for (std::int64_t c : cand)
                    if (xv[c] > bv) {
                        bv = xv[c];
                        best = c;
                    }
                out[o] = bv;
                (*argmax)[o] = best;
            }
    }
    return detail::make_op<S>({N, C, Ho, Wo}, std::move(out), {x},
                              [x, argmax](TensorImpl<S>& self) {
                                  if (!x.impl()->needs_grad()) return;
                                  x.impl()->ensure_grad();
                                  for (std::int64_t i = 0; i < self.grad.size(); ++i)
                                      x.impl()->grad[(*argmax)[i]] += self.grad[i];
                              });
}

/// Nearest-neighbour 2x upsampling; each value fills a 2x2 block. The backward
/// pass sums the four gradients.
template <class S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("upsample_nearest2x", x);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Vec out(static_cast<std::int64_t>(N) * C * 4 * H * W);
    const S* xv = x.values().data();
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        const std::int64_t ib = nc * H * W, ob = nc * 4 * H * W;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const S v = xv[ib + i * W + j];
                const std::int64_t t = ob + (2 * i) * 2 * W + 2 * j;
                out[t] = v;
                out[t + 1] = v;
                out[t + 2 * W] = v;
                out[t + 2 * W + 1] = v;
            }
    }
    return detail::make_op<S>(
        {N, C, 2 * H, 2 * W}, std::move(out), {x}, [x, N, C, H, W](TensorImpl<S>& self) {
            if (!x.impl()->needs_grad()) return;
            x.impl()->ensure_grad();
            S* gx = x.impl()->grad.data();
            const S* g = self.grad.data();
            for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
                const std::int64_t ib = nc * H * W, ob = nc * 4 * H * W;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) {
                        const std::int64_t t = ob + (2 * i) * 2 * W + 2 * j;
                        gx[ib + i * W + j] += g[t] + g[t + 1] + g[t + 2 * W] + g[t + 2 * W + 1];
                    }
            }
        });
}

/// Concatenate two feature maps along the channel axis.
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("concat_channels", a);
    detail::require_rank4("concat_channels", b);
    const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W)
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    Vec out(static_cast<std::int64_t>(N) * (Ca + Cb) * plane);
    for (int n = 0; n < N; ++n) {
        out.segment(static_cast<std::int64_t>(n) * (Ca + Cb) * plane, Ca * plane) =
            a.values().segment(static_cast<std::int64_t>(n) * Ca * plane, Ca * plane);
        out.segment(static_cast<std::int64_t>(n) * (Ca + Cb) * plane + Ca * plane,
                    Cb * plane) =
            b.values().segment(static_cast<std::int64_t>(n) * Cb * plane, Cb * plane);
    }
    return detail::make_op<S>(
        {N, Ca + Cb, H, W}, std::move(out), {a, b},
        [a, b, N, Ca, Cb, plane](TensorImpl<S>& self) {
            for (int n = 0; n < N; ++n) {
                if (a.impl()->needs_grad()) {
                    a.impl()->ensure_grad();
                    a.impl()->grad.segment(static_cast<std::int64_t>(n) * Ca * plane,
                                           Ca * plane) +=
                        self.grad.segment(static_cast<std::int64_t>(n) * (Ca + Cb) * plane,
                                          Ca * plane);
                }
                if (b.impl()->needs_grad()) {
                    b.impl()->ensure_grad();
                    b.impl()->grad.segment(static_cast<std::int64_t>(n) * Cb * plane,
                                           Cb * plane) +=
                        self.grad.segment(
                            static_cast<std::int64_t>(n) * (Ca + Cb) * plane + Ca * plane,
                            Cb * plane);
                }
            }
        });
}

/// Per-sample, per-channel spatial mean: [N,C,H,W] -> [N,C].
template <class S>
Tensor<S> spatial_mean(const Tensor<S>& x) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("spatial_mean", x);
    const int N = x.dim(0), C = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    const S inv = S(1) / static_cast<S>(plane);
    Vec out(static_cast<std::int64_t>(N) * C);
    for (std::int64_t nc = 0; nc < out.size(); ++nc)
        out[nc] = x.values().segment(nc * plane, plane).sum() * inv;
    return detail::make_op<S>({N, C}, std::move(out), {x}, [x, plane, inv](TensorImpl<S>& self) {
        if (!x.impl()->needs_grad()) return;
        x.impl()->ensure_grad();
        for (std::int64_t nc = 0; nc < self.grad.size(); ++nc)
            x.impl()->grad.segment(nc * plane, plane) += self.grad[nc] * inv;
    });
}

/// Sum over samples and pixels per channel: [N,C,H,W] -> [C].
template <class S>
Tensor<S> channel_sum(const Tensor<S>& x) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("channel_sum", x);
    const int N = x.dim(0), C = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Vec out = Vec::Zero(C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            out[c] += x.values()
                          .segment((static_cast<std::int64_t>(n) * C + c) * plane, plane)
                          .sum();
    return detail::make_op<S>({C}, std::move(out), {x}, [x, N, C, plane](TensorImpl<S>& self) {
        if (!x.impl()->needs_grad()) return;
        x.impl()->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                x.impl()->grad.segment((static_cast<std::int64_t>(n) * C + c) * plane,
                                       plane) += self.grad[c];
    });
}

/// Broadcast a per-channel vector over [N,C,H,W].
template <class S>
Tensor<S> broadcast_channel(const Tensor<S>& v, int N, int H, int W) {
    using Vec = typename Tensor<S>::Vec;
    if (v.shape().size() != 1)
        throw ShapeError("broadcast_channel: rank-1 tensor required, got " +
                         shape_str(v.shape()));
    const int C = v.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    Vec out(static_cast<std::int64_t>(N) * C * plane);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            out.segment((static_cast<std::int64_t>(n) * C + c) * plane, plane)
                .setConstant(v.values()[c]);
    return detail::make_op<S>(
        {N, C, H, W}, std::move(out), {v}, [v, N, C, plane](TensorImpl<S>& self) {
            if (!v.impl()->needs_grad()) return;
            Vec gv = Vec::Zero(C);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    gv[c] += self.grad
                                 .segment((static_cast<std::int64_t>(n) * C + c) * plane,
                                          plane)
                                 .sum();
            v.impl()->accumulate(gv);
        });
}

/// y[n,c,h,w] = x[n,c,h,w] * w[n]; differentiable in both (gate weighting).
template <class S>
Tensor<S> scale_per_sample(const Tensor<S>& x, const Tensor<S>& w) {
    using Vec = typename Tensor<S>::Vec;
    detail::require_rank4("scale_per_sample", x);
    const int N = x.dim(0);
    if (w.shape() != std::vector<int>{N})
        throw ShapeError("scale_per_sample: weights must be [" + std::to_string(N) +
                         "], got " + shape_str(w.shape()));
    const std::int64_t per = x.numel() / N;
    Vec out(x.numel());
    for (int n = 0; n < N; ++n)
        out.segment(n * per, per) = x.values().segment(n * per, per) * w.values()[n];
    return detail::make_op<S>(
        x.shape(), std::move(out), {x, w}, [x, w, N, per](TensorImpl<S>& self) {
            if (x.impl()->needs_grad()) {
                x.impl()->ensure_grad();
                for (int n = 0; n < N; ++n)
                    x.impl()->grad.segment(n * per, per) +=
                        self.grad.segment(n * per, per) * w.values()[n];
            }
            if (w.impl()->needs_grad()) {
                typename Tensor<S>::Vec gw(N);
                for (int n = 0; n < N; ++n)
                    gw[n] =
                        (self.grad.segment(n * per, per) * x.values().segment(n * per, per))
                            .sum();
                w.impl()->accumulate(gw);
            }
        });
}

}  // namespace fseg
