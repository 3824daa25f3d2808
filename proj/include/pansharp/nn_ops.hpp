#pragma once

#include "tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pansharp {

namespace detail {

// Gathers conv patches for one sample/group into a (Cg*kh*kw) x (Ho*Wo) matrix.
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* col) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
                // unit stride: the in-bounds span is one contiguous copy
                int64_t lo = stride == 1 ? std::max<int64_t>(0, pad - kj) : 0;
                int64_t hi = stride == 1 ? std::min(Wo, W + pad - kj) : 0;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t iy = y * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + y * Wo, row + (y + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + iy) * W;
                    T* dst = row + y * Wo;
                    if (stride == 1) {
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + lo - pad + kj, src + hi - pad + kj, dst + lo);
                        std::fill(dst + hi, dst + Wo, T(0));
                    } else {
                        for (int64_t xo = 0; xo < Wo; ++xo) {
                            int64_t ix = xo * stride - pad + kj;
                            dst[xo] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                        }
                    }
                }
            }
}

template <class T>
void col2im_accum(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* x) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
                int64_t lo = stride == 1 ? std::max<int64_t>(0, pad - kj) : 0;
                int64_t hi = stride == 1 ? std::min(Wo, W + pad - kj) : 0;
                for (int64_t y = 0; y < Ho; ++y) {
                    int64_t iy = y * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (c * H + iy) * W;
                    const T* src = row + y * Wo;
                    if (stride == 1) {
                        for (int64_t xo = lo; xo < hi; ++xo) dst[xo - pad + kj] += src[xo];
                    } else {
                        for (int64_t xo = 0; xo < Wo; ++xo) {
                            int64_t ix = xo * stride - pad + kj;
                            if (ix >= 0 && ix < W) dst[ix] += src[xo];
                        }
                    }
                }
            }
}

}  // namespace detail

// 2D convolution, zero padding, NCHW. weight (Cout, Cin/groups, kh, kw).
// bias may be an undefined tensor. Parallel over the batch; gradient
// accumulation is reduced in batch order so results are thread-count
// independent.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad, int64_t groups = 1) {
    if (x.rank() != 4 || w.rank() != 4)
        throw shape_error("conv2d expects 4D input and weight, got " + shape_str(x.shape()) +
                          " and " + shape_str(w.shape()));
    int64_t N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int64_t Cout = w.shape()[0], Cig = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (Cin != Cig * groups || Cout % groups != 0)
        throw shape_error("conv2d channel/group mismatch: input " + shape_str(x.shape()) +
                          ", weight " + shape_str(w.shape()) + ", groups " +
                          std::to_string(groups));
    int64_t Cog = Cout / groups;
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw shape_error("conv2d output would be empty for input " + shape_str(x.shape()));
    bool has_bias = bias.defined();
    if (has_bias && bias.numel() != Cout)
        throw shape_error("conv2d bias length " + std::to_string(bias.numel()) +
                          " != Cout " + std::to_string(Cout));

    const auto& xd = x.data();
    const auto& wd = w.data();
    std::vector<T> out(static_cast<size_t>(N * Cout * Ho * Wo));
    int64_t colsz = Cig * kh * kw * Ho * Wo;

#ifdef _OPENMP
#pragma omp parallel
#endif
    {
        std::vector<T> col(static_cast<size_t>(colsz));
#ifdef _OPENMP
#pragma omp for
#endif
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t g = 0; g < groups; ++g) {
                detail::im2col(xd.data() + (n * Cin + g * Cig) * H * W, Cig, H, W, kh, kw, stride,
                               pad, Ho, Wo, col.data());
                detail::gemm(wd.data() + g * Cog * Cig * kh * kw, false, Cog, Cig * kh * kw,
                             col.data(), false, Cig * kh * kw, Ho * Wo,
                             out.data() + (n * Cout + g * Cog) * Ho * Wo, false);
            }
            if (has_bias) {
                const auto& bd = bias.data();
                for (int64_t c = 0; c < Cout; ++c) {
                    T* dst = out.data() + (n * Cout + c) * Ho * Wo;
                    for (int64_t i = 0; i < Ho * Wo; ++i) dst[i] += bd[c];
                }
            }
        }
    }

    auto xn = x.node();
    auto wn = w.node();
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents{xn, wn};
    std::shared_ptr<typename Tensor<T>::Node> bn;
    if (has_bias) {
        bn = bias.node();
        parents.push_back(bn);
    }
    Shape oshape{N, Cout, Ho, Wo};
    return detail::make_op<T>(
        oshape, std::move(out), parents,
        [xn, wn, bn, N, Cin, H, W, Cout, Cig, Cog, kh, kw, stride, pad, Ho, Wo, groups,
         colsz](typename Tensor<T>::Node& self) {
            const auto& g = self.grad;
            bool need_x = xn->requires_grad;
            bool need_w = wn->requires_grad;
            bool need_b = bn && bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            int64_t wsz = Cout * Cig * kh * kw;
            // per-sample weight-grad partials, reduced in batch order
            std::vector<T> wpart;
            if (need_w) wpart.assign(static_cast<size_t>(N * wsz), T(0));
#ifdef _OPENMP
#pragma omp parallel
#endif
            {
                std::vector<T> col(static_cast<size_t>(colsz));
                std::vector<T> dcol(static_cast<size_t>(colsz));
#ifdef _OPENMP
#pragma omp for
#endif
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t gi = 0; gi < groups; ++gi) {
                        const T* G = g.data() + (n * Cout + gi * Cog) * Ho * Wo;
                        if (need_w) {
                            detail::im2col(xn->data.data() + (n * Cin + gi * Cig) * H * W, Cig, H,
                                           W, kh, kw, stride, pad, Ho, Wo, col.data());
                            // dW_g = G (Cog, HoWo) x col^T
                            detail::gemm(G, false, Cog, Ho * Wo, col.data(), true, Cig * kh * kw,
                                         Ho * Wo, wpart.data() + n * wsz + gi * Cog * Cig * kh * kw,
                                         false);
                        }
                        if (need_x) {
                            // dcol = W_g^T x G
                            detail::gemm(wn->data.data() + gi * Cog * Cig * kh * kw, true, Cog,
                                         Cig * kh * kw, G, false, Cog, Ho * Wo, dcol.data(), false);
                            detail::col2im_accum(dcol.data(), Cig, H, W, kh, kw, stride, pad, Ho,
                                                 Wo, xn->grad.data() + (n * Cin + gi * Cig) * H * W);
                        }
                    }
                }
            }
            if (need_w)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t i = 0; i < wsz; ++i) wn->grad[i] += wpart[n * wsz + i];
            if (need_b)
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Cout; ++c) {
                        const T* G = g.data() + (n * Cout + c) * Ho * Wo;
                        T acc = 0;
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += G[i];
                        bn->grad[c] += acc;
                    }
        });
}

// Nearest-neighbour 2x upsampling, NCHW.
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.rank() != 4) throw shape_error("upsample_nearest2x expects 4D, got " + shape_str(x.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto& xd = x.data();
    std::vector<T> out(static_cast<size_t>(N * C * 4 * H * W));
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = xd.data() + nc * H * W;
        T* dst = out.data() + nc * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xo = 0; xo < W; ++xo) {
                T v = src[y * W + xo];
                int64_t base = (2 * y) * (2 * W) + 2 * xo;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * W] = v;
                dst[base + 2 * W + 1] = v;
            }
    }
    auto xn = x.node();
    return detail::make_op<T>(
        Shape{N, C, 2 * H, 2 * W}, std::move(out), {xn},
        [xn, N, C, H, W](typename Tensor<T>::Node& self) {
            xn->ensure_grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* g = self.grad.data() + nc * 4 * H * W;
                T* dst = xn->grad.data() + nc * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t xo = 0; xo < W; ++xo) {
                        int64_t base = (2 * y) * (2 * W) + 2 * xo;
                        dst[y * W + xo] += g[base] + g[base + 1] + g[base + 2 * W] + g[base + 2 * W + 1];
                    }
            }
        });
}

inline int group_norm_groups(int64_t channels) {
    return channels % 4 == 0 ? 4 : 1;
}

namespace detail {

// Single fused node for (optionally affine) group normalization: one pass over
// the data instead of the ~10 primitive ops the composed form would create,
// with the analytic backward. gamma/beta are (C) or undefined.
template <class T>
Tensor<T> group_norm_impl(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                          const Tensor<T>& beta, T eps) {
    if (x.rank() != 4) throw shape_error("group_norm expects 4D, got " + shape_str(x.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (C % groups != 0)
        throw shape_error("group_norm: channels " + std::to_string(C) + " not divisible by " +
                          std::to_string(groups) + " groups");
    bool affine = gamma.defined();
    if (affine && (gamma.numel() != C || beta.numel() != C))
        throw shape_error("group_norm: affine parameters do not match " + std::to_string(C) +
                          " channels");
    int64_t Cg = C / groups, gs = Cg * H * W, NG = N * groups;
    const auto& xd = x.data();
    std::vector<T> out(xd.size());
    std::vector<T> mu(static_cast<size_t>(NG)), istd(static_cast<size_t>(NG));
    for (int64_t ng = 0; ng < NG; ++ng) {
        const T* px = xd.data() + ng * gs;
        T m = T(0);
        for (int64_t i = 0; i < gs; ++i) m += px[i];
        m /= T(gs);
        T v = T(0);
        for (int64_t i = 0; i < gs; ++i) v += (px[i] - m) * (px[i] - m);
        v /= T(gs);
        T is = T(1) / std::sqrt(v + eps);
        mu[size_t(ng)] = m;
        istd[size_t(ng)] = is;
        T* po = out.data() + ng * gs;
        if (affine) {
            const auto& gd = gamma.data();
            const auto& bd = beta.data();
            for (int64_t c = 0; c < Cg; ++c) {
                T a = gd[size_t(ng % groups * Cg + c)] * is;
                T b = bd[size_t(ng % groups * Cg + c)] - a * m;
                for (int64_t i = c * H * W; i < (c + 1) * H * W; ++i) po[i] = a * px[i] + b;
            }
        } else {
            for (int64_t i = 0; i < gs; ++i) po[i] = (px[i] - m) * is;
        }
    }

    auto xn = x.node();
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents{xn};
    std::shared_ptr<typename Tensor<T>::Node> gn, btn;
    if (affine) {
        gn = gamma.node();
        btn = beta.node();
        parents.push_back(gn);
        parents.push_back(btn);
    }
    return make_op<T>(
        x.shape(), std::move(out), std::move(parents),
        [xn, gn, btn, mu = std::move(mu), istd = std::move(istd), N, C, H, W, groups,
         Cg, gs](typename Tensor<T>::Node& self) {
            bool need_x = xn->requires_grad;
            bool need_g = gn && gn->requires_grad;
            bool need_b = btn && btn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) btn->ensure_grad();
            const auto& g = self.grad;
            for (int64_t ng = 0; ng < N * groups; ++ng) {
                const T* px = xn->data.data() + ng * gs;
                const T* pg = g.data() + ng * gs;
                T m = mu[size_t(ng)], is = istd[size_t(ng)];
                for (int64_t c = 0; c < Cg; ++c) {
                    int64_t ch = ng % groups * Cg + c;
                    T s0 = T(0), s1 = T(0);
                    for (int64_t i = c * H * W; i < (c + 1) * H * W; ++i) {
                        s0 += pg[i];
                        s1 += pg[i] * (px[i] - m) * is;
                    }
                    if (need_b) btn->grad[size_t(ch)] += s0;
                    if (need_g) gn->grad[size_t(ch)] += s1;
                }
                if (!need_x) continue;
                // dL/dxhat = g * gamma; dx folds in the mean/variance paths
                T sum_dh = T(0), sum_dh_xhat = T(0);
                for (int64_t c = 0; c < Cg; ++c) {
                    T gm = gn ? gn->data[size_t(ng % groups * Cg + c)] : T(1);
                    for (int64_t i = c * H * W; i < (c + 1) * H * W; ++i) {
                        T dh = pg[i] * gm;
                        sum_dh += dh;
                        sum_dh_xhat += dh * (px[i] - m) * is;
                    }
                }
                T mean_dh = sum_dh / T(gs), mean_dh_xhat = sum_dh_xhat / T(gs);
                T* dx = xn->grad.data() + ng * gs;
                for (int64_t c = 0; c < Cg; ++c) {
                    T gm = gn ? gn->data[size_t(ng % groups * Cg + c)] : T(1);
                    for (int64_t i = c * H * W; i < (c + 1) * H * W; ++i) {
                        T xh = (px[i] - m) * is;
                        dx[i] += is * (pg[i] * gm - mean_dh - xh * mean_dh_xhat);
                    }
                }
            }
        });
}

}  // namespace detail

// Group normalization over (N,C,H,W), eps 1e-5.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, T eps = T(1e-5)) {
    return detail::group_norm_impl(x, groups, Tensor<T>(), Tensor<T>(), eps);
}

template <class T>
Tensor<T> group_norm_affine(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                            const Tensor<T>& beta, T eps = T(1e-5)) {
    return detail::group_norm_impl(x, groups, gamma, beta, eps);
}

// Global spatial average: (N,C,H,W) -> (N,C)
template <class T>
Tensor<T> global_mean_hw(const Tensor<T>& x) {
    if (x.rank() != 4) throw shape_error("global_mean_hw expects 4D, got " + shape_str(x.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1];
    auto flat = reshape(x, {N, C, x.shape()[2] * x.shape()[3]});
    return mean_axis(flat, -1, false);
}

}  // namespace pansharp
