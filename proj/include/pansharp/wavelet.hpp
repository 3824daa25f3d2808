#pragma once

#include "tensor.hpp"

namespace pansharp {

enum class WaveletKind { SWT, DWT };

// Level-1 subband set. SWT keeps the input's spatial shape, DWT halves it.
template <class T>
struct WaveletBundle {
    Tensor<T> L, H, V, D;
    WaveletKind kind = WaveletKind::SWT;
    std::string filter_name = "haar";
};

namespace detail {

// Circular 1D filter along `axis`: y[p] = sum_i k[i] * x[(p + offset + i) mod n].
// Linear, so the adjoint is the reversed kernel at offset -(offset + len - 1).
template <class T>
Tensor<T> circ_filter_axis(const Tensor<T>& x, std::vector<T> kernel, int64_t offset, int axis) {
    int r = x.rank();
    if (axis < 0) axis += r;
    const Shape& s = x.shape();
    int64_t outer = 1, n = s[axis], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    int64_t L = static_cast<int64_t>(kernel.size());

    auto apply = [outer, n, inner, L](const std::vector<T>& src, const std::vector<T>& k,
                                      int64_t off, std::vector<T>& dst, bool accumulate) {
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t p = 0; p < n; ++p) {
                T* out = dst.data() + (o * n + p) * inner;
                if (!accumulate)
                    for (int64_t i = 0; i < inner; ++i) out[i] = T(0);
                for (int64_t j = 0; j < L; ++j) {
                    int64_t q = ((p + off + j) % n + n) % n;
                    const T* in = src.data() + (o * n + q) * inner;
                    T kv = k[j];
                    for (int64_t i = 0; i < inner; ++i) out[i] += kv * in[i];
                }
            }
    };

    std::vector<T> out(static_cast<size_t>(x.numel()));
    apply(x.data(), kernel, offset, out, false);
    auto xn = x.node();
    std::vector<T> krev(kernel.rbegin(), kernel.rend());
    int64_t adj_off = -(offset + L - 1);
    return make_op<T>(s, std::move(out), {xn},
                      [xn, apply, krev, adj_off](typename Tensor<T>::Node& self) {
                          xn->ensure_grad();
                          apply(self.grad, krev, adj_off, xn->grad, true);
                      });
}

// Decimating pair filter along `axis`: y[p] = k0*x[2p] + k1*x[2p+1].
template <class T>
Tensor<T> pair_down_axis(const Tensor<T>& x, T k0, T k1, int axis) {
    int r = x.rank();
    if (axis < 0) axis += r;
    const Shape& s = x.shape();
    if (s[axis] % 2 != 0)
        throw contract_error("decimated wavelet transform requires even dims, got " +
                             shape_str(s));
    int64_t outer = 1, n = s[axis], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    Shape oshape = s;
    oshape[axis] = n / 2;
    const auto& xd = x.data();
    std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t p = 0; p < n / 2; ++p) {
            const T* a = xd.data() + (o * n + 2 * p) * inner;
            const T* b = xd.data() + (o * n + 2 * p + 1) * inner;
            T* dst = out.data() + (o * n / 2 + p) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] = k0 * a[i] + k1 * b[i];
        }
    auto xn = x.node();
    return make_op<T>(oshape, std::move(out), {xn},
                      [xn, outer, n, inner, k0, k1](typename Tensor<T>::Node& self) {
                          xn->ensure_grad();
                          for (int64_t o = 0; o < outer; ++o)
                              for (int64_t p = 0; p < n / 2; ++p) {
                                  const T* g = self.grad.data() + (o * n / 2 + p) * inner;
                                  T* a = xn->grad.data() + (o * n + 2 * p) * inner;
                                  T* b = xn->grad.data() + (o * n + 2 * p + 1) * inner;
                                  for (int64_t i = 0; i < inner; ++i) {
                                      a[i] += k0 * g[i];
                                      b[i] += k1 * g[i];
                                  }
                              }
                      });
}

inline void check_haar(const std::string& filter) {
    if (filter != "haar")
        throw config_error("unknown wavelet filter '" + filter + "' (available: haar)");
}

}  // namespace detail

// Level-1 undecimated separable wavelet decomposition, circular boundaries.
// Unit-DC-gain Haar: low-pass [0.5, 0.5], high-pass [0.5, -0.5]. Constant
// inputs give L = input and exactly-zero details.
template <class T>
WaveletBundle<T> swt2(const Tensor<T>& x, const std::string& filter = "haar") {
    detail::check_haar(filter);
    if (x.rank() < 2 || x.dim(-2) < 2 || x.dim(-1) < 2)
        throw contract_error("swt2 requires spatial dims >= 2, got " + shape_str(x.shape()));
    std::vector<T> lp{T(0.5), T(0.5)}, hp{T(0.5), T(-0.5)};
    auto lx = detail::circ_filter_axis(x, lp, 0, -1);
    auto hx = detail::circ_filter_axis(x, hp, 0, -1);
    WaveletBundle<T> b;
    b.kind = WaveletKind::SWT;
    b.filter_name = filter;
    b.L = detail::circ_filter_axis(lx, lp, 0, -2);
    b.H = detail::circ_filter_axis(lx, hp, 0, -2);  // detail along y
    b.V = detail::circ_filter_axis(hx, lp, 0, -2);  // detail along x
    b.D = detail::circ_filter_axis(hx, hp, 0, -2);
    return b;
}

// Exact inverse of swt2 (redundant transform; reconstruction averages the
// two phases per axis).
template <class T>
Tensor<T> iswt2(const WaveletBundle<T>& b) {
    if (b.kind != WaveletKind::SWT)
        throw contract_error("iswt2 called on a DWT bundle");
    detail::check_haar(b.filter_name);
    std::vector<T> rl{T(0.5), T(0.5)}, rh{T(-0.5), T(0.5)};
    auto comb = [&](const Tensor<T>& lo, const Tensor<T>& hi, int axis) {
        return detail::circ_filter_axis(lo, rl, -1, axis) +
               detail::circ_filter_axis(hi, rh, -1, axis);
    };
    auto low_y = comb(b.L, b.V, -1);   // undo the width-axis split
    auto high_y = comb(b.H, b.D, -1);
    return comb(low_y, high_y, -2);    // undo the height-axis split
}

// Level-1 decimated decomposition, half-resolution subbands.
template <class T>
WaveletBundle<T> dwt2(const Tensor<T>& x, const std::string& filter = "haar") {
    detail::check_haar(filter);
    if (x.rank() < 2) throw contract_error("dwt2 requires spatial dims");
    auto lx = detail::pair_down_axis(x, T(0.5), T(0.5), -1);
    auto hx = detail::pair_down_axis(x, T(0.5), T(-0.5), -1);
    WaveletBundle<T> b;
    b.kind = WaveletKind::DWT;
    b.filter_name = filter;
    b.L = detail::pair_down_axis(lx, T(0.5), T(0.5), -2);
    b.H = detail::pair_down_axis(lx, T(0.5), T(-0.5), -2);
    b.V = detail::pair_down_axis(hx, T(0.5), T(0.5), -2);
    b.D = detail::pair_down_axis(hx, T(0.5), T(-0.5), -2);
    return b;
}

// Wavelet conditioning stack: [L of the MS | H, V, D of the PAN], channels
// first. SWT keeps full resolution, DWT yields half-resolution channels.
template <class T>
Tensor<T> build_s_cond(const Tensor<T>& pan, const Tensor<T>& lrms_up,
                       WaveletKind kind = WaveletKind::SWT,
                       const std::string& filter = "haar") {
    if (pan.rank() != 3 || lrms_up.rank() != 3 || pan.dim(0) != 1)
        throw contract_error("build_s_cond expects pan (1,H,W) and lrms_up (B,H,W), got " +
                             shape_str(pan.shape()) + " and " + shape_str(lrms_up.shape()));
    if (pan.dim(-2) != lrms_up.dim(-2) || pan.dim(-1) != lrms_up.dim(-1))
        throw contract_error("build_s_cond spatial mismatch: pan " + shape_str(pan.shape()) +
                             " vs lrms_up " + shape_str(lrms_up.shape()));
    if (kind == WaveletKind::SWT) {
        auto bp = swt2(pan, filter);
        auto bm = swt2(lrms_up, filter);
        return concat<T>({bm.L, bp.H, bp.V, bp.D}, 0);
    }
    auto bp = dwt2(pan, filter);
    auto bm = dwt2(lrms_up, filter);
    return concat<T>({bm.L, bp.H, bp.V, bp.D}, 0);
}

}  // namespace pansharp
