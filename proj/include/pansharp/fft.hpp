#pragma once

#include <complex>

#include "tensor.hpp"

namespace pansharp {

// Half-spectrum complex tensor: real.shape == imag.shape, last dim w/2+1.
template <class T>
struct ComplexTensor {
    Tensor<T> real;
    Tensor<T> imag;

    const Shape& shape() const { return real.shape(); }
};

namespace detail {

inline bool is_pow2(int64_t n) { return n >= 1 && (n & (n - 1)) == 0; }

// Forward roots exp(-2*pi*i*k/n) for k < n/2, cached per length; removes the
// serial twiddle recurrence from the butterfly loop.
inline const std::vector<std::complex<double>>& fft_twiddles(int64_t n) {
    thread_local std::vector<std::pair<int64_t, std::vector<std::complex<double>>>> cache;
    for (const auto& e : cache)
        if (e.first == n) return e.second;
    std::vector<std::complex<double>> tw(static_cast<size_t>(std::max<int64_t>(n / 2, 1)));
    constexpr double two_pi = 2.0 * 3.14159265358979323846264338327950288;
    for (size_t k = 0; k < tw.size(); ++k)
        tw[k] = {std::cos(two_pi * double(k) / double(n)), -std::sin(two_pi * double(k) / double(n))};
    cache.emplace_back(n, std::move(tw));
    return cache.back().second;
}

// In-place iterative radix-2 FFT. sign=-1 forward, +1 inverse (unnormalized).
inline void fft1d(std::complex<double>* a, int64_t n, int sign) {
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = fft_twiddles(n);
    for (int64_t len = 2; len <= n; len <<= 1) {
        int64_t step = n / len;
        for (int64_t i = 0; i < n; i += len) {
            for (int64_t k = 0; k < len / 2; ++k) {
                std::complex<double> w = tw[static_cast<size_t>(k * step)];
                if (sign > 0) w = std::conj(w);
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

// Unnormalized 2D FFT over an h x w complex buffer (row-major).
inline void fft2d(std::vector<std::complex<double>>& buf, int64_t h, int64_t w, int sign) {
    for (int64_t y = 0; y < h; ++y) fft1d(buf.data() + y * w, w, sign);
    std::vector<std::complex<double>> col(static_cast<size_t>(h));
    for (int64_t x = 0; x < w; ++x) {
        for (int64_t y = 0; y < h; ++y) col[y] = buf[y * w + x];
        fft1d(col.data(), h, sign);
        for (int64_t y = 0; y < h; ++y) buf[y * w + x] = col[y];
    }
}

// Forward FFT2 of a real h x w block into the h x (w/2+1) half spectrum.
// Row pairs share one complex FFT (FFT(a + ib) splits by Hermitian symmetry);
// the column pass only visits the kept columns.
template <class T>
void fft2_real_to_half(const T* x, int64_t h, int64_t w, std::complex<double>* out) {
    int64_t w2 = w / 2 + 1;
    std::vector<std::complex<double>> z(static_cast<size_t>(w)), col(static_cast<size_t>(h));
    for (int64_t y = 0; y < h; y += 2) {
        for (int64_t i = 0; i < w; ++i)
            z[static_cast<size_t>(i)] = {double(x[y * w + i]), double(x[(y + 1) * w + i])};
        fft1d(z.data(), w, -1);
        for (int64_t v = 0; v < w2; ++v) {
            auto Zv = z[static_cast<size_t>(v)];
            auto Zc = std::conj(z[static_cast<size_t>((w - v) % w)]);
            out[y * w2 + v] = 0.5 * (Zv + Zc);
            out[(y + 1) * w2 + v] = std::complex<double>(0.0, -0.5) * (Zv - Zc);
        }
    }
    for (int64_t v = 0; v < w2; ++v) {
        for (int64_t y = 0; y < h; ++y) col[static_cast<size_t>(y)] = out[y * w2 + v];
        fft1d(col.data(), h, -1);
        for (int64_t y = 0; y < h; ++y) out[y * w2 + v] = col[static_cast<size_t>(y)];
    }
}

// Real part of the unnormalized inverse FFT2 of a Hermitian-expanded half
// spectrum; `spec` (h x w2) is clobbered. The column pass runs on the kept
// columns; after forcing the edge columns real the rows are exactly Hermitian,
// so inverse row transforms pair up (Re -> even row, Im -> odd row) and adding
// a conjugate mirror beforehand reproduces Re o IFFT2 o expand bit for bit.
inline void fft2_half_to_real(std::complex<double>* spec, int64_t h, int64_t w, double* out) {
    int64_t w2 = w / 2 + 1;
    std::vector<std::complex<double>> z(static_cast<size_t>(w)), col(static_cast<size_t>(h));
    for (int64_t v = 0; v < w2; ++v) {
        for (int64_t y = 0; y < h; ++y) col[static_cast<size_t>(y)] = spec[y * w2 + v];
        fft1d(col.data(), h, +1);
        bool edge = v == 0 || v == w2 - 1;
        for (int64_t y = 0; y < h; ++y)
            spec[y * w2 + v] = edge ? std::complex<double>(col[static_cast<size_t>(y)].real(), 0.0)
                                    : col[static_cast<size_t>(y)];
    }
    for (int64_t y = 0; y < h; y += 2) {
        const std::complex<double>* r0 = spec + y * w2;
        const std::complex<double>* r1 = spec + (y + 1) * w2;
        for (int64_t v = 0; v < w2; ++v)
            z[static_cast<size_t>(v)] = r0[v] + std::complex<double>(0.0, 1.0) * r1[v];
        for (int64_t v = w2; v < w; ++v)
            z[static_cast<size_t>(v)] =
                std::conj(r0[w - v]) + std::complex<double>(0.0, 1.0) * std::conj(r1[w - v]);
        fft1d(z.data(), w, +1);
        for (int64_t i = 0; i < w; ++i) {
            out[y * w + i] = z[static_cast<size_t>(i)].real();
            out[(y + 1) * w + i] = z[static_cast<size_t>(i)].imag();
        }
    }
}

inline void check_fft_dims(int64_t h, int64_t w, const Shape& s) {
    if (w % 2 != 0) throw contract_error("rfft2: odd width in shape " + shape_str(s));
    if (h < 2 || w < 2) throw contract_error("rfft2: spatial dims must be >= 2, got " + shape_str(s));
    if (!is_pow2(h) || !is_pow2(w))
        throw contract_error("fft: non-power-of-two spatial size in shape " + shape_str(s));
}

}  // namespace detail

// Per-channel 2D real FFT keeping the non-redundant half spectrum.
// Input (..., h, w) real; output real/imag (..., h, w/2+1).
template <class T>
ComplexTensor<T> rfft2(const Tensor<T>& x) {
    if (x.rank() < 2) throw contract_error("rfft2 expects at least 2 dims");
    int64_t h = x.dim(-2), w = x.dim(-1);
    detail::check_fft_dims(h, w, x.shape());
    int64_t w2 = w / 2 + 1;
    int64_t channels = x.numel() / (h * w);
    Shape oshape = x.shape();
    oshape.back() = w2;

    const auto& xd = x.data();
    std::vector<T> re(static_cast<size_t>(channels * h * w2));
    std::vector<T> im(re.size());
    std::vector<std::complex<double>> spec(static_cast<size_t>(h * w2));
    for (int64_t c = 0; c < channels; ++c) {
        detail::fft2_real_to_half(xd.data() + c * h * w, h, w, spec.data());
        for (int64_t i = 0; i < h * w2; ++i) {
            re[c * h * w2 + i] = static_cast<T>(spec[static_cast<size_t>(i)].real());
            im[c * h * w2 + i] = static_cast<T>(spec[static_cast<size_t>(i)].imag());
        }
    }

    auto xn = x.node();
    // Adjoint of (select half) o (fft2): Re of the unnormalized inverse of the
    // zero-padded cotangent. Folding the zero padding into the half spectrum
    // (interior columns halved) lets the half->real routine do the transform.
    auto make_backward = [xn, channels, h, w, w2](bool imag_part) {
        return [xn, channels, h, w, w2, imag_part](typename Tensor<T>::Node& self) {
            xn->ensure_grad();
            std::vector<std::complex<double>> spec(static_cast<size_t>(h * w2));
            std::vector<double> real(static_cast<size_t>(h * w));
            for (int64_t c = 0; c < channels; ++c) {
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t v = 0; v < w2; ++v) {
                        double g = double(self.grad[(c * h + y) * w2 + v]);
                        if (v != 0 && v != w2 - 1) g *= 0.5;
                        spec[static_cast<size_t>(y * w2 + v)] =
                            imag_part ? std::complex<double>(0, g) : std::complex<double>(g, 0);
                    }
                detail::fft2_half_to_real(spec.data(), h, w, real.data());
                for (int64_t i = 0; i < h * w; ++i)
                    xn->grad[c * h * w + i] += static_cast<T>(real[static_cast<size_t>(i)]);
            }
        };
    };
    Tensor<T> tr = detail::make_op<T>(oshape, std::move(re), {xn}, make_backward(false));
    Tensor<T> ti = detail::make_op<T>(oshape, std::move(im), {xn}, make_backward(true));
    return {tr, ti};
}

// Inverse of rfft2: Hermitian-expand the half spectrum, inverse transform,
// return the real part. Assumes the layout produced by rfft2.
template <class T>
Tensor<T> irfft2(const ComplexTensor<T>& X) {
    if (X.real.shape() != X.imag.shape())
        throw contract_error("irfft2: real/imag shape mismatch " + shape_str(X.real.shape()) +
                             " vs " + shape_str(X.imag.shape()));
    if (X.real.rank() < 2) throw contract_error("irfft2 expects at least 2 dims");
    int64_t h = X.real.dim(-2), w2 = X.real.dim(-1);
    int64_t w = (w2 - 1) * 2;
    if (w2 < 2 || !detail::is_pow2(w) || !detail::is_pow2(h))
        throw contract_error("irfft2: shape " + shape_str(X.real.shape()) +
                             " is not an rfft2 half-spectrum layout");
    int64_t channels = X.real.numel() / (h * w2);
    Shape oshape = X.real.shape();
    oshape.back() = w;

    const auto& rd = X.real.data();
    const auto& id = X.imag.data();
    std::vector<T> out(static_cast<size_t>(channels * h * w));
    std::vector<std::complex<double>> spec(static_cast<size_t>(h * w2));
    std::vector<double> real(static_cast<size_t>(h * w));
    double norm = 1.0 / double(h * w);
    for (int64_t c = 0; c < channels; ++c) {
        for (int64_t i = 0; i < h * w2; ++i)
            spec[static_cast<size_t>(i)] = {double(rd[c * h * w2 + i]),
                                            double(id[c * h * w2 + i])};
        detail::fft2_half_to_real(spec.data(), h, w, real.data());
        for (int64_t i = 0; i < h * w; ++i)
            out[c * h * w + i] = static_cast<T>(real[static_cast<size_t>(i)] * norm);
    }

    auto rn = X.real.node();
    auto in = X.imag.node();
    return detail::make_op<T>(
        oshape, std::move(out), {rn, in},
        [rn, in, channels, h, w, w2](typename Tensor<T>::Node& self) {
            bool need_r = rn->requires_grad, need_i = in->requires_grad;
            if (need_r) rn->ensure_grad();
            if (need_i) in->ensure_grad();
            std::vector<std::complex<double>> spec(static_cast<size_t>(h * w2));
            double norm = 1.0 / double(h * w);
            for (int64_t c = 0; c < channels; ++c) {
                detail::fft2_real_to_half(self.grad.data() + c * h * w, h, w, spec.data());
                // kept entries take their own cell; interior columns also fold
                // in the conjugated mirror written by the Hermitian expansion,
                // which by the real-input symmetry doubles the kept cell
                for (int64_t i = 0; i < h * w2; ++i) {
                    int64_t v = i % w2;
                    double s = (v != 0 && v != w2 - 1) ? 2.0 * norm : norm;
                    std::complex<double> g = spec[static_cast<size_t>(i)] * s;
                    if (need_r) rn->grad[c * h * w2 + i] += static_cast<T>(g.real());
                    if (need_i) in->grad[c * h * w2 + i] += static_cast<T>(g.imag());
                }
            }
        });
}

}  // namespace pansharp
