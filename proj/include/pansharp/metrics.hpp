#pragma once

#include <cmath>
#include <cstdio>
#include <vector>

#include "tensor.hpp"

namespace pansharp {

// Evaluation metrics are plain computations on tensor data; nothing here
// participates in autodiff.

struct ReferenceMetrics {
    double psnr = 0, ssim = 0, scc = 0;
};

struct FullResMetrics {
    double d_lambda = 0, d_s = 0, hqnr = 0;
};

struct MetricStats {
    double mean = 0, std = 0;
};

inline MetricStats aggregate(const std::vector<double>& values) {
    if (values.empty()) throw contract_error("aggregate: empty value set");
    MetricStats s;
    for (double v : values) s.mean += v;
    s.mean /= double(values.size());
    for (double v : values) s.std += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(s.std / double(values.size()));
    return s;
}

namespace detail {

template <class T>
void check_bhw(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (a.rank() != 3 || a.shape() != b.shape())
        throw shape_error(std::string(who) + ": expected matching (B,H,W), got " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// Mean spectral angle in degrees; pixels with near-zero spectra are skipped.
template <class T>
double sam(const Tensor<T>& fused, const Tensor<T>& ref) {
    detail::check_bhw(fused, ref, "sam");
    int64_t B = fused.dim(0), H = fused.dim(1), W = fused.dim(2);
    if (B < 2) throw contract_error("sam needs at least 2 bands");
    const auto& f = fused.data();
    const auto& r = ref.data();
    double acc = 0;
    int64_t used = 0;
    std::vector<double> u(static_cast<size_t>(B)), v(static_cast<size_t>(B));
    for (int64_t p = 0; p < H * W; ++p) {
        double nf = 0, nr = 0;
        for (int64_t b = 0; b < B; ++b) {
            u[size_t(b)] = double(f[b * H * W + p]);
            v[size_t(b)] = double(r[b * H * W + p]);
            nf += u[size_t(b)] * u[size_t(b)];
            nr += v[size_t(b)] * v[size_t(b)];
        }
        nf = std::sqrt(nf);
        nr = std::sqrt(nr);
        if (nf < 1e-12 || nr < 1e-12) continue;
        // chord-based angle (2 asin(|u/|u| - v/|v||/2)): exact at 0, well
        // conditioned for small angles where acos of the cosine is not
        double chord2 = 0;
        for (int64_t b = 0; b < B; ++b) {
            double d = u[size_t(b)] / nf - v[size_t(b)] / nr;
            chord2 += d * d;
        }
        acc += 2.0 * std::asin(std::min(1.0, std::sqrt(chord2) / 2.0));
        ++used;
    }
    if (used == 0) throw value_domain_error("sam: every pixel has a near-zero spectrum");
    return acc / double(used) * 180.0 / 3.14159265358979323846264338327950288;
}

// Relative global dimensionless error: 100 * ratio * sqrt(mean_b RMSE_b^2/mu_b^2).
template <class T>
double ergas(const Tensor<T>& fused, const Tensor<T>& ref, double scale_ratio) {
    detail::check_bhw(fused, ref, "ergas");
    int64_t B = fused.dim(0), n = fused.dim(1) * fused.dim(2);
    const auto& f = fused.data();
    const auto& r = ref.data();
    double acc = 0;
    for (int64_t b = 0; b < B; ++b) {
        double mse = 0, mu = 0;
        for (int64_t p = 0; p < n; ++p) {
            double d = double(f[b * n + p]) - double(r[b * n + p]);
            mse += d * d;
            mu += double(r[b * n + p]);
        }
        mse /= double(n);
        mu /= double(n);
        if (mu == 0.0) throw value_domain_error("ergas: zero-mean reference band " +
                                                std::to_string(b));
        acc += mse / (mu * mu);
    }
    return 100.0 * scale_ratio * std::sqrt(acc / double(B));
}

namespace detail {

inline std::vector<double> gaussian_window11() {
    std::vector<double> w(11 * 11);
    double s = 0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            double dy = y - 5, dx = x - 5;
            w[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            s += w[y * 11 + x];
        }
    for (auto& v : w) v /= s;
    return w;
}

}  // namespace detail

// PSNR (band-averaged, capped at 99 dB), SSIM (11x11 Gaussian, sigma 1.5,
// valid positions), SCC (Pearson correlation of 3x3 Laplacian responses).
template <class T>
ReferenceMetrics reference_metrics(const Tensor<T>& fused, const Tensor<T>& ref, double L = 1.0) {
    detail::check_bhw(fused, ref, "reference_metrics");
    int64_t B = fused.dim(0), H = fused.dim(1), W = fused.dim(2);
    if (H < 11 || W < 11) throw contract_error("reference_metrics needs at least 11x11 images");
    const auto& f = fused.data();
    const auto& r = ref.data();
    ReferenceMetrics out;

    for (int64_t b = 0; b < B; ++b) {
        double mse = 0;
        for (int64_t p = 0; p < H * W; ++p) {
            double d = double(f[b * H * W + p]) - double(r[b * H * W + p]);
            mse += d * d;
        }
        mse /= double(H * W);
        out.psnr += mse == 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(L * L / mse));
    }
    out.psnr /= double(B);

    static const std::vector<double> win = detail::gaussian_window11();
    const double C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);
    double ssim_acc = 0;
    int64_t ssim_n = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y + 11 <= H; ++y)
            for (int64_t x = 0; x + 11 <= W; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int wy = 0; wy < 11; ++wy)
                    for (int wx = 0; wx < 11; ++wx) {
                        double wv = win[wy * 11 + wx];
                        double xv = double(f[(b * H + y + wy) * W + x + wx]);
                        double yv = double(r[(b * H + y + wy) * W + x + wx]);
                        mx += wv * xv;
                        my += wv * yv;
                        sxx += wv * xv * xv;
                        syy += wv * yv * yv;
                        sxy += wv * xv * yv;
                    }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                ssim_acc += (2 * mx * my + C1) * (2 * sxy + C2) /
                            ((mx * mx + my * my + C1) * (sxx + syy + C2));
                ++ssim_n;
            }
    out.ssim = ssim_acc / double(ssim_n);

    // 4-neighbor Laplacian on the interior, correlated per band
    auto lap = [&](const std::vector<T>& img, int64_t b, int64_t y, int64_t x) {
        auto at = [&](int64_t yy, int64_t xx) { return double(img[(b * H + yy) * W + xx]); };
        return 4 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1);
    };
    double scc_acc = 0;
    int64_t scc_bands = 0;
    for (int64_t b = 0; b < B; ++b) {
        double mx = 0, my = 0;
        int64_t n = (H - 2) * (W - 2);
        for (int64_t y = 1; y + 1 < H; ++y)
            for (int64_t x = 1; x + 1 < W; ++x) {
                mx += lap(f, b, y, x);
                my += lap(r, b, y, x);
            }
        mx /= double(n);
        my /= double(n);
        double sxx = 0, syy = 0, sxy = 0;
        for (int64_t y = 1; y + 1 < H; ++y)
            for (int64_t x = 1; x + 1 < W; ++x) {
                double dx = lap(f, b, y, x) - mx, dy = lap(r, b, y, x) - my;
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
        if (sxx == 0.0 || syy == 0.0) {
            std::fprintf(stderr, "scc: band %lld has zero high-pass variance, skipped\n",
                         static_cast<long long>(b));
            continue;
        }
        scc_acc += sxy / std::sqrt(sxx * syy);
        ++scc_bands;
    }
    out.scc = scc_bands > 0 ? scc_acc / double(scc_bands) : 0.0;
    return out;
}

namespace detail {

// Cayley-Dickson product / conjugate on length-2^n coefficient vectors.
inline void cd_mul(const double* a, const double* b, double* out, int64_t n) {
    if (n == 1) {
        out[0] = a[0] * b[0];
        return;
    }
    int64_t h = n / 2;
    // (a1,a2)(b1,b2) = (a1 b1 - b2* a2, b2 a1 + a2 b1*)
    std::vector<double> t1(h), t2(h), c(h);
    auto conj_into = [&](const double* x, std::vector<double>& dst) {
        dst[0] = x[0];
        for (int64_t i = 1; i < h; ++i) dst[i] = -x[i];
    };
    conj_into(b + h, c);
    cd_mul(a, b, t1.data(), h);       // a1 b1
    cd_mul(c.data(), a + h, t2.data(), h);  // b2* a2
    for (int64_t i = 0; i < h; ++i) out[i] = t1[i] - t2[i];
    conj_into(b, c);
    cd_mul(b + h, a, t1.data(), h);   // b2 a1
    cd_mul(a + h, c.data(), t2.data(), h);  // a2 b1*
    for (int64_t i = 0; i < h; ++i) out[h + i] = t1[i] + t2[i];
}

inline void cd_conj(double* a, int64_t n) {
    for (int64_t i = 1; i < n; ++i) a[i] = -a[i];
}

// Universal image-quality index on two sample sets that are already reduced
// to sufficient statistics; deg is the hypercomplex dimension (1 = scalar).
// The covariance enters with the sign of its scalar component so a global
// sign flip scores -1 rather than +1.
inline double uiqi_from_stats(const std::vector<double>& m1, const std::vector<double>& m2,
                              double var1, double var2, const std::vector<double>& cov,
                              int64_t deg) {
    double n1 = 0, n2 = 0, cmod = 0;
    for (int64_t i = 0; i < deg; ++i) {
        n1 += m1[i] * m1[i];
        n2 += m2[i] * m2[i];
        cmod += cov[i] * cov[i];
    }
    cmod = std::sqrt(cmod);
    double scov = cov[0] < 0 ? -cmod : cmod;  // signed modulus
    double mean_den = n1 + n2, var_den = var1 + var2;
    const double eps = 1e-300;
    if (mean_den < eps && var_den < eps) return 1.0;  // two identical constants
    if (mean_den < eps) return 2.0 * scov / var_den;
    if (var_den < eps) return 2.0 * std::sqrt(n1 * n2) / mean_den;
    return 4.0 * scov * std::sqrt(n1 * n2) / (var_den * mean_den);
}

}  // namespace detail

// Hypercomplex universal image-quality index, mean over sliding windows of
// the given size with stride window/2. Bands are zero-padded to the next
// power of two and embedded as Cayley-Dickson coefficients.
template <class T>
double q2n(const Tensor<T>& fused, const Tensor<T>& ref, int64_t window) {
    detail::check_bhw(fused, ref, "q2n");
    int64_t B = fused.dim(0), H = fused.dim(1), W = fused.dim(2);
    if (window > H || window > W)
        throw contract_error("q2n: window " + std::to_string(window) + " exceeds image " +
                             shape_str(fused.shape()));
    if (window < 2) throw contract_error("q2n: window must be >= 2");
    int64_t deg = 1;
    while (deg < B) deg *= 2;
    const auto& f = fused.data();
    const auto& r = ref.data();

    int64_t stride = std::max<int64_t>(1, window / 2);
    double acc = 0;
    int64_t wins = 0;
    std::vector<double> z1(deg), z2(deg), prod(deg), m1(deg), m2(deg), cov(deg);
    for (int64_t y0 = 0; y0 + window <= H; y0 += stride)
        for (int64_t x0 = 0; x0 + window <= W; x0 += stride) {
            std::fill(m1.begin(), m1.end(), 0.0);
            std::fill(m2.begin(), m2.end(), 0.0);
            std::fill(cov.begin(), cov.end(), 0.0);
            double p1 = 0, p2 = 0;
            int64_t n = window * window;
            // first pass: means
            for (int64_t y = y0; y < y0 + window; ++y)
                for (int64_t x = x0; x < x0 + window; ++x)
                    for (int64_t b = 0; b < deg; ++b) {
                        double fv = b < B ? double(f[(b * H + y) * W + x]) : 0.0;
                        double rv = b < B ? double(r[(b * H + y) * W + x]) : 0.0;
                        m1[b] += fv / double(n);
                        m2[b] += rv / double(n);
                    }
            // second pass: centered second moments (hypercomplex covariance)
            for (int64_t y = y0; y < y0 + window; ++y)
                for (int64_t x = x0; x < x0 + window; ++x) {
                    for (int64_t b = 0; b < deg; ++b) {
                        z1[b] = (b < B ? double(f[(b * H + y) * W + x]) : 0.0) - m1[b];
                        z2[b] = (b < B ? double(r[(b * H + y) * W + x]) : 0.0) - m2[b];
                        p1 += z1[b] * z1[b] / double(n);
                        p2 += z2[b] * z2[b] / double(n);
                    }
                    detail::cd_conj(z2.data(), deg);
                    detail::cd_mul(z1.data(), z2.data(), prod.data(), deg);
                    for (int64_t b = 0; b < deg; ++b) cov[b] += prod[b] / double(n);
                }
            acc += detail::uiqi_from_stats(m1, m2, p1, p2, cov, deg);
            ++wins;
        }
    return acc / double(wins);
}

namespace detail {

// Scalar whole-image universal quality index with the usual degenerate-case
// branches.
template <class T>
double q_index(const T* a, const T* b, int64_t n) {
    double ma = 0, mb = 0;
    for (int64_t i = 0; i < n; ++i) {
        ma += double(a[i]);
        mb += double(b[i]);
    }
    ma /= double(n);
    mb /= double(n);
    double va = 0, vb = 0, cab = 0;
    for (int64_t i = 0; i < n; ++i) {
        double da = double(a[i]) - ma, db = double(b[i]) - mb;
        va += da * da;
        vb += db * db;
        cab += da * db;
    }
    va /= double(n);
    vb /= double(n);
    cab /= double(n);
    std::vector<double> m1{ma}, m2{mb}, cov{cab};
    return uiqi_from_stats(m1, m2, va, vb, cov, 1);
}

}  // namespace detail

// QNR-style no-reference protocol: spectral distortion from inter-band Q
// drift, spatial distortion from band-vs-PAN Q drift across scales.
template <class T>
FullResMetrics full_resolution_metrics(const Tensor<T>& fused, const Tensor<T>& lrms,
                                       const Tensor<T>& pan) {
    if (fused.rank() != 3 || lrms.rank() != 3)
        throw shape_error("full_resolution_metrics expects (B,H,W) stacks");
    int64_t B = fused.dim(0), H = fused.dim(1), W = fused.dim(2);
    if (lrms.dim(0) != B || lrms.dim(1) * 4 != H || lrms.dim(2) * 4 != W)
        throw contract_error("full_resolution_metrics: lrms " + shape_str(lrms.shape()) +
                             " is not the 1/4-scale companion of fused " +
                             shape_str(fused.shape()));
    int64_t ph = pan.dim(-2), pw = pan.dim(-1);
    if (ph != H || pw != W || pan.numel() != H * W)
        throw contract_error("full_resolution_metrics: pan " + shape_str(pan.shape()) +
                             " does not match fused " + shape_str(fused.shape()));
    const auto& fd = fused.data();
    const auto& ld = lrms.data();
    const auto& pd = pan.data();
    int64_t h = H / 4, w = W / 4;

    // 4x box-downsampled PAN
    std::vector<T> pan_lr(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double s = 0;
            for (int64_t dy = 0; dy < 4; ++dy)
                for (int64_t dx = 0; dx < 4; ++dx) s += double(pd[(4 * y + dy) * W + 4 * x + dx]);
            pan_lr[y * w + x] = static_cast<T>(s / 16.0);
        }

    FullResMetrics out;
    if (B > 1) {
        double acc = 0;
        int64_t pairs = 0;
        for (int64_t p = 0; p < B; ++p)
            for (int64_t q = 0; q < B; ++q) {
                if (p == q) continue;
                double qf = detail::q_index(fd.data() + p * H * W, fd.data() + q * H * W, H * W);
                double ql = detail::q_index(ld.data() + p * h * w, ld.data() + q * h * w, h * w);
                acc += std::abs(qf - ql);
                ++pairs;
            }
        out.d_lambda = acc / double(pairs);
    }
    double acc = 0;
    for (int64_t b = 0; b < B; ++b) {
        double qf = detail::q_index(fd.data() + b * H * W, pd.data(), H * W);
        double ql = detail::q_index(ld.data() + b * h * w, pan_lr.data(), h * w);
        acc += std::abs(qf - ql);
    }
    out.d_s = acc / double(B);
    out.hqnr = (1.0 - out.d_lambda) * (1.0 - out.d_s);
    return out;
}

}  // namespace pansharp
