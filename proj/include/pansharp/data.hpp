#pragma once

#include <cmath>

#include "rng.hpp"
#include "tensor.hpp"

namespace pansharp {

// Reduced-resolution training sample. lrms is always the seeded degradation
// of hrms; edge_mask marks the synthetic high-frequency structures (1 where a
// rectangle outline or line was drawn).
template <class T>
struct Scene {
    Tensor<T> pan;        // (1, H, W)
    Tensor<T> lrms;       // (B, H/4, W/4)
    Tensor<T> lrms_up;    // (B, H, W)
    Tensor<T> hrms;       // (B, H, W)
    Tensor<T> edge_mask;  // (1, H, W), {0,1}
};

namespace detail {

// Separable blur with half-sample symmetric (edge-repeating) padding; this
// padding makes a normalized kernel exactly mass-preserving, which the
// degradation contract relies on.
template <class T>
void blur_axis_sym(std::vector<T>& img, int64_t outer, int64_t n, int64_t inner,
                   const std::vector<double>& k) {
    int64_t half = static_cast<int64_t>(k.size()) / 2;
    std::vector<T> row(static_cast<size_t>(n));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            for (int64_t p = 0; p < n; ++p) {
                double acc = 0;
                for (int64_t j = 0; j < static_cast<int64_t>(k.size()); ++j) {
                    int64_t q = p + j - half;
                    if (q < 0) q = -q - 1;           // symmetric: -1 -> 0, -2 -> 1
                    if (q >= n) q = 2 * n - 1 - q;   //             n -> n-1
                    acc += k[size_t(j)] * double(img[(o * n + q) * inner + i]);
                }
                row[size_t(p)] = static_cast<T>(acc);
            }
            for (int64_t p = 0; p < n; ++p) img[(o * n + p) * inner + i] = row[size_t(p)];
        }
}

inline std::vector<double> gaussian_kernel7(double sigma) {
    std::vector<double> k(7);
    double s = 0;
    for (int i = 0; i < 7; ++i) {
        double d = i - 3;
        k[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
        s += k[size_t(i)];
    }
    for (auto& v : k) v /= s;
    return k;
}

}  // namespace detail

// Gaussian blur (sigma 1.6, 7x7) per band with symmetric padding.
template <class T>
Tensor<T> gaussian_blur7(const Tensor<T>& x, double sigma = 1.6) {
    if (x.rank() != 3) throw contract_error("gaussian_blur7 expects (B,H,W)");
    int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2);
    auto k = detail::gaussian_kernel7(sigma);
    std::vector<T> buf = x.data();
    detail::blur_axis_sym(buf, B, H, W, k);      // along y
    detail::blur_axis_sym(buf, B * H, W, 1, k);  // along x
    return Tensor<T>::from(x.shape(), std::move(buf));
}

// Reduced-resolution protocol: blur then 4x4 block-average decimation. The
// block average keeps the operation flip-equivariant and mean-preserving.
template <class T>
Tensor<T> wald_degrade(const Tensor<T>& hrms) {
    if (hrms.rank() != 3) throw contract_error("wald_degrade expects (B,H,W)");
    int64_t B = hrms.dim(0), H = hrms.dim(1), W = hrms.dim(2);
    if (H % 4 != 0 || W % 4 != 0)
        throw contract_error("wald_degrade: dims must be divisible by 4, got " +
                             shape_str(hrms.shape()));
    auto blurred = gaussian_blur7(hrms);
    const auto& s = blurred.data();
    int64_t h = H / 4, w = W / 4;
    std::vector<T> out(static_cast<size_t>(B * h * w));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t dy = 0; dy < 4; ++dy)
                    for (int64_t dx = 0; dx < 4; ++dx)
                        acc += double(s[(b * H + 4 * y + dy) * W + 4 * x + dx]);
                out[(b * h + y) * w + x] = static_cast<T>(acc / 16.0);
            }
    return Tensor<T>::from({B, h, w}, std::move(out));
}

// Catmull-Rom bicubic x4 upsampling (a = -0.5), clamped borders, pixel-center
// aligned with the 4x4 block decimation.
template <class T>
Tensor<T> bicubic_up4(const Tensor<T>& lr) {
    if (lr.rank() != 3) throw contract_error("bicubic_up4 expects (B,h,w)");
    int64_t B = lr.dim(0), h = lr.dim(1), w = lr.dim(2);
    int64_t H = h * 4, W = w * 4;
    auto cubic = [](double t) {
        double a = -0.5, at = std::abs(t);
        if (at <= 1) return (a + 2) * at * at * at - (a + 3) * at * at + 1;
        if (at < 2) return a * at * at * at - 5 * a * at * at + 8 * a * at - 4 * a;
        return 0.0;
    };
    const auto& s = lr.data();
    std::vector<T> out(static_cast<size_t>(B * H * W));
    auto clampi = [](int64_t v, int64_t n) { return std::max<int64_t>(0, std::min(n - 1, v)); };
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y) {
            double sy = (double(y) + 0.5) / 4.0 - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(sy));
            for (int64_t x = 0; x < W; ++x) {
                double sx = (double(x) + 0.5) / 4.0 - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(sx));
                double acc = 0;
                for (int64_t dy = -1; dy <= 2; ++dy) {
                    double wy = cubic(sy - double(y0 + dy));
                    if (wy == 0.0) continue;
                    for (int64_t dx = -1; dx <= 2; ++dx) {
                        double wx = cubic(sx - double(x0 + dx));
                        if (wx == 0.0) continue;
                        acc += wy * wx *
                               double(s[(b * h + clampi(y0 + dy, h)) * w + clampi(x0 + dx, w)]);
                    }
                }
                out[(b * H + y) * W + x] = static_cast<T>(acc);
            }
        }
    return Tensor<T>::from({B, H, W}, std::move(out));
}

namespace detail {

template <class T>
Tensor<T> flip_hw(const Tensor<T>& x, bool flip_h, bool flip_v) {
    if (!flip_h && !flip_v) return x;
    int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const auto& s = x.data();
    std::vector<T> out(s.size());
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
                int64_t sy = flip_v ? H - 1 - y : y;
                int64_t sx = flip_h ? W - 1 - xx : xx;
                out[(c * H + y) * W + xx] = s[(c * H + sy) * W + sx];
            }
    return Tensor<T>::from(x.shape(), std::move(out));
}

}  // namespace detail

// The same flip applied to every raster of the scene; an involution.
template <class T>
Scene<T> augment_flip(const Scene<T>& s, bool flip_h, bool flip_v) {
    Scene<T> o;
    o.pan = detail::flip_hw(s.pan, flip_h, flip_v);
    o.lrms = detail::flip_hw(s.lrms, flip_h, flip_v);
    o.lrms_up = detail::flip_hw(s.lrms_up, flip_h, flip_v);
    o.hrms = detail::flip_hw(s.hrms, flip_h, flip_v);
    o.edge_mask = detail::flip_hw(s.edge_mask, flip_h, flip_v);
    return o;
}

namespace detail {

// Smooth field in [0,1]: coarse uniform grid, bilinearly upsampled.
template <class T>
std::vector<T> smooth_field(int64_t H, int64_t W, Rng& rng) {
    int64_t gh = std::max<int64_t>(2, H / 8), gw = std::max<int64_t>(2, W / 8);
    std::vector<double> grid(static_cast<size_t>(gh * gw));
    for (auto& v : grid) v = rng.uniform();
    std::vector<T> out(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double gy = double(y) / double(H - 1) * double(gh - 1);
            double gx = double(x) / double(W - 1) * double(gw - 1);
            int64_t y0 = std::min<int64_t>(gh - 2, int64_t(gy));
            int64_t x0 = std::min<int64_t>(gw - 2, int64_t(gx));
            double fy = gy - double(y0), fx = gx - double(x0);
            double v = grid[size_t(y0 * gw + x0)] * (1 - fy) * (1 - fx) +
                       grid[size_t(y0 * gw + x0 + 1)] * (1 - fy) * fx +
                       grid[size_t((y0 + 1) * gw + x0)] * fy * (1 - fx) +
                       grid[size_t((y0 + 1) * gw + x0 + 1)] * fy * fx;
            out[size_t(y * W + x)] = static_cast<T>(v);
        }
    return out;
}

}  // namespace detail

// Seeded synthetic multispectral scene: band-correlated smooth background,
// sharp rectangles, thin lines; PAN adds a detail layer no band carries.
template <class T>
Scene<T> synth_scene(uint64_t seed, int64_t B, int64_t H, int64_t W) {
    if (H % 4 != 0 || W % 4 != 0)
        throw contract_error("synth_scene: H, W must be divisible by 4");
    if (B < 1 || H < 8 || W < 8) throw contract_error("synth_scene: degenerate geometry");
    Rng rng(derive_seed(seed, "synth-scene"));

    auto base = detail::smooth_field<T>(H, W, rng);
    std::vector<T> hrms(static_cast<size_t>(B * H * W));
    for (int64_t b = 0; b < B; ++b) {
        auto own = detail::smooth_field<T>(H, W, rng);
        for (int64_t p = 0; p < H * W; ++p) {
            double v = 0.65 * double(base[size_t(p)]) + 0.35 * double(own[size_t(p)]);
            hrms[size_t(b * H * W + p)] = static_cast<T>(0.2 + 0.6 * v);
        }
    }
    std::vector<T> edge(static_cast<size_t>(H * W), T(0));
    auto mark = [&](int64_t y, int64_t x) {
        if (y >= 0 && y < H && x >= 0 && x < W) edge[size_t(y * W + x)] = T(1);
    };

    // sharp rectangles with band-correlated amplitude; outlines are "edges"
    for (int rect = 0; rect < 6; ++rect) {
        int64_t rh = H / 8 + rng.uniform_int(0, H / 4);
        int64_t rw = W / 8 + rng.uniform_int(0, W / 4);
        int64_t y0 = rng.uniform_int(0, H - rh - 1), x0 = rng.uniform_int(0, W - rw - 1);
        double amp = (rng.uniform() * 2.0 - 1.0) * 0.35;
        for (int64_t b = 0; b < B; ++b) {
            double ab = amp * (0.7 + 0.6 * rng.uniform());
            for (int64_t y = y0; y < y0 + rh; ++y)
                for (int64_t x = x0; x < x0 + rw; ++x)
                    hrms[size_t((b * H + y) * W + x)] += static_cast<T>(ab);
        }
        for (int64_t y = y0; y < y0 + rh; ++y) {
            mark(y, x0);
            mark(y, x0 + rw - 1);
        }
        for (int64_t x = x0; x < x0 + rw; ++x) {
            mark(y0, x);
            mark(y0 + rh - 1, x);
        }
    }
    // thin lines: guaranteed high-frequency content in every band
    for (int line = 0; line < 4; ++line) {
        bool horiz = rng.uniform() < 0.5;
        int64_t pos = rng.uniform_int(1, (horiz ? H : W) - 2);
        double amp = (rng.uniform() < 0.5 ? -1 : 1) * (0.25 + 0.15 * rng.uniform());
        for (int64_t b = 0; b < B; ++b) {
            double ab = amp * (0.7 + 0.6 * rng.uniform());
            for (int64_t q = 0; q < (horiz ? W : H); ++q) {
                int64_t y = horiz ? pos : q, x = horiz ? q : pos;
                hrms[size_t((b * H + y) * W + x)] += static_cast<T>(ab);
            }
        }
        for (int64_t q = 0; q < (horiz ? W : H); ++q)
            mark(horiz ? pos : q, horiz ? q : pos);
    }
    for (auto& v : hrms) v = static_cast<T>(std::min(1.0, std::max(0.0, double(v))));

    // PAN: positive band-weighted average plus an exclusive detail layer
    std::vector<double> bw(static_cast<size_t>(B));
    double ws = 0;
    for (auto& v : bw) {
        v = 1.0 + rng.uniform();
        ws += v;
    }
    std::vector<T> pan(static_cast<size_t>(H * W), T(0));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < H * W; ++p)
            pan[size_t(p)] += static_cast<T>(bw[size_t(b)] / ws *
                                             double(hrms[size_t(b * H * W + p)]));
    for (int line = 0; line < 3; ++line) {
        bool horiz = rng.uniform() < 0.5;
        int64_t pos = rng.uniform_int(1, (horiz ? H : W) - 2);
        double amp = (rng.uniform() < 0.5 ? -1 : 1) * 0.2;
        for (int64_t q = 0; q < (horiz ? W : H); ++q) {
            int64_t y = horiz ? pos : q, x = horiz ? q : pos;
            pan[size_t(y * W + x)] += static_cast<T>(amp);
            mark(y, x);
        }
    }
    for (auto& v : pan) v = static_cast<T>(std::min(1.0, std::max(0.0, double(v))));

    Scene<T> s;
    s.hrms = Tensor<T>::from({B, H, W}, std::move(hrms));
    s.pan = Tensor<T>::from({1, H, W}, std::move(pan));
    s.edge_mask = Tensor<T>::from({1, H, W}, std::move(edge));
    s.lrms = wald_degrade(s.hrms);
    auto up = bicubic_up4(s.lrms);
    std::vector<T> upd = up.data();
    for (auto& v : upd) v = static_cast<T>(std::min(1.0, std::max(0.0, double(v))));
    s.lrms_up = Tensor<T>::from(up.shape(), std::move(upd));
    return s;
}

}  // namespace pansharp
