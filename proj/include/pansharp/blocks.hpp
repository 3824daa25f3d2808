#pragma once

#include "fft.hpp"
#include "nn.hpp"
#include "wavelet.hpp"

namespace pansharp {

// Channel attention over flattened spatial tokens: Q, K (N, C, M) -> (N, C, C)
// with row-stochastic rows (softmax of QK^T / sqrt(C)).
template <class T>
Tensor<T> attention_matrix(const Tensor<T>& Q, const Tensor<T>& K) {
    if (Q.rank() != 3 || K.shape() != Q.shape())
        throw contract_error("attention_matrix expects matching (N,C,M) inputs, got " +
                             shape_str(Q.shape()) + " and " + shape_str(K.shape()));
    T scale = static_cast<T>(1.0 / std::sqrt(double(Q.dim(1))));
    return softmax_lastdim(mul_scalar(matmul(Q, K, false, true), scale));
}

template <class T>
Tensor<T> channel_attention(const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V) {
    return matmul(attention_matrix(Q, K), V);
}

// Frequency feature adaptation: the compact vector modulates the normalized
// feature map channel-wise, then a gated conv pair refines it residually.
// The modulation starts as the identity (gamma -> 1, beta -> 0).
template <class T>
struct FFABlock {
    int64_t C = 0;
    int gn_groups = 0;
    Tensor<T> mod_W, mod_b;                  // (2C, D), (2C): [beta | gamma]
    Conv2d<T> a_pw, a_dw, g_pw, g_dw;        // each branch: 1x1 then 3x3 depthwise

    FFABlock() = default;
    FFABlock(ParamRegistry<T>& reg, const std::string& prefix, int64_t c, int64_t vec_dim,
             Rng& rng, int gn_groups_ = 0)
        : C(c), gn_groups(gn_groups_ > 0 ? gn_groups_ : group_norm_groups(c)) {
        mod_W = reg.constant(prefix + ".mod.W", {2 * c, vec_dim}, T(0));
        std::vector<T> mb(static_cast<size_t>(2 * c), T(0));
        for (int64_t i = c; i < 2 * c; ++i) mb[static_cast<size_t>(i)] = T(1);
        mod_b = reg.create(prefix + ".mod.b", {2 * c}, std::move(mb));
        a_pw = Conv2d<T>(reg, prefix + ".a_pw", c, c, 1, rng);
        a_dw = Conv2d<T>(reg, prefix + ".a_dw", c, c, 3, rng, 1, -1, c);
        g_pw = Conv2d<T>(reg, prefix + ".g_pw", c, c, 1, rng);
        g_dw = Conv2d<T>(reg, prefix + ".g_dw", c, c, 3, rng, 1, -1, c);
    }

    // f: (N, C, h, w); v: (N, D)
    Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& v) const {
        if (v.rank() != 2 || v.dim(1) != mod_W.dim(1))
            throw contract_error("ffa: vector shape " + shape_str(v.shape()) +
                                 " does not match modulation weight " + shape_str(mod_W.shape()));
        int64_t n = v.dim(0);
        auto bg = matmul(v, mod_W, false, true) + reshape(mod_b, {1, 2 * C});
        auto beta = reshape(slice(bg, 1, 0, C), {n, C, 1, 1});
        auto gamma = reshape(slice(bg, 1, C, C), {n, C, 1, 1});
        auto fp = gamma * group_norm(f, gn_groups) + beta;
        auto a = a_dw(a_pw(fp));
        auto g = g_dw(g_pw(fp));
        return a * gelu(g) + f;
    }
};

// Fourier transform channel attention: self-attention over channels in the
// half spectrum, real and imaginary parts attended independently.
template <class T>
struct FTCABlock {
    int64_t C = 0;
    Conv2d<T> qkv;  // 1x1, C -> 3C

    FTCABlock() = default;
    FTCABlock(ParamRegistry<T>& reg, const std::string& prefix, int64_t c, Rng& rng)
        : C(c), qkv(Conv2d<T>(reg, prefix + ".qkv", c, 3 * c, 1, rng)) {}

    Tensor<T> operator()(const Tensor<T>& f) const {
        int64_t n = f.dim(0), h = f.dim(2), w = f.dim(3);
        auto X = rfft2(qkv(f));  // (N, 3C, h, w/2+1)
        int64_t w2 = w / 2 + 1, m = h * w2;
        auto attend = [&](const Tensor<T>& part) {
            auto q = reshape(slice(part, 1, 0, C), {n, C, m});
            auto k = reshape(slice(part, 1, C, C), {n, C, m});
            auto v = reshape(slice(part, 1, 2 * C, C), {n, C, m});
            return reshape(channel_attention(q, k, v), {n, C, h, w2});
        };
        ComplexTensor<T> Y{attend(X.real), attend(X.imag)};
        return irfft2(Y) + f;
    }
};

// Wavelet cross attention conditioned on the S-Cond stack. The stack is
// projected to C channels and brought to the block's resolution by a learned
// stride-2 chain fixed at construction.
template <class T>
struct SWTCABlock {
    int64_t C = 0;
    Conv2d<T> s_in;                 // 1x1, s_channels -> C
    std::vector<Conv2d<T>> s_down;  // stride-2 3x3, C -> C
    Conv2d<T> v1, qk1, q2, kv2;     // all 1x1

    SWTCABlock() = default;
    SWTCABlock(ParamRegistry<T>& reg, const std::string& prefix, int64_t c, int64_t s_channels,
               int64_t n_down, Rng& rng)
        : C(c), s_in(Conv2d<T>(reg, prefix + ".s_in", s_channels, c, 1, rng)) {
        for (int64_t d = 0; d < n_down; ++d)
            s_down.push_back(
                Conv2d<T>(reg, prefix + ".s_down" + std::to_string(d), c, c, 3, rng, 2));
        qk1 = Conv2d<T>(reg, prefix + ".qk1", c, 2 * c, 1, rng);
        v1 = Conv2d<T>(reg, prefix + ".v1", c, c, 1, rng);
        q2 = Conv2d<T>(reg, prefix + ".q2", c, c, 1, rng);
        kv2 = Conv2d<T>(reg, prefix + ".kv2", c, 2 * c, 1, rng);
    }

    // f: (N, C, h, w); s_cond: (N, B+3, H, W) with H = h * 2^n_down
    Tensor<T> operator()(const Tensor<T>& f, const Tensor<T>& s_cond) const {
        auto s = s_in(s_cond);
        for (const auto& d : s_down) s = d(gelu(s));
        if (s.dim(2) != f.dim(2) || s.dim(3) != f.dim(3))
            throw contract_error("swtca: conditioning resampled to " + shape_str(s.shape()) +
                                 " does not match feature " + shape_str(f.shape()));
        int64_t n = f.dim(0), h = f.dim(2), w = f.dim(3), m = h * w;
        auto flat = [&](const Tensor<T>& x) { return reshape(x, {n, C, m}); };

        auto qk = qk1(s);
        auto f1 = channel_attention(flat(slice(qk, 1, 0, C)), flat(slice(qk, 1, C, C)),
                                    flat(v1(f)));
        auto kv = kv2(s);
        auto out = channel_attention(flat(q2(reshape(f1, {n, C, h, w}))),
                                     flat(slice(kv, 1, 0, C)), flat(slice(kv, 1, C, C)));
        return reshape(out, {n, C, h, w}) + f;
    }
};

// Lightweight direct-regression network; pretrained on its own, then frozen
// and queried by the vector extractor for [theta | I_HR].
template <class T>
struct PriorNetwork {
    struct Out {
        Tensor<T> i_hr;   // (N, B, H, W)
        Tensor<T> theta;  // (N, B, H, W), >= 1e-3
    };

    int64_t bands = 0, width = 0;
    bool trained = false;
    ParamRegistry<T> params;
    Conv2d<T> stem, head;
    std::vector<ResBlock<T>> blocks;

    PriorNetwork() = default;
    PriorNetwork(int64_t bands_, int64_t width_, uint64_t seed) : bands(bands_), width(width_) {
        Rng rng(derive_seed(seed, "prior-init"));
        stem = Conv2d<T>(params, "stem", bands + 1, width, 3, rng);
        for (int i = 0; i < 4; ++i)
            blocks.emplace_back(params, "rb" + std::to_string(i), width, width, 0, rng);
        head = Conv2d<T>(params, "head", width, 2 * bands, 3, rng);
        // near-zero head so theta starts at softplus(~0) rather than at the
        // trunk's activation magnitude
        for (auto& w : head.W.mutable_data()) w *= T(0.01);
    }

    // pan: (N, 1, H, W); lrms_up: (N, B, H, W)
    Out forward(const Tensor<T>& pan, const Tensor<T>& lrms_up) const {
        auto x = stem(concat<T>({lrms_up, pan}, 1));
        for (const auto& b : blocks) x = b(x);
        auto h = head(x);
        return {slice(h, 1, 0, bands), add_scalar(softplus(slice(h, 1, bands, bands)), T(1e-3))};
    }
};

// Compact conditioning vector: two ResBlocks over the frozen prior's output,
// global average pool, linear projection to D.
template <class T>
struct VectorExtractor {
    int64_t width = 0, vec_dim = 0;

    Conv2d<T> stem;
    ResBlock<T> rb1, rb2;
    Linear<T> proj;

    VectorExtractor() = default;
    VectorExtractor(ParamRegistry<T>& reg, const std::string& prefix, int64_t bands,
                    int64_t width_, int64_t vec_dim_, Rng& rng)
        : width(width_), vec_dim(vec_dim_) {
        stem = Conv2d<T>(reg, prefix + ".stem", 2 * bands, width, 3, rng);
        rb1 = ResBlock<T>(reg, prefix + ".rb1", width, width, 0, rng);
        rb2 = ResBlock<T>(reg, prefix + ".rb2", width, width, 0, rng);
        proj = Linear<T>(reg, prefix + ".proj", width, vec_dim, rng);
    }

    // The [theta | I_HR] stack; constant per scene, so callers may cache it.
    static Tensor<T> prior_cond(const Tensor<T>& pan, const Tensor<T>& lrms_up,
                                const PriorNetwork<T>& prior) {
        if (!prior.trained)
            throw contract_error("vector_extractor requires a trained (frozen) prior network");
        NoGradGuard ng;
        auto po = prior.forward(pan, lrms_up);
        return concat<T>({po.theta, po.i_hr}, 1);
    }

    Tensor<T> from_cond(const Tensor<T>& cond) const {
        auto x = rb2(rb1(stem(cond)));
        return proj(global_mean_hw(x));
    }

    // Returns (N, D). The prior is evaluated without gradient tracking.
    Tensor<T> operator()(const Tensor<T>& pan, const Tensor<T>& lrms_up,
                         const PriorNetwork<T>& prior) const {
        return from_cond(prior_cond(pan, lrms_up, prior));
    }
};

}  // namespace pansharp
