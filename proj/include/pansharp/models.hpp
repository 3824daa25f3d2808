#pragma once

#include "blocks.hpp"

namespace pansharp {

struct ModelConfig {
    int64_t bands = 4;
    int64_t base_channels = 16;
    int64_t stages = 3;
    std::vector<int64_t> multipliers = {1, 2, 4};
    int64_t vec_dim = 32;
    int gn_groups = 0;  // 0 = automatic (4 when divisible, else 1)
    WaveletKind conditioning = WaveletKind::SWT;
    bool ffa_on = true;
    bool hqfe_on = true;

    void validate() const {
        if (bands < 1 || base_channels < 1 || stages < 1 || vec_dim < 1)
            throw config_error("model config: counts must be positive");
        if (static_cast<int64_t>(multipliers.size()) != stages)
            throw config_error("model config: " + std::to_string(multipliers.size()) +
                               " multipliers for " + std::to_string(stages) + " stages");
        for (int64_t m : multipliers)
            if (m < 1) throw config_error("model config: multipliers must be positive");
    }

    int64_t channels(int64_t stage) const {
        return base_channels * multipliers[static_cast<size_t>(stage)];
    }
};

template <class T>
struct TeacherOutput {
    Tensor<T> x0_hat;                 // (N, B, H, W)
    Tensor<T> theta_hat;              // (N, B, H, W), >= 1e-3
    std::vector<Tensor<T>> features;  // 2 * stages taps
};

// Batched wavelet conditioning stack, (N, B+3, H, W). The decimated variant is
// brought back to full resolution so the attention blocks' fixed stride-2
// resampler chains see one geometry.
template <class T>
Tensor<T> build_s_cond_batch(const Tensor<T>& pan, const Tensor<T>& lrms_up, WaveletKind kind,
                             const std::string& filter = "haar") {
    if (pan.rank() != 4 || lrms_up.rank() != 4 || pan.dim(1) != 1)
        throw contract_error("build_s_cond_batch expects pan (N,1,H,W) and lrms_up (N,B,H,W)");
    if (kind == WaveletKind::SWT) {
        auto bp = swt2(pan, filter);
        auto bm = swt2(lrms_up, filter);
        return concat<T>({bm.L, bp.H, bp.V, bp.D}, 1);
    }
    auto bp = dwt2(pan, filter);
    auto bm = dwt2(lrms_up, filter);
    return upsample_nearest2x(concat<T>({bm.L, bp.H, bp.V, bp.D}, 1));
}

namespace detail {

template <class T>
void check_model_inputs(const Tensor<T>& x_t, const Tensor<T>& pan, const Tensor<T>& lrms_up,
                        size_t tn, int64_t bands) {
    if (x_t.rank() != 4 || pan.rank() != 4 || lrms_up.rank() != 4)
        throw contract_error("model inputs must be rank-4 (N,C,H,W)");
    if (x_t.dim(1) != bands || lrms_up.dim(1) != bands || pan.dim(1) != 1)
        throw contract_error("model input channels: x_t " + shape_str(x_t.shape()) + ", pan " +
                             shape_str(pan.shape()) + ", lrms_up " + shape_str(lrms_up.shape()) +
                             " for B=" + std::to_string(bands));
    if (x_t.dim(0) != pan.dim(0) || x_t.dim(0) != lrms_up.dim(0) ||
        x_t.dim(2) != pan.dim(2) || x_t.dim(3) != pan.dim(3) ||
        x_t.dim(2) != lrms_up.dim(2) || x_t.dim(3) != lrms_up.dim(3))
        throw contract_error("model inputs not aligned: " + shape_str(x_t.shape()) + " / " +
                             shape_str(pan.shape()) + " / " + shape_str(lrms_up.shape()));
    if (static_cast<int64_t>(tn) != x_t.dim(0))
        throw contract_error("one timestep per batch sample required");
}

template <class T>
void check_finite_output(const Tensor<T>& h, const char* who) {
    for (T v : h.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw numeric_error(std::string(who) + ": non-finite network output");
}

}  // namespace detail

// Teacher U-Net: encoder ResBlock+FFA per stage, decoder ResBlock+FTCA+SWTCA,
// dual head for the X0 prediction and the uncertainty map.
template <class T>
class FSATeacher {
public:
    ModelConfig cfg;
    ParamRegistry<T> params;

    FSATeacher(const ModelConfig& cfg_, uint64_t seed) : cfg(cfg_) {
        cfg.validate();
        Rng rng(derive_seed(seed, "fsa-t-init"));
        int64_t B = cfg.bands, c0 = cfg.channels(0), S = cfg.stages;
        emb_dim_ = 4 * cfg.base_channels;
        if (emb_dim_ % 2 != 0) ++emb_dim_;

        stem_ = Conv2d<T>(params, "stem", 2 * B + 1, c0, 3, rng);
        sig_.push_back("stem(" + std::to_string(2 * B + 1) + "->" + std::to_string(c0) + ")");
        if (cfg.ffa_on) extractor_ = VectorExtractor<T>(params, "vx", B, c0, cfg.vec_dim, rng);

        for (int64_t i = 0; i < S; ++i) {
            int64_t cin = i == 0 ? c0 : cfg.channels(i - 1), cout = cfg.channels(i);
            if (i > 0) {
                downs_.push_back(Conv2d<T>(params, "down" + std::to_string(i - 1), cin, cin, 3,
                                           rng, 2));
                sig_.push_back("down" + std::to_string(i - 1));
            }
            enc_.emplace_back(params, "enc" + std::to_string(i), cin, cout, emb_dim_, rng,
                              cfg.gn_groups);
            sig_.push_back("enc" + std::to_string(i) + ".res(" + std::to_string(cin) + "->" +
                           std::to_string(cout) + ")");
            if (cfg.ffa_on) {
                ffa_.emplace_back(params, "enc" + std::to_string(i) + ".ffa", cout, cfg.vec_dim,
                                  rng, cfg.gn_groups);
                sig_.push_back("enc" + std::to_string(i) + ".ffa");
            }
        }
        for (int64_t i = S - 1; i >= 0; --i) {
            int64_t cout = cfg.channels(i);
            int64_t cin = i == S - 1 ? cout : cfg.channels(i + 1) + cout;  // skip concat
            if (i < S - 1) sig_.push_back("up" + std::to_string(i));
            dec_.emplace_back(params, "dec" + std::to_string(i), cin, cout, emb_dim_, rng,
                              cfg.gn_groups);
            sig_.push_back("dec" + std::to_string(i) + ".res(" + std::to_string(cin) + "->" +
                           std::to_string(cout) + ")");
            if (cfg.hqfe_on) {
                ftca_.emplace_back(params, "dec" + std::to_string(i) + ".ftca", cout, rng);
                swtca_.emplace_back(params, "dec" + std::to_string(i) + ".swtca", cout, B + 3, i,
                                    rng);
                sig_.push_back("dec" + std::to_string(i) + ".ftca");
                sig_.push_back("dec" + std::to_string(i) + ".swtca");
            }
        }
        head_ = Conv2d<T>(params, "head", c0, 2 * B, 3, rng);
        // near-zero head: predictions start at the scale of the residual
        // target and theta at softplus(~0), so the uncertainty can calibrate
        // within a short run instead of descending from trunk magnitude
        for (auto& w : head_.W.mutable_data()) w *= T(0.01);
        sig_.push_back("head");
    }

    // Per-scene conditioning that does not depend on x_t or t; training and
    // sampling loops precompute it once instead of per forward pass.
    struct Cond {
        Tensor<T> prior_cond;  // (N, 2B, H, W), gradient-free
        Tensor<T> s_cond;      // (N, B+3, H, W)
    };

    Cond make_cond(const Tensor<T>& pan, const Tensor<T>& lrms_up,
                   const PriorNetwork<T>& prior) const {
        Cond c;
        if (cfg.ffa_on) c.prior_cond = VectorExtractor<T>::prior_cond(pan, lrms_up, prior);
        if (cfg.hqfe_on) c.s_cond = build_s_cond_batch(pan, lrms_up, cfg.conditioning);
        return c;
    }

    TeacherOutput<T> forward(const Tensor<T>& x_t, const Tensor<T>& pan, const Tensor<T>& lrms_up,
                             const std::vector<int64_t>& t, const PriorNetwork<T>& prior,
                             const Cond* cached = nullptr) const {
        detail::check_model_inputs(x_t, pan, lrms_up, t.size(), cfg.bands);
        auto emb = timestep_embedding<T>(t, emb_dim_);
        Tensor<T> v, s_cond;
        if (cfg.ffa_on)
            v = cached && cached->prior_cond.defined()
                    ? extractor_.from_cond(cached->prior_cond)
                    : extractor_(pan, lrms_up, prior);
        if (cfg.hqfe_on)
            s_cond = cached && cached->s_cond.defined()
                         ? cached->s_cond
                         : build_s_cond_batch(pan, lrms_up, cfg.conditioning);

        TeacherOutput<T> out;
        int64_t S = cfg.stages;
        auto x = stem_(concat<T>({x_t, pan, lrms_up}, 1));
        std::vector<Tensor<T>> skips;
        for (int64_t i = 0; i < S; ++i) {
            if (i > 0) x = downs_[static_cast<size_t>(i - 1)](x);
            x = enc_[static_cast<size_t>(i)](x, emb);
            if (cfg.ffa_on) x = ffa_[static_cast<size_t>(i)](x, v);
            skips.push_back(x);
            out.features.push_back(x);
        }
        for (int64_t i = S - 1; i >= 0; --i) {
            size_t di = static_cast<size_t>(S - 1 - i);  // construction order
            if (i < S - 1)
                x = concat<T>({upsample_nearest2x(x), skips[static_cast<size_t>(i)]}, 1);
            x = dec_[di](x, emb);
            if (cfg.hqfe_on) {
                x = ftca_[di](x);
                x = swtca_[di](x, s_cond);
            }
            out.features.push_back(x);
        }
        auto h = head_(x);
        detail::check_finite_output(h, "fsa_t_forward");
        out.x0_hat = slice(h, 1, 0, cfg.bands);
        out.theta_hat = add_scalar(softplus(slice(h, 1, cfg.bands, cfg.bands)), T(1e-3));
        return out;
    }

    const std::vector<std::string>& layer_signature() const { return sig_; }
    int64_t param_count() const { return params.count(); }
    int64_t emb_dim() const { return emb_dim_; }

private:
    int64_t emb_dim_ = 0;
    Conv2d<T> stem_, head_;
    std::vector<Conv2d<T>> downs_;
    std::vector<ResBlock<T>> enc_, dec_;
    std::vector<FFABlock<T>> ffa_;
    std::vector<FTCABlock<T>> ftca_;
    std::vector<SWTCABlock<T>> swtca_;
    VectorExtractor<T> extractor_;
    std::vector<std::string> sig_;
};

// Student: identical stage topology, ResBlocks only, no uncertainty head.
template <class T>
class FSAStudent {
public:
    ModelConfig cfg;
    ParamRegistry<T> params;

    FSAStudent(const ModelConfig& cfg_, uint64_t seed) : cfg(cfg_) {
        cfg.validate();
        Rng rng(derive_seed(seed, "fsa-s-init"));
        int64_t B = cfg.bands, c0 = cfg.channels(0), S = cfg.stages;
        emb_dim_ = 4 * cfg.base_channels;
        if (emb_dim_ % 2 != 0) ++emb_dim_;

        stem_ = Conv2d<T>(params, "stem", 2 * B + 1, c0, 3, rng);
        sig_.push_back("stem(" + std::to_string(2 * B + 1) + "->" + std::to_string(c0) + ")");
        for (int64_t i = 0; i < S; ++i) {
            int64_t cin = i == 0 ? c0 : cfg.channels(i - 1), cout = cfg.channels(i);
            if (i > 0) {
                downs_.push_back(Conv2d<T>(params, "down" + std::to_string(i - 1), cin, cin, 3,
                                           rng, 2));
                sig_.push_back("down" + std::to_string(i - 1));
            }
            enc_.emplace_back(params, "enc" + std::to_string(i), cin, cout, emb_dim_, rng,
                              cfg.gn_groups);
            sig_.push_back("enc" + std::to_string(i) + ".res(" + std::to_string(cin) + "->" +
                           std::to_string(cout) + ")");
        }
        for (int64_t i = S - 1; i >= 0; --i) {
            int64_t cout = cfg.channels(i);
            int64_t cin = i == S - 1 ? cout : cfg.channels(i + 1) + cout;
            if (i < S - 1) sig_.push_back("up" + std::to_string(i));
            dec_.emplace_back(params, "dec" + std::to_string(i), cin, cout, emb_dim_, rng,
                              cfg.gn_groups);
            sig_.push_back("dec" + std::to_string(i) + ".res(" + std::to_string(cin) + "->" +
                           std::to_string(cout) + ")");
        }
        head_ = Conv2d<T>(params, "head", c0, B, 3, rng);
        for (auto& w : head_.W.mutable_data()) w *= T(0.01);  // near-zero head, as in FSA-T
        sig_.push_back("head");
    }

    std::pair<Tensor<T>, std::vector<Tensor<T>>> forward(const Tensor<T>& x_t,
                                                         const Tensor<T>& pan,
                                                         const Tensor<T>& lrms_up,
                                                         const std::vector<int64_t>& t) const {
        detail::check_model_inputs(x_t, pan, lrms_up, t.size(), cfg.bands);
        auto emb = timestep_embedding<T>(t, emb_dim_);
        int64_t S = cfg.stages;
        std::vector<Tensor<T>> feats, skips;
        auto x = stem_(concat<T>({x_t, pan, lrms_up}, 1));
        for (int64_t i = 0; i < S; ++i) {
            if (i > 0) x = downs_[static_cast<size_t>(i - 1)](x);
            x = enc_[static_cast<size_t>(i)](x, emb);
            skips.push_back(x);
            feats.push_back(x);
        }
        for (int64_t i = S - 1; i >= 0; --i) {
            size_t di = static_cast<size_t>(S - 1 - i);
            if (i < S - 1)
                x = concat<T>({upsample_nearest2x(x), skips[static_cast<size_t>(i)]}, 1);
            x = dec_[di](x, emb);
            feats.push_back(x);
        }
        auto h = head_(x);
        detail::check_finite_output(h, "fsa_s_forward");
        return {h, feats};
    }

    const std::vector<std::string>& layer_signature() const { return sig_; }
    int64_t param_count() const { return params.count(); }

private:
    int64_t emb_dim_ = 0;
    Conv2d<T> stem_, head_;
    std::vector<Conv2d<T>> downs_;
    std::vector<ResBlock<T>> enc_, dec_;
    std::vector<std::string> sig_;
};

// Distillation precondition: the feature-alignment loss needs teacher and
// student taps to pair up, i.e. identical stage geometry.
inline void check_tap_compat(const ModelConfig& teacher, const ModelConfig& student) {
    if (teacher.bands != student.bands || teacher.base_channels != student.base_channels ||
        teacher.stages != student.stages || teacher.multipliers != student.multipliers)
        throw contract_error("teacher/student stage geometry differs; feature taps cannot align");
}

}  // namespace pansharp
