#pragma once

#include <chrono>
#include <ostream>

#include "data.hpp"
#include "diffusion.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "raster_io.hpp"

namespace pansharp {

enum class AblationMode { Teacher, StudentL1, StudentKD, StudentUKnow };

inline const char* ablation_name(AblationMode m) {
    switch (m) {
        case AblationMode::Teacher: return "teacher";
        case AblationMode::StudentL1: return "student_L1";
        case AblationMode::StudentKD: return "student_KD";
        default: return "student_UKnow";
    }
}

struct TrainConfig {
    int64_t iterations = 2000;
    int64_t batch = 8;
    double lr = 1e-4;
    double lr_decay = 0.5;
    int64_t lr_decay_every = 10000;
    double beta1 = 0.9, beta2 = 0.999;
    double weight_decay = 1e-4;
    uint64_t seed = 0;
    int64_t train_scenes = 64, val_scenes = 16;
    int64_t height = 64, width = 64;
    int64_t val_every = 250;
    int64_t timesteps = 500, ddim_count = 25;
    LossWeights loss;
    ModelConfig model;
    AblationMode mode = AblationMode::Teacher;

    void validate() const {
        if (iterations < 1 || batch < 1 || train_scenes < 1 || val_scenes < 1)
            throw config_error("train config: counts must be positive");
        if (lr <= 0 || lr_decay <= 0 || lr_decay_every < 1)
            throw config_error("train config: invalid learning-rate schedule");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || weight_decay < 0)
            throw config_error("train config: invalid optimizer moments/decay");
        if (height % 4 != 0 || width % 4 != 0)
            throw config_error("train config: scene dims must be divisible by 4");
        loss.validate();
        model.validate();
    }

    // iterations counted from 0; after 20000 steps at the paper schedule the
    // rate has halved twice
    double lr_at(int64_t iter) const {
        return lr * std::pow(lr_decay, double(iter / lr_decay_every));
    }

    NoiseSchedule schedule() const { return make_schedule(timesteps, 1e-4, 0.02, ddim_count); }
};

// Decoupled-weight-decay adaptive moments. Moments are held in double for
// every parameter dtype so checkpoints and resume are dtype-independent.
class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;

    template <class T>
    void step(ParamRegistry<T>& reg, double lr) {
        const auto& entries = reg.entries();
        if (m_.empty()) {
            for (const auto& e : entries) {
                m_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
                v_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
            }
        }
        if (m_.size() != entries.size())
            throw contract_error("optimizer state does not match the registry");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1, double(t_));
        double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (size_t i = 0; i < entries.size(); ++i) {
            auto tensor = entries[i].tensor;
            auto& p = tensor.mutable_data();
            bool has_g = tensor.has_grad();
            const std::vector<T>* g = has_g ? &tensor.grad_data() : nullptr;
            for (size_t j = 0; j < p.size(); ++j) {
                double gj = has_g ? double((*g)[j]) : 0.0;  // untouched params coast
                m_[i][j] = beta1 * m_[i][j] + (1 - beta1) * gj;
                v_[i][j] = beta2 * v_[i][j] + (1 - beta2) * gj * gj;
                double upd = (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps);
                p[j] = static_cast<T>(double(p[j]) - lr * (upd + weight_decay * double(p[j])));
            }
        }
    }

    int64_t steps() const { return t_; }
    std::vector<std::vector<double>>& moments1() { return m_; }
    std::vector<std::vector<double>>& moments2() { return v_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline AdamW make_adamw(const TrainConfig& cfg) {
    AdamW a;
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a.weight_decay = cfg.weight_decay;
    return a;
}

// -------------------------------------------------------------- checkpoints

namespace detail {

inline void push_u64(std::vector<double>& v, uint64_t x) {
    v.push_back(double(uint32_t(x >> 32)));
    v.push_back(double(uint32_t(x)));
}

inline uint64_t pop_u64(const std::vector<double>& v, size_t at) {
    return (uint64_t(v[at]) << 32) | uint64_t(v[at + 1]);
}

}  // namespace detail

// Model + optimizer + loop RNG state; enough for bit-exact resume because the
// scene set is regenerated from the config seed.
template <class T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& reg, const AdamW* opt,
                     int64_t iteration, const Rng& rng) {
    RasterMap m;
    std::vector<double> meta;
    meta.push_back(1.0);  // format version
    meta.push_back(double(iteration));
    meta.push_back(double(opt ? const_cast<AdamW*>(opt)->steps() : 0));
    detail::push_u64(meta, rng.seed());
    detail::push_u64(meta, rng.counter());
    Raster mr;
    mr.dtype = 2;
    mr.dims = {uint32_t(meta.size())};
    mr.f64 = meta;
    m.emplace_back("__meta", std::move(mr));
    for (const auto& e : reg.entries()) m.emplace_back(e.name, Raster::from(e.tensor));
    if (opt) {
        auto* mut = const_cast<AdamW*>(opt);
        for (size_t i = 0; i < reg.entries().size(); ++i) {
            const auto& name = reg.entries()[i].name;
            for (auto [tag, vec] : {std::pair{"__m.", &mut->moments1()[i]},
                                    std::pair{"__v.", &mut->moments2()[i]}}) {
                Raster r;
                r.dtype = 2;
                r.dims = {uint32_t(vec->size())};
                r.f64 = *vec;
                m.emplace_back(tag + name, std::move(r));
            }
        }
    }
    write_ukrs(path, m);
}

template <class T>
void load_checkpoint(const std::string& path, ParamRegistry<T>& reg, AdamW* opt,
                     int64_t& iteration, Rng& rng) {
    auto m = read_ukrs(path);
    auto find = [&](const std::string& name) -> const Raster* {
        for (const auto& [n, r] : m)
            if (n == name) return &r;
        return nullptr;
    };
    const Raster* meta = find("__meta");
    if (!meta || meta->f64.size() < 7 || meta->f64[0] != 1.0)
        throw format_error("checkpoint '" + path + "': missing or unsupported __meta");
    iteration = int64_t(meta->f64[1]);
    rng = Rng(detail::pop_u64(meta->f64, 3), detail::pop_u64(meta->f64, 5));
    for (auto& e : reg.entries()) {
        const Raster* r = find(e.name);
        if (!r) throw format_error("checkpoint '" + path + "': missing parameter '" + e.name + "'");
        if (r->numel() != e.tensor.numel())
            throw format_error("checkpoint '" + path + "': parameter '" + e.name +
                               "' has wrong size");
        auto& p = const_cast<Tensor<T>&>(e.tensor).mutable_data();
        if (r->dtype == 1)
            for (size_t j = 0; j < p.size(); ++j) p[j] = static_cast<T>(r->f32[j]);
        else
            for (size_t j = 0; j < p.size(); ++j) p[j] = static_cast<T>(r->f64[j]);
    }
    if (opt) {
        opt->set_steps(int64_t(meta->f64[2]));
        opt->moments1().clear();
        opt->moments2().clear();
        for (const auto& e : reg.entries()) {
            for (auto [tag, dst] : {std::pair{"__m.", &opt->moments1()},
                                    std::pair{"__v.", &opt->moments2()}}) {
                const Raster* r = find(tag + e.name);
                if (!r || r->numel() != e.tensor.numel())
                    throw format_error("checkpoint '" + path + "': missing optimizer state for '" +
                                       e.name + "'");
                dst->push_back(r->f64);
            }
        }
    }
}

// -------------------------------------------------------------- data plumbing

template <class T>
struct Dataset {
    std::vector<Scene<T>> train, val;
};

template <class T>
Dataset<T> make_dataset(const TrainConfig& cfg) {
    Dataset<T> d;
    for (int64_t i = 0; i < cfg.train_scenes; ++i)
        d.train.push_back(synth_scene<T>(derive_seed(cfg.seed, "train-scenes") + uint64_t(i),
                                         cfg.model.bands, cfg.height, cfg.width));
    for (int64_t i = 0; i < cfg.val_scenes; ++i)
        d.val.push_back(synth_scene<T>(derive_seed(cfg.seed, "val-scenes") + uint64_t(i),
                                       cfg.model.bands, cfg.height, cfg.width));
    return d;
}

template <class T>
struct SceneBatch {
    Tensor<T> pan, lrms_up, x0;  // x0 is the model-domain residual, 2*(hrms - lrms_up)
};

template <class T>
SceneBatch<T> make_batch(const std::vector<Scene<T>>& scenes, const std::vector<size_t>& idx) {
    int64_t N = static_cast<int64_t>(idx.size());
    const auto& first = scenes[idx[0]];
    int64_t B = first.hrms.dim(0), H = first.hrms.dim(1), W = first.hrms.dim(2);
    std::vector<T> pan(size_t(N * H * W)), lu(size_t(N * B * H * W)), x0(size_t(N * B * H * W));
    for (int64_t n = 0; n < N; ++n) {
        const auto& s = scenes[idx[size_t(n)]];
        std::copy(s.pan.data().begin(), s.pan.data().end(), pan.begin() + n * H * W);
        for (int64_t i = 0; i < B * H * W; ++i) {
            lu[size_t(n * B * H * W + i)] = s.lrms_up.data()[size_t(i)];
            x0[size_t(n * B * H * W + i)] =
                T(2) * (s.hrms.data()[size_t(i)] - s.lrms_up.data()[size_t(i)]);
        }
    }
    return {Tensor<T>::from({N, 1, H, W}, std::move(pan)),
            Tensor<T>::from({N, B, H, W}, std::move(lu)),
            Tensor<T>::from({N, B, H, W}, std::move(x0))};
}

// Per-sample forward diffusion at individual timesteps (the batched q_sample
// takes one shared t).
template <class T>
Tensor<T> q_sample_batch(const Tensor<T>& x0, const std::vector<int64_t>& t, const Tensor<T>& eps,
                         const NoiseSchedule& sched) {
    int64_t N = x0.dim(0), per = x0.numel() / N;
    std::vector<T> out(size_t(x0.numel()));
    for (int64_t n = 0; n < N; ++n) {
        double a = sched.abar(t[size_t(n)]);
        double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
        for (int64_t i = 0; i < per; ++i)
            out[size_t(n * per + i)] = static_cast<T>(sa * double(x0.data()[size_t(n * per + i)]) +
                                                      sb * double(eps.data()[size_t(n * per + i)]));
    }
    return Tensor<T>::from(x0.shape(), std::move(out));
}

// Full DDIM sharpening of one scene. The network works on 2x residuals, so the
// sampler's output is folded back with the inverse scaling and clamped to the
// radiometric range.
template <class T, class Denoiser>
Tensor<T> sharpen_scene(Denoiser&& denoiser, const Scene<T>& scene, const NoiseSchedule& sched,
                        uint64_t seed) {
    int64_t B = scene.lrms_up.dim(0), H = scene.lrms_up.dim(1), W = scene.lrms_up.dim(2);
    auto pan = reshape(scene.pan, {1, 1, H, W});
    auto lu = reshape(scene.lrms_up, {1, B, H, W});
    auto out = sample<T>(denoiser, pan, lu, sched, seed);
    std::vector<T> fused(size_t(B * H * W));
    for (int64_t i = 0; i < B * H * W; ++i) {
        double residual = 0.5 * double(out.data()[size_t(i)] - lu.data()[size_t(i)]);
        double v = double(scene.lrms_up.data()[size_t(i)]) + residual;
        fused[size_t(i)] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
    }
    return Tensor<T>::from({B, H, W}, std::move(fused));
}

struct ReducedEval {
    double psnr = 0, ssim = 0, scc = 0, sam_deg = 0, ergas = 0, q2n_v = 0;
};

template <class T, class Denoiser>
ReducedEval evaluate_reduced(Denoiser&& denoiser, const std::vector<Scene<T>>& scenes,
                             const NoiseSchedule& sched, uint64_t seed) {
    if (scenes.empty()) throw contract_error("evaluate_reduced: no scenes");
    ReducedEval acc;
    double n = double(scenes.size());
    for (size_t i = 0; i < scenes.size(); ++i) {
        auto fused = sharpen_scene(denoiser, scenes[i], sched,
                                   derive_seed(seed, "eval-sample") + uint64_t(i));
        auto rm = reference_metrics(fused, scenes[i].hrms);
        acc.psnr += rm.psnr / n;
        acc.ssim += rm.ssim / n;
        acc.scc += rm.scc / n;
        acc.sam_deg += sam(fused, scenes[i].hrms) / n;
        acc.ergas += ergas(fused, scenes[i].hrms, 0.25) / n;
        int64_t win = std::min<int64_t>(16, std::min(fused.dim(1), fused.dim(2)));
        acc.q2n_v += q2n(fused, scenes[i].hrms, win) / n;
    }
    return acc;
}

namespace detail {

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
void check_loss_finite(const Tensor<T>& loss, int64_t iter, int64_t t, uint64_t batch_seed) {
    if (!std::isfinite(double(loss.item())))
        throw training_error("loss diverged at iteration " + std::to_string(iter) +
                             " (t=" + std::to_string(t) +
                             ", batch seed=" + std::to_string(batch_seed) + ")");
}

}  // namespace detail

// Per-scene teacher conditioning, precomputed once so the training loop only
// gathers the sampled rows each iteration.
template <class T>
std::vector<typename FSATeacher<T>::Cond> cache_conds(const FSATeacher<T>& teacher,
                                                      const std::vector<Scene<T>>& scenes,
                                                      const PriorNetwork<T>& prior) {
    std::vector<typename FSATeacher<T>::Cond> out;
    if (!teacher.cfg.ffa_on && !teacher.cfg.hqfe_on) return out;
    for (const auto& s : scenes) {
        int64_t B = s.lrms_up.dim(0), H = s.lrms_up.dim(1), W = s.lrms_up.dim(2);
        out.push_back(teacher.make_cond(reshape(s.pan, {1, 1, H, W}),
                                        reshape(s.lrms_up, {1, B, H, W}), prior));
    }
    return out;
}

template <class T>
typename FSATeacher<T>::Cond gather_cond(const std::vector<typename FSATeacher<T>::Cond>& cache,
                                         const std::vector<size_t>& idx) {
    typename FSATeacher<T>::Cond c;
    if (cache.empty()) return c;
    auto gather = [&](auto pick) {
        Tensor<T> out;
        if (!pick(cache[idx[0]]).defined()) return out;
        std::vector<Tensor<T>> parts;
        for (size_t i : idx) parts.push_back(pick(cache[i]));
        return concat<T>(parts, 0);
    };
    c.prior_cond = gather([](const typename FSATeacher<T>::Cond& e) { return e.prior_cond; });
    c.s_cond = gather([](const typename FSATeacher<T>::Cond& e) { return e.s_cond; });
    return c;
}

// Teacher-style denoiser adapter for the DDIM sampler. The scene conditioning
// is reused across the sampler's steps; the cached scene tensor is kept alive
// so node identity is a sound cache key.
template <class T>
auto teacher_denoiser(const FSATeacher<T>& teacher, const PriorNetwork<T>& prior) {
    struct SceneCache {
        Tensor<T> pan;
        typename FSATeacher<T>::Cond cond;
    };
    auto cache = std::make_shared<SceneCache>();
    return [&teacher, &prior, cache](const Tensor<T>& x, const Tensor<T>& pan, const Tensor<T>& lu,
                                     int64_t t) {
        if (!cache->pan.defined() || cache->pan.node() != pan.node()) {
            cache->pan = pan;
            cache->cond = teacher.make_cond(pan, lu, prior);
        }
        return teacher
            .forward(x, pan, lu, std::vector<int64_t>(size_t(x.dim(0)), t), prior, &cache->cond)
            .x0_hat;
    };
}

template <class T>
auto student_denoiser(const FSAStudent<T>& student) {
    return [&student](const Tensor<T>& x, const Tensor<T>& pan, const Tensor<T>& lu, int64_t t) {
        return student.forward(x, pan, lu, std::vector<int64_t>(size_t(x.dim(0)), t)).first;
    };
}

// Extra knobs shared by all training loops; `stop_after` ends the loop early
// with a checkpoint so a later call can resume bit-exactly.
struct TrainOptions {
    std::string checkpoint_out;  // written at the end (and at stop_after)
    std::string resume_from;     // checkpoint to continue from
    int64_t stop_after = -1;     // iteration count to pause at (-1 = run to cfg.iterations)
};

// -------------------------------------------------------------- scene files

template <class T>
RasterMap scene_to_rasters(const Scene<T>& s) {
    RasterMap m;
    m.emplace_back("pan", Raster::from(s.pan));
    m.emplace_back("lrms", Raster::from(s.lrms));
    m.emplace_back("lrms_up", Raster::from(s.lrms_up));
    m.emplace_back("hrms", Raster::from(s.hrms));
    m.emplace_back("edge_mask", Raster::from(s.edge_mask));
    return m;
}

template <class T>
Scene<T> scene_from_rasters(const RasterMap& m, const std::string& origin) {
    auto get = [&](const std::string& name) {
        for (const auto& [n, r] : m)
            if (n == name) return r.template to<T>();
        throw format_error("scene file '" + origin + "': missing entry '" + name + "'");
    };
    Scene<T> s;
    s.pan = get("pan");
    s.lrms = get("lrms");
    s.lrms_up = get("lrms_up");
    s.hrms = get("hrms");
    s.edge_mask = get("edge_mask");
    return s;
}

// -------------------------------------------------------------- prior

template <class T>
PriorNetwork<T> train_prior(const TrainConfig& cfg, std::ostream* log = nullptr,
                            const TrainOptions& opt = {}) {
    cfg.validate();
    auto data = make_dataset<T>(cfg);
    PriorNetwork<T> prior(cfg.model.bands, cfg.model.base_channels,
                          derive_seed(cfg.seed, "prior"));
    AdamW adam = make_adamw(cfg);
    Rng rng(derive_seed(cfg.seed, "prior-train"));
    int64_t start = 0;
    if (!opt.resume_from.empty()) load_checkpoint(opt.resume_from, prior.params, &adam, start, rng);
    int64_t end = opt.stop_after >= 0 ? std::min(opt.stop_after, cfg.iterations) : cfg.iterations;
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t iter = start; iter < end; ++iter) {
        uint64_t batch_seed = rng.counter();
        std::vector<size_t> idx(size_t(cfg.batch));
        for (auto& i : idx) i = size_t(rng.uniform_int(0, uint64_t(data.train.size() - 1)));
        auto batch = make_batch(data.train, idx);
        // the prior regresses the HRMS itself, not the residual
        auto target = batch.lrms_up + mul_scalar(batch.x0, T(0.5));
        prior.params.zero_grad();
        auto out = prior.forward(batch.pan, batch.lrms_up);
        auto loss = u_diff_loss(out.i_hr, target, out.theta);
        detail::check_loss_finite(loss, iter, 0, batch_seed);
        loss.backward();
        adam.step(prior.params, cfg.lr_at(iter));
        if (log)
            (*log) << "iter=" << iter << " loss=" << loss.item() << " lr=" << cfg.lr_at(iter)
                   << " sec=" << detail::elapsed_s(t0) << "\n";
    }
    prior.trained = end >= cfg.iterations;
    if (!opt.checkpoint_out.empty())
        save_checkpoint(opt.checkpoint_out, prior.params, &adam, end, rng);
    return prior;
}

// -------------------------------------------------------------- teacher

template <class T>
FSATeacher<T> train_teacher(const TrainConfig& cfg, const PriorNetwork<T>& prior,
                            std::ostream* log = nullptr, const TrainOptions& opt = {}) {
    cfg.validate();
    if (cfg.model.ffa_on && !prior.trained)
        throw contract_error("train_teacher: FFA conditioning needs a trained prior");
    auto data = make_dataset<T>(cfg);
    auto sched = cfg.schedule();
    FSATeacher<T> teacher(cfg.model, derive_seed(cfg.seed, "teacher"));
    AdamW adam = make_adamw(cfg);
    Rng rng(derive_seed(cfg.seed, "teacher-train"));
    int64_t start = 0;
    if (!opt.resume_from.empty())
        load_checkpoint(opt.resume_from, teacher.params, &adam, start, rng);
    int64_t end = opt.stop_after >= 0 ? std::min(opt.stop_after, cfg.iterations) : cfg.iterations;
    auto conds = cache_conds(teacher, data.train, prior);
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t iter = start; iter < end; ++iter) {
        uint64_t batch_seed = rng.counter();
        std::vector<size_t> idx(size_t(cfg.batch));
        for (auto& i : idx) i = size_t(rng.uniform_int(0, uint64_t(data.train.size() - 1)));
        std::vector<int64_t> t(size_t(cfg.batch));
        for (auto& v : t) v = int64_t(rng.uniform_int(1, uint64_t(sched.T)));
        auto batch = make_batch(data.train, idx);
        auto cond = gather_cond<T>(conds, idx);
        auto eps = Tensor<T>::randn(batch.x0.shape(), rng);
        auto x_t = q_sample_batch(batch.x0, t, eps, sched);

        teacher.params.zero_grad();
        auto out = teacher.forward(x_t, batch.pan, batch.lrms_up, t, prior, &cond);
        auto loss = u_diff_loss(out.x0_hat, batch.x0, out.theta_hat);
        detail::check_loss_finite(loss, iter, t[0], batch_seed);
        loss.backward();
        adam.step(teacher.params, cfg.lr_at(iter));
        if (log) {
            (*log) << "iter=" << iter << " loss=" << loss.item() << " lr=" << cfg.lr_at(iter)
                   << " sec=" << detail::elapsed_s(t0) << "\n";
            if ((iter + 1) % cfg.val_every == 0) {
                auto ev = evaluate_reduced(teacher_denoiser(teacher, prior), data.val, sched,
                                           derive_seed(cfg.seed, "val") + uint64_t(iter));
                (*log) << "iter=" << iter << " val_psnr=" << ev.psnr << " val_sam=" << ev.sam_deg
                       << " val_ergas=" << ev.ergas << "\n";
            }
        }
    }
    if (!opt.checkpoint_out.empty())
        save_checkpoint(opt.checkpoint_out, teacher.params, &adam, end, rng);
    return teacher;
}

// -------------------------------------------------------------- student

template <class T>
FSAStudent<T> distill_student(const TrainConfig& cfg, const FSATeacher<T>& teacher,
                              const PriorNetwork<T>& prior, std::ostream* log = nullptr,
                              const TrainOptions& opt = {}) {
    cfg.validate();
    if (cfg.mode == AblationMode::Teacher)
        throw config_error("distill_student: ablation selector must be a student mode");
    check_tap_compat(teacher.cfg, cfg.model);
    auto data = make_dataset<T>(cfg);
    auto sched = cfg.schedule();
    FSAStudent<T> student(cfg.model, derive_seed(cfg.seed, "student"));
    AdamW adam = make_adamw(cfg);
    Rng rng(derive_seed(cfg.seed, "student-train"));
    int64_t start = 0;
    if (!opt.resume_from.empty())
        load_checkpoint(opt.resume_from, student.params, &adam, start, rng);
    int64_t end = opt.stop_after >= 0 ? std::min(opt.stop_after, cfg.iterations) : cfg.iterations;
    std::vector<typename FSATeacher<T>::Cond> conds;
    if (cfg.mode != AblationMode::StudentL1) conds = cache_conds(teacher, data.train, prior);
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t iter = start; iter < end; ++iter) {
        uint64_t batch_seed = rng.counter();
        std::vector<size_t> idx(size_t(cfg.batch));
        for (auto& i : idx) i = size_t(rng.uniform_int(0, uint64_t(data.train.size() - 1)));
        std::vector<int64_t> t(size_t(cfg.batch));
        for (auto& v : t) v = int64_t(rng.uniform_int(1, uint64_t(sched.T)));
        auto batch = make_batch(data.train, idx);
        auto eps = Tensor<T>::randn(batch.x0.shape(), rng);
        auto x_t = q_sample_batch(batch.x0, t, eps, sched);

        student.params.zero_grad();
        auto [x0_tilde, s_feats] = student.forward(x_t, batch.pan, batch.lrms_up, t);

        Tensor<T> loss;
        UKnowParts<T> p;
        if (cfg.mode == AblationMode::StudentL1) {
            loss = mean(abs(x0_tilde - batch.x0));
        } else {
            // single shared (X_t, t) teacher evaluation, frozen
            TeacherOutput<T> to;
            {
                NoGradGuard ng;
                auto cond = gather_cond<T>(conds, idx);
                to = teacher.forward(x_t, batch.pan, batch.lrms_up, t, prior, &cond);
            }
            auto theta = cfg.mode == AblationMode::StudentKD
                             ? Tensor<T>::zeros(to.theta_hat.shape())
                             : to.theta_hat;
            p = u_know_loss(x0_tilde, batch.x0, to.x0_hat, theta, s_feats, to.features, cfg.loss);
            loss = p.total;
        }
        detail::check_loss_finite(loss, iter, t[0], batch_seed);
        loss.backward();
        adam.step(student.params, cfg.lr_at(iter));
        if (log) {
            (*log) << "iter=" << iter << " loss=" << loss.item();
            if (p.total.defined())
                (*log) << " hard=" << p.hard.item() << " soft=" << p.soft.item()
                       << " feat=" << p.feat.item();
            (*log) << " lr=" << cfg.lr_at(iter) << " sec=" << detail::elapsed_s(t0) << "\n";
            if ((iter + 1) % cfg.val_every == 0) {
                auto ev = evaluate_reduced(student_denoiser(student), data.val, sched,
                                           derive_seed(cfg.seed, "val") + uint64_t(iter));
                (*log) << "iter=" << iter << " val_psnr=" << ev.psnr << " val_sam=" << ev.sam_deg
                       << " val_ergas=" << ev.ergas << "\n";
            }
        }
    }
    if (!opt.checkpoint_out.empty())
        save_checkpoint(opt.checkpoint_out, student.params, &adam, end, rng);
    return student;
}

// -------------------------------------------------------------- ablation

struct AblationRow {
    std::string name;
    MetricStats psnr, ssim, scc, sam_deg, ergas, q2n_v;
};

// The 4 + 3 + 2 grid: FFA/HQFE on-off, the three distillation loss variants,
// and SWT vs DWT conditioning; each cell aggregated over the seed list.
template <class T>
std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base,
                                             const std::vector<uint64_t>& seeds,
                                             std::ostream* log = nullptr) {
    base.validate();
    if (seeds.empty()) throw config_error("run_ablation_matrix: empty seed list");

    struct Cell {
        std::string name;
        TrainConfig cfg;
    };
    std::vector<Cell> cells;
    for (bool ffa : {false, true})
        for (bool hqfe : {false, true}) {
            TrainConfig c = base;
            c.mode = AblationMode::Teacher;
            c.model.ffa_on = ffa;
            c.model.hqfe_on = hqfe;
            cells.push_back({std::string("teacher ffa=") + (ffa ? "1" : "0") +
                                 " hqfe=" + (hqfe ? "1" : "0"),
                             c});
        }
    for (auto mode : {AblationMode::StudentL1, AblationMode::StudentKD,
                      AblationMode::StudentUKnow}) {
        TrainConfig c = base;
        c.mode = mode;
        cells.push_back({ablation_name(mode), c});
    }
    for (auto kind : {WaveletKind::SWT, WaveletKind::DWT}) {
        TrainConfig c = base;
        c.mode = AblationMode::Teacher;
        c.model.conditioning = kind;
        cells.push_back({std::string("teacher cond=") + (kind == WaveletKind::SWT ? "swt" : "dwt"),
                         c});
    }

    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        std::vector<double> psnr, ssim, scc, samv, erg, q2;
        for (uint64_t seed : seeds) {
            TrainConfig c = cell.cfg;
            c.seed = seed;
            auto sched = c.schedule();
            auto data = make_dataset<T>(c);
            ReducedEval ev;
            auto prior = train_prior<T>(c);
            if (c.mode == AblationMode::Teacher) {
                auto teacher = train_teacher(c, prior);
                ev = evaluate_reduced(teacher_denoiser(teacher, prior), data.val, sched,
                                      derive_seed(seed, "ablate-eval"));
            } else {
                TrainConfig tc = c;
                tc.mode = AblationMode::Teacher;
                auto teacher = train_teacher(tc, prior);
                auto student = distill_student(c, teacher, prior);
                ev = evaluate_reduced(student_denoiser(student), data.val, sched,
                                      derive_seed(seed, "ablate-eval"));
            }
            psnr.push_back(ev.psnr);
            ssim.push_back(ev.ssim);
            scc.push_back(ev.scc);
            samv.push_back(ev.sam_deg);
            erg.push_back(ev.ergas);
            q2.push_back(ev.q2n_v);
            if (log)
                (*log) << cell.name << " seed=" << seed << " psnr=" << ev.psnr
                       << " sam=" << ev.sam_deg << "\n";
        }
        rows.push_back({cell.name, aggregate(psnr), aggregate(ssim), aggregate(scc),
                        aggregate(samv), aggregate(erg), aggregate(q2)});
    }
    return rows;
}

}  // namespace pansharp
