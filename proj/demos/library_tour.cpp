// Library-level walkthrough: a synthetic scene, the wavelet conditioning
// stack, an oracle DDIM sanity check, a short teacher run, and the metric
// suite — everything the CLI composes, called directly.
#include <cstdio>
#include <pansharp/training.hpp>

using namespace pansharp;
using Tf = Tensor<float>;

int main() {
    // one reduced-resolution scene: pan (1,H,W), lrms_up / hrms (B,H,W)
    auto scene = synth_scene<float>(/*seed=*/3, /*bands=*/4, 32, 32);
    std::printf("scene: pan %lldx%lld, %lld bands\n", (long long)scene.pan.dim(1),
                (long long)scene.pan.dim(2), (long long)scene.hrms.dim(0));

    // the SWT keeps full resolution in every subband; its low-pass of the
    // multispectral input plus the pan detail bands form the S-Cond stack
    auto b = swt2(scene.pan);
    std::printf("swt subbands: %lldx%lld (undecimated)\n", (long long)b.L.dim(-2),
                (long long)b.L.dim(-1));

    // DDIM with an oracle denoiser reproduces the target exactly
    auto sched = make_schedule(500, 1e-4, 0.02, 25);
    auto lu = reshape(scene.lrms_up, {1, 4, 32, 32});
    auto hr = reshape(scene.hrms, {1, 4, 32, 32});
    auto x0 = mul_scalar(hr - lu, 2.0f);
    auto oracle = [&](const Tf&, const Tf&, const Tf&, int64_t) { return x0; };
    auto exact = sharpen_scene(oracle, scene, sched, 1);
    std::printf("oracle sampler psnr: %.1f dB (cap)\n",
                reference_metrics(exact, scene.hrms).psnr);

    // short real training run: prior, then teacher, then one fused scene
    TrainConfig cfg;
    cfg.model.bands = 4;
    cfg.model.base_channels = 8;
    cfg.model.stages = 2;
    cfg.model.multipliers = {1, 2};
    cfg.model.vec_dim = 16;
    cfg.height = cfg.width = 32;
    cfg.train_scenes = 8;
    cfg.val_scenes = 2;
    cfg.batch = 4;
    cfg.iterations = 200;
    TrainConfig pcfg = cfg;
    pcfg.iterations = 100;
    pcfg.lr = 1e-3;
    auto prior = train_prior<float>(pcfg);
    auto teacher = train_teacher(cfg, prior);

    auto data = make_dataset<float>(cfg);
    auto fused = sharpen_scene(teacher_denoiser(teacher, prior), data.val[0], sched, 9);
    auto m = reference_metrics(fused, data.val[0].hrms);
    std::printf("teacher after %lld iters: psnr %.2f dB, ssim %.3f, sam %.2f deg\n",
                (long long)cfg.iterations, m.psnr, m.ssim, sam(fused, data.val[0].hrms));
    return 0;
}
