// pan-sharpening toolkit entry point: data generation, training, distillation,
// DDIM sharpening, evaluation, ablations, and invariant self-checks.
#include <CLI11.hpp>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <pansharp/config.hpp>
#include <pansharp/gradcheck.hpp>
#include <pansharp/png.hpp>

namespace fs = std::filesystem;
using namespace pansharp;

using Tf = Tensor<float>;

namespace {

// Schema-driven config plumbing shared by every subcommand: defaults, then
// the --config file, then explicit flags.
struct ConfigCli {
    Settings settings;
    std::string config_file;
    std::map<std::string, std::string> values;

    void attach(CLI::App* sub) {
        sub->add_option("--config", config_file, "key = value config file");
        for (const auto& k : config_schema())
            sub->add_option("--" + k.name, values[k.name],
                            k.description + " [default: " + k.get(settings) + "]");
    }

    void finalize(CLI::App* sub) {
        if (!config_file.empty()) load_config_file(settings, config_file);
        for (const auto& k : config_schema()) {
            auto* o = sub->get_option_no_throw("--" + k.name);
            if (o && o->count()) apply_kv(settings, k.name, values.at(k.name));
        }
        settings.train.validate();
    }
};

void write_sidecar(const std::string& ckpt_path, const Settings& s) {
    std::ofstream out(ckpt_path + ".cfg", std::ios::trunc);
    if (!out) throw format_error("cannot write '" + ckpt_path + ".cfg'");
    out << dump_config(s);
}

Settings read_sidecar(const std::string& ckpt_path) {
    Settings s;
    load_config_file(s, ckpt_path + ".cfg");
    return s;
}

PriorNetwork<float> load_prior(const std::string& path) {
    auto s = read_sidecar(path);
    PriorNetwork<float> prior(s.train.model.bands, s.train.model.base_channels,
                              derive_seed(s.train.seed, "prior"));
    int64_t iter = 0;
    Rng rng(0);
    load_checkpoint(path, prior.params, nullptr, iter, rng);
    prior.trained = iter >= s.train.iterations;
    if (!prior.trained)
        throw contract_error("prior checkpoint '" + path + "' is a partial run (iteration " +
                             std::to_string(iter) + " of " + std::to_string(s.train.iterations) +
                             ")");
    return prior;
}

std::ofstream open_log(const std::string& path) {
    std::ofstream log(path, std::ios::trunc);
    if (!log) throw format_error("cannot write log '" + path + "'");
    log.precision(10);
    return log;
}

// first raster matching one of the candidate names; a single-entry file
// matches unconditionally
Tf load_named(const std::string& path, const std::vector<std::string>& candidates) {
    auto m = read_ukrs(path);
    if (m.size() == 1) return m[0].second.to<float>();
    for (const auto& name : candidates)
        for (const auto& [n, r] : m)
            if (n == name) return r.to<float>();
    std::string want;
    for (const auto& c : candidates) want += (want.empty() ? "" : "/") + c;
    throw format_error("'" + path + "' has no entry named " + want);
}

void preview_bands(const std::string& path, const Tf& stack) {
    int64_t B = stack.dim(0);
    preview_png(path, stack, std::min<int64_t>(2, B - 1), std::min<int64_t>(1, B - 1), 0);
}

// ------------------------------------------------------------------ gen-data

int cmd_gen_data(ConfigCli& cc, const std::string& out_dir, int64_t count, bool previews) {
    fs::create_directories(out_dir);
    const auto& t = cc.settings.train;
    for (int64_t i = 0; i < count; ++i) {
        auto scene = synth_scene<float>(derive_seed(t.seed, "gen-data") + uint64_t(i),
                                        t.model.bands, t.height, t.width);
        std::ostringstream name;
        name << "scene_" << std::setw(3) << std::setfill('0') << i;
        auto base = (fs::path(out_dir) / name.str()).string();
        write_ukrs(base + ".ukrs", scene_to_rasters(scene));
        if (previews) preview_bands(base + ".png", scene.hrms);
        std::cout << "wrote " << base << ".ukrs\n";
    }
    return 0;
}

// ------------------------------------------------------------------ training

int cmd_train_prior(ConfigCli& cc, const std::string& out, const std::string& log_path,
                    const std::string& resume, int64_t stop_after) {
    auto log = open_log(log_path.empty() ? out + ".log" : log_path);
    train_prior<float>(cc.settings.train, &log,
                       {.checkpoint_out = out, .resume_from = resume, .stop_after = stop_after});
    write_sidecar(out, cc.settings);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_train_teacher(ConfigCli& cc, const std::string& prior_path, const std::string& out,
                      const std::string& log_path, const std::string& resume,
                      int64_t stop_after) {
    auto prior = load_prior(prior_path);
    if (prior.bands != cc.settings.train.model.bands)
        throw config_error("prior has " + std::to_string(prior.bands) + " bands, config asks " +
                           std::to_string(cc.settings.train.model.bands));
    auto log = open_log(log_path.empty() ? out + ".log" : log_path);
    auto cfg = cc.settings.train;
    cfg.mode = AblationMode::Teacher;
    train_teacher(cfg, prior, &log,
                  {.checkpoint_out = out, .resume_from = resume, .stop_after = stop_after});
    Settings side = cc.settings;
    side.train.mode = AblationMode::Teacher;
    write_sidecar(out, side);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_distill(ConfigCli& cc, const std::string& teacher_path, const std::string& prior_path,
                const std::string& out, const std::string& log_path, const std::string& resume,
                int64_t stop_after) {
    auto prior = load_prior(prior_path);
    auto tside = read_sidecar(teacher_path);
    FSATeacher<float> teacher(tside.train.model, derive_seed(tside.train.seed, "teacher"));
    int64_t iter = 0;
    Rng rng(0);
    load_checkpoint(teacher_path, teacher.params, nullptr, iter, rng);

    auto cfg = cc.settings.train;
    if (cfg.mode == AblationMode::Teacher) cfg.mode = AblationMode::StudentUKnow;
    auto log = open_log(log_path.empty() ? out + ".log" : log_path);
    distill_student(cfg, teacher, prior, &log,
                    {.checkpoint_out = out, .resume_from = resume, .stop_after = stop_after});
    Settings side = cc.settings;
    side.train.mode = cfg.mode;
    write_sidecar(out, side);
    std::cout << "wrote " << out << "\n";
    return 0;
}

// ------------------------------------------------------------------ sharpen

int cmd_sharpen(ConfigCli& cc, const std::string& ckpt, const std::string& prior_path,
                const std::vector<std::string>& inputs, const std::string& out_dir,
                int64_t gen_count) {
    auto side = read_sidecar(ckpt);
    bool is_teacher = side.train.mode == AblationMode::Teacher;
    fs::create_directories(out_dir);

    std::vector<Scene<float>> scenes;
    std::vector<std::string> names;
    for (const auto& path : inputs) {
        scenes.push_back(scene_from_rasters<float>(read_ukrs(path), path));
        names.push_back(fs::path(path).stem().string());
    }
    const auto& t = cc.settings.train;
    for (int64_t i = 0; i < (inputs.empty() ? gen_count : 0); ++i) {
        scenes.push_back(synth_scene<float>(derive_seed(t.seed, "gen-data") + uint64_t(i),
                                            side.train.model.bands, t.height, t.width));
        std::ostringstream name;
        name << "scene_" << std::setw(3) << std::setfill('0') << i;
        names.push_back(name.str());
    }
    if (scenes.empty()) throw config_error("sharpen: no input scenes (--in or --count)");

    auto sched = side.train.schedule();
    PriorNetwork<float> prior;
    FSATeacher<float> teacher(side.train.model, 0);
    FSAStudent<float> student(side.train.model, 0);
    int64_t iter = 0;
    Rng rng(0);
    if (is_teacher) {
        if (prior_path.empty() && side.train.model.ffa_on)
            throw config_error("sharpen: teacher checkpoint needs --prior");
        if (!prior_path.empty()) prior = load_prior(prior_path);
        teacher = FSATeacher<float>(side.train.model, derive_seed(side.train.seed, "teacher"));
        load_checkpoint(ckpt, teacher.params, nullptr, iter, rng);
    } else {
        student = FSAStudent<float>(side.train.model, derive_seed(side.train.seed, "student"));
        load_checkpoint(ckpt, student.params, nullptr, iter, rng);
    }

    for (size_t i = 0; i < scenes.size(); ++i) {
        Tf theta;  // teacher only: uncertainty from the final denoising step
        Tf fused;
        uint64_t sample_seed = derive_seed(t.seed, "sharpen") + uint64_t(i);
        if (is_teacher) {
            auto denoiser = [&](const Tf& x, const Tf& pan, const Tf& lu, int64_t tt) {
                auto o = teacher.forward(x, pan, lu, std::vector<int64_t>(size_t(x.dim(0)), tt),
                                         prior);
                theta = o.theta_hat;
                return o.x0_hat;
            };
            fused = sharpen_scene(denoiser, scenes[i], sched, sample_seed);
        } else {
            fused = sharpen_scene(student_denoiser(student), scenes[i], sched, sample_seed);
        }
        auto base = (fs::path(out_dir) / names[i]).string();
        RasterMap m;
        m.emplace_back("fused", Raster::from(fused));
        if (theta.defined()) {
            auto th = reshape(theta, {theta.dim(1), theta.dim(2), theta.dim(3)});
            m.emplace_back("theta", Raster::from(th));
            preview_png(base + "_uncertainty.png", mean_axis(th, 0, true), 0, 0, 0);
        }
        write_ukrs(base + "_fused.ukrs", m);
        preview_bands(base + "_fused.png", fused);
        std::cout << "wrote " << base << "_fused.ukrs\n";
    }
    return 0;
}

// ------------------------------------------------------------------ evaluate

void write_csv(const std::string& path, const std::string& content) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write '" + path + "'");
    out << content;
}

int cmd_evaluate(const std::string& mode, const std::vector<std::string>& fused_paths,
                 const std::vector<std::string>& ref_paths, const std::string& csv_path) {
    std::ostringstream csv;
    csv.precision(10);
    if (fused_paths.size() != ref_paths.size() || fused_paths.empty())
        throw config_error("evaluate: need equally many --fused and --reference/--scene inputs");
    if (mode == "reduced") {
        csv << "file,psnr,ssim,scc,sam,ergas,q2n\n";
        std::vector<double> col[6];
        for (size_t i = 0; i < fused_paths.size(); ++i) {
            auto fused = load_named(fused_paths[i], {"fused", "hrms"});
            auto ref = load_named(ref_paths[i], {"hrms", "fused"});
            auto rm = reference_metrics(fused, ref);
            double vals[6] = {rm.psnr,
                              rm.ssim,
                              rm.scc,
                              sam(fused, ref),
                              ergas(fused, ref, 0.25),
                              q2n(fused, ref,
                                  std::min<int64_t>(16, std::min(fused.dim(1), fused.dim(2))))};
            csv << fs::path(fused_paths[i]).filename().string();
            for (int c = 0; c < 6; ++c) {
                csv << "," << vals[c];
                col[c].push_back(vals[c]);
            }
            csv << "\n";
        }
        csv << "mean";
        for (int c = 0; c < 6; ++c) csv << "," << aggregate(col[c]).mean;
        csv << "\nstd";
        for (int c = 0; c < 6; ++c) csv << "," << aggregate(col[c]).std;
        csv << "\n";
    } else if (mode == "full") {
        csv << "file,d_lambda,d_s,hqnr\n";
        std::vector<double> col[3];
        for (size_t i = 0; i < fused_paths.size(); ++i) {
            auto fused = load_named(fused_paths[i], {"fused", "hrms"});
            auto scene = read_ukrs(ref_paths[i]);
            auto s = scene_from_rasters<float>(scene, ref_paths[i]);
            auto fm = full_resolution_metrics(fused, s.lrms, s.pan);
            double vals[3] = {fm.d_lambda, fm.d_s, fm.hqnr};
            csv << fs::path(fused_paths[i]).filename().string();
            for (int c = 0; c < 3; ++c) {
                csv << "," << vals[c];
                col[c].push_back(vals[c]);
            }
            csv << "\n";
        }
        csv << "mean";
        for (int c = 0; c < 3; ++c) csv << "," << aggregate(col[c]).mean;
        csv << "\nstd";
        for (int c = 0; c < 3; ++c) csv << "," << aggregate(col[c]).std;
        csv << "\n";
    } else {
        throw config_error("evaluate: --mode must be reduced or full, got '" + mode + "'");
    }
    std::cout << csv.str();
    write_csv(csv_path, csv.str());
    return 0;
}

// ------------------------------------------------------------------ ablate

int cmd_ablate(ConfigCli& cc, const std::string& csv_path) {
    auto rows = run_ablation_matrix<float>(cc.settings.train, cc.settings.ablation_seeds,
                                           &std::cout);
    std::ostringstream csv;
    csv.precision(10);
    csv << "cell,psnr_mean,psnr_std,ssim_mean,ssim_std,scc_mean,scc_std,"
           "sam_mean,sam_std,ergas_mean,ergas_std,q2n_mean,q2n_std\n";
    for (const auto& r : rows) {
        csv << r.name;
        for (const auto* s : {&r.psnr, &r.ssim, &r.scc, &r.sam_deg, &r.ergas, &r.q2n_v})
            csv << "," << s->mean << "," << s->std;
        csv << "\n";
    }
    std::cout << csv.str();
    write_csv(csv_path, csv.str());
    return 0;
}

// ------------------------------------------------------------------ selfcheck

Tensor<double> roll2(const Tensor<double>& x, int64_t dy, int64_t dx) {
    int64_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    int64_t outer = x.numel() / (H * W);
    std::vector<double> out(size_t(x.numel()));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx)
                out[size_t((o * H + (y + dy) % H) * W + (xx + dx) % W)] =
                    x.data()[size_t((o * H + y) * W + xx)];
    return Tensor<double>::from(x.shape(), std::move(out));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

int cmd_selfcheck() {
    using Td = Tensor<double>;
    struct Check {
        std::string name;
        std::function<void()> run;
    };
    auto expect = [](bool ok, const std::string& what) {
        if (!ok) throw numeric_error(what);
    };

    std::vector<Check> checks = {
        {"fft round trip", [&] {
             Rng rng(1);
             auto x = Td::randn({2, 8, 8}, rng);
             auto back = irfft2(rfft2(x));
             expect(max_abs_diff(back.data(), x.data()) <= 1e-10, "irfft2(rfft2) drift");
         }},
        {"swt round trip and shift equivariance", [&] {
             Rng rng(2);
             auto x = Td::randn({1, 8, 8}, rng);
             auto b = swt2(x);
             expect(max_abs_diff(iswt2(b).data(), x.data()) <= 1e-10, "iswt2(swt2) drift");
             auto shifted = swt2(roll2(x, 1, 2));
             expect(max_abs_diff(shifted.L.data(), roll2(b.L, 1, 2).data()) <= 1e-10,
                    "SWT is not shift-equivariant");
         }},
        {"dwt shift-variance witness", [&] {
             std::vector<double> step(8 * 8, 0.0);
             for (int64_t y = 0; y < 8; ++y)
                 for (int64_t xx = 4; xx < 8; ++xx) step[size_t(y * 8 + xx)] = 1.0;
             auto x = Td::from({1, 8, 8}, step);
             auto peak = [](const Td& t) {
                 double m = 0;
                 for (double v : t.data()) m = std::max(m, std::abs(v));
                 return m;
             };
             expect(std::abs(peak(dwt2(x).V) - peak(dwt2(roll2(x, 0, 1)).V)) > 1e-3,
                    "DWT detail band did not react to a one-pixel shift");
         }},
        {"ddim sampler oracle exactness", [&] {
             auto sched = make_schedule(500, 1e-4, 0.02, 25);
             Rng rng(3);
             auto x0 = clamp(Td::randn({1, 2, 8, 8}, rng, 0.3), -0.9, 0.9);
             auto pan = Td::zeros({1, 1, 8, 8});
             auto lu = Td::zeros({1, 2, 8, 8});
             auto oracle = [&](const Td&, const Td&, const Td&, int64_t) { return x0; };
             auto got = sample<double>(oracle, pan, lu, sched, 5);
             expect(max_abs_diff(got.data(), x0.data()) <= 1e-8, "sampler oracle drift");
             auto again = sample<double>(oracle, pan, lu, sched, 5);
             expect(got.data() == again.data(), "sampler is not deterministic");
         }},
        {"uncertainty-loss minimizer", [&] {
             Rng rng(4);
             for (int rep = 0; rep < 20; ++rep) {
                 double e = 0.05 + rng.uniform() * 2.0;
                 double best = 0, best_v = 1e300;
                 for (int i = 0; i < 10000; ++i) {
                     double th = 1e-3 + (10.0 - 1e-3) * i / 9999.0;
                     double v = e / (2 * th) + 0.5 * std::log(th);
                     if (v < best_v) {
                         best_v = v;
                         best = th;
                     }
                 }
                 expect(std::abs(best - e) <= 2e-3, "minimizer is not |err|");
             }
         }},
        {"metric identities", [&] {
             Rng rng(5);
             auto x = Td::rand_uniform({4, 16, 16}, rng, 0.05, 1.0);
             expect(sam(x, x) <= 1e-9, "SAM(x,x) != 0");
             expect(ergas(x, x, 0.25) == 0.0, "ERGAS(x,x) != 0");
             auto rm = reference_metrics(x, x);
             expect(std::abs(rm.ssim - 1) <= 1e-9 && std::abs(rm.scc - 1) <= 1e-9,
                    "SSIM/SCC identity");
             expect(std::abs(q2n(x, x, 8) - 1) <= 1e-9, "Q2n identity");
         }},
        {"ukrs round trip", [&] {
             Rng rng(6);
             auto x = Td::randn({3, 5}, rng);
             auto path = (fs::temp_directory_path() / "selfcheck.ukrs").string();
             write_ukrs(path, {{"x", Raster::from(x)}});
             auto back = read_ukrs(path);
             std::remove(path.c_str());
             expect(back.size() == 1 && back[0].second.f64 == x.data(), "round trip not bit-exact");
         }},
        {"loss gradients", [&] {
             Rng rng(7);
             auto xh = Td::randn({1, 2, 4, 4}, rng, 1.0, true);
             auto x0 = Td::randn({1, 2, 4, 4}, rng);
             auto th = add_scalar(Td::rand_uniform({1, 2, 4, 4}, rng, 0.1, 1.0), 0.0);
             double err = finite_difference_check(
                 [&](const Td& v) { return u_diff_loss(v, x0, th); }, xh, 1e-5);
             expect(err <= 1e-4, "u_diff_loss gradient drift");
         }},
        {"optimizer reference", [&] {
             ParamRegistry<double> reg;
             auto w = reg.create("w", {2}, {0.5, -0.4});
             AdamW opt;
             double r[2] = {0.5, -0.4}, m[2] = {0, 0}, v[2] = {0, 0};
             for (int step = 1; step <= 20; ++step) {
                 reg.zero_grad();
                 sum(w * w).backward();
                 opt.step(reg, 1e-2);
                 for (int j = 0; j < 2; ++j) {
                     double g = 2 * r[j];
                     m[j] = 0.9 * m[j] + 0.1 * g;
                     v[j] = 0.999 * v[j] + 0.001 * g * g;
                     r[j] -= 1e-2 * ((m[j] / (1 - std::pow(0.9, step))) /
                                         (std::sqrt(v[j] / (1 - std::pow(0.999, step))) + 1e-8) +
                                     1e-4 * r[j]);
                     expect(std::abs(w.data()[size_t(j)] - r[j]) <= 1e-12,
                            "optimizer deviates from the reference");
                 }
             }
         }},
        {"degradation invariants", [&] {
             auto c = wald_degrade(Td::full({1, 16, 16}, 0.4));
             for (double vv : c.data())
                 expect(std::abs(vv - 0.4) <= 1e-12, "constant not preserved");
             Rng rng(8);
             auto x = Td::rand_uniform({2, 16, 16}, rng, 0.0, 1.0);
             auto y = wald_degrade(x);
             double mi = 0, mo = 0;
             for (double vv : x.data()) mi += vv / double(x.numel());
             for (double vv : y.data()) mo += vv / double(y.numel());
             expect(std::abs(mi - mo) <= 1e-6, "mean not preserved");
         }},
    };

    bool all_ok = true;
    for (const auto& c : checks) {
        try {
            c.run();
            std::cout << "PASS " << c.name << "\n";
        } catch (const std::exception& e) {
            std::cout << "FAIL " << c.name << ": " << e.what() << "\n";
            all_ok = false;
        }
    }
    if (!all_ok) throw numeric_error("selfcheck failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"U-Know-DiffPAN-style pan-sharpening toolkit"};
    app.require_subcommand(1);

    ConfigCli gen_cc, prior_cc, teacher_cc, distill_cc, sharpen_cc, ablate_cc;
    std::string out, log_path, resume, prior_path, teacher_path, ckpt, mode = "reduced", csv;
    std::vector<std::string> inputs, fused, refs;
    int64_t count = 8, stop_after = -1;
    bool previews = true;

    auto* gen = app.add_subcommand("gen-data", "write synthetic scenes as UKRS rasters");
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--count", count, "number of scenes [default: 8]");
    gen->add_flag("!--no-previews", previews, "skip PNG previews");
    gen_cc.attach(gen);

    auto* tp = app.add_subcommand("train-prior", "pretrain the direct-regression prior");
    tp->add_option("--out", out, "checkpoint path")->required();
    tp->add_option("--log", log_path, "training log path [default: <out>.log]");
    tp->add_option("--resume", resume, "resume from a partial checkpoint");
    tp->add_option("--stop-after", stop_after, "pause at this iteration, checkpoint is resumable");
    prior_cc.attach(tp);

    auto* tt = app.add_subcommand("train-teacher", "train the teacher denoiser");
    tt->add_option("--prior", prior_path, "trained prior checkpoint")->required();
    tt->add_option("--out", out, "checkpoint path")->required();
    tt->add_option("--log", log_path, "training log path [default: <out>.log]");
    tt->add_option("--resume", resume, "resume from a partial checkpoint");
    tt->add_option("--stop-after", stop_after, "pause at this iteration, checkpoint is resumable");
    teacher_cc.attach(tt);

    auto* di = app.add_subcommand("distill", "distill the student from a frozen teacher");
    di->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    di->add_option("--prior", prior_path, "trained prior checkpoint")->required();
    di->add_option("--out", out, "checkpoint path")->required();
    di->add_option("--log", log_path, "training log path [default: <out>.log]");
    di->add_option("--resume", resume, "resume from a partial checkpoint");
    di->add_option("--stop-after", stop_after, "pause at this iteration, checkpoint is resumable");
    distill_cc.attach(di);

    auto* sh = app.add_subcommand("sharpen", "run DDIM sampling on scenes");
    sh->add_option("--checkpoint", ckpt, "teacher or student checkpoint")->required();
    sh->add_option("--prior", prior_path, "prior checkpoint (teacher sharpening)");
    sh->add_option("--in", inputs, "scene UKRS files (repeatable)");
    sh->add_option("--count", count, "synthetic scenes when no --in given [default: 8]");
    sh->add_option("--out", out, "output directory")->required();
    sharpen_cc.attach(sh);

    auto* ev = app.add_subcommand("evaluate", "compute quality metrics -> CSV");
    ev->add_option("--mode", mode, "reduced or full [default: reduced]");
    ev->add_option("--fused", fused, "fused rasters (repeatable)")->required();
    ev->add_option("--reference", refs,
                   "reduced: reference rasters; full: scene files (repeatable)")
        ->required();
    ev->add_option("--out", csv, "CSV report path");

    auto* ab = app.add_subcommand("ablate", "run the FFA/HQFE, loss-variant, SWT/DWT matrix");
    ab->add_option("--out", csv, "CSV report path");
    ablate_cc.attach(ab);

    app.add_subcommand("selfcheck", "run the invariant suite and print pass/fail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            gen_cc.finalize(gen);
            return cmd_gen_data(gen_cc, out, count, previews);
        }
        if (tp->parsed()) {
            prior_cc.finalize(tp);
            return cmd_train_prior(prior_cc, out, log_path, resume, stop_after);
        }
        if (tt->parsed()) {
            teacher_cc.finalize(tt);
            return cmd_train_teacher(teacher_cc, prior_path, out, log_path, resume, stop_after);
        }
        if (di->parsed()) {
            distill_cc.finalize(di);
            return cmd_distill(distill_cc, teacher_path, prior_path, out, log_path, resume,
                               stop_after);
        }
        if (sh->parsed()) {
            sharpen_cc.finalize(sh);
            return cmd_sharpen(sharpen_cc, ckpt, prior_path, inputs, out, count);
        }
        if (ev->parsed()) return cmd_evaluate(mode, fused, refs, csv);
        if (ab->parsed()) {
            ablate_cc.finalize(ab);
            return cmd_ablate(ablate_cc, csv);
        }
        return cmd_selfcheck();
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const training_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const value_domain_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
