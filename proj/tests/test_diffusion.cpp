#include <doctest.h>

#include <pansharp/diffusion.hpp>

using namespace pansharp;
using Td = Tensor<double>;

TEST_CASE("schedule construction") {
    auto s = make_schedule(500, 1e-4, 0.02, 25);
    REQUIRE(s.ddim_steps.size() == 25);
    CHECK(s.ddim_steps.front() == 20);
    CHECK(s.ddim_steps.back() == 500);
    for (size_t k = 1; k < s.ddim_steps.size(); ++k)
        CHECK(s.ddim_steps[k] - s.ddim_steps[k - 1] == 20);

    // beta in (0,1) nondecreasing, alpha_bar strictly decreasing in (0,1)
    for (size_t t = 0; t < 500; ++t) {
        CHECK(s.beta[t] > 0.0);
        CHECK(s.beta[t] < 1.0);
        if (t > 0) CHECK(s.beta[t] >= s.beta[t - 1]);
        CHECK(s.alpha_bar[t] > 0.0);
        CHECK(s.alpha_bar[t] < 1.0);
        if (t > 0) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    }
    CHECK(s.beta.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta.back() == doctest::Approx(0.02).epsilon(1e-12));

    auto one = make_schedule(1, 1e-4, 0.02, 1);
    CHECK(one.alpha_bar == std::vector<double>{1.0 - 1e-4});
    CHECK(one.ddim_steps == std::vector<int64_t>{1});

    CHECK_THROWS_AS(make_schedule(10, 1e-4, 0.02, 11), config_error);
    CHECK_THROWS_AS(make_schedule(10, 0.02, 1e-4, 5), config_error);
}

TEST_CASE("q_sample values and bounds") {
    NoiseSchedule s;
    s.T = 1;
    s.beta = {0.75};
    s.alpha_bar = {0.25};
    s.ddim_steps = {1};

    auto x0 = Td::scalar(2.0);
    auto eps = Td::scalar(1.0);
    auto y = q_sample(x0, 1, eps, s);
    CHECK(y.item() == doctest::Approx(0.5 * 2.0 + std::sqrt(0.75)).epsilon(1e-12));
    CHECK(y.item() == doctest::Approx(1.8660).epsilon(1e-4));

    CHECK_THROWS_AS(q_sample(x0, 0, eps, s), contract_error);
    CHECK_THROWS_AS(q_sample(x0, 2, eps, s), contract_error);
    auto bad = Td::zeros({2});
    CHECK_THROWS_AS(q_sample(x0, 1, bad, s), shape_error);

    // degenerate endpoints
    NoiseSchedule e = s;
    e.alpha_bar = {1.0};
    CHECK(q_sample(x0, 1, eps, e).item() == 2.0);
    e.alpha_bar = {0.0};
    CHECK(q_sample(x0, 1, eps, e).item() == 1.0);
}

TEST_CASE("q_sample variance matches 1 - alpha_bar") {
    auto s = make_schedule(500, 1e-4, 0.02, 25);
    int64_t t = 250;
    const int64_t n = 10000;
    Rng rng(derive_seed(7, "qsample-variance"));
    auto x0 = Td::zeros({n});
    auto eps = Td::randn({n}, rng);
    auto q = q_sample(x0, t, eps, s);
    double m = 0.0, m2 = 0.0;
    for (double v : q.data()) {
        m += v;
        m2 += v * v;
    }
    m /= double(n);
    m2 /= double(n);
    double var = m2 - m * m;
    double want = 1.0 - s.abar(t);
    CHECK(std::abs(var - want) / want < 0.05);
}

TEST_CASE("ddim_step consistency") {
    auto s = make_schedule(500, 1e-4, 0.02, 25);
    Rng rng(11);
    auto x0 = Td::randn({2, 4, 4}, rng);
    auto eps = Td::randn({2, 4, 4}, rng);

    // t_prev = 0 collapses to the prediction
    auto xt = q_sample(x0, 20, eps, s);
    auto back = ddim_step(xt, x0, 20, 0, s);
    for (size_t i = 0; i < back.data().size(); ++i)
        CHECK(back.data()[i] == x0.data()[i]);

    // exact prediction walks the q_sample trajectory
    auto x500 = q_sample(x0, 500, eps, s);
    auto x480 = ddim_step(x500, x0, 500, 480, s);
    auto want = q_sample(x0, 480, eps, s);
    for (size_t i = 0; i < x480.data().size(); ++i)
        CHECK(x480.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));

    // zero implied noise scales the prediction
    auto pure = mul_scalar(x0, std::sqrt(s.abar(300)));
    auto stepped = ddim_step(pure, x0, 300, 280, s);
    auto scaled = mul_scalar(x0, std::sqrt(s.abar(280)));
    for (size_t i = 0; i < stepped.data().size(); ++i)
        CHECK(stepped.data()[i] == doctest::Approx(scaled.data()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(ddim_step(xt, x0, 20, 20, s), contract_error);
    CHECK_THROWS_AS(ddim_step(xt, x0, 10, -1, s), contract_error);
    NoiseSchedule degenerate = s;
    degenerate.alpha_bar[19] = 1.0;
    CHECK_THROWS_AS(ddim_step(xt, x0, 20, 0, degenerate), numeric_error);
}

TEST_CASE("sample determinism and oracle exactness") {
    auto s = make_schedule(500, 1e-4, 0.02, 25);
    Rng rng(23);
    auto pan = Td::randn({1, 8, 8}, rng);
    auto lrms_up = Td::randn({4, 8, 8}, rng);
    // residual strictly inside [-1, 1] so the sampler's clamp is a no-op
    auto x0 = clamp(mul_scalar(Td::randn({4, 8, 8}, rng), 0.3), -0.9, 0.9);
    auto hrms = lrms_up + x0;

    auto zero_model = [&](const Td&, const Td&, const Td& lu, int64_t) {
        return Td::zeros(lu.shape());
    };
    auto out0 = sample(zero_model, pan, lrms_up, s, 99);
    for (size_t i = 0; i < out0.data().size(); ++i)
        CHECK(out0.data()[i] == lrms_up.data()[i]);

    auto oracle = [&](const Td&, const Td&, const Td&, int64_t) { return x0; };
    auto fused = sample(oracle, pan, lrms_up, s, 99);
    double worst = 0.0;
    for (size_t i = 0; i < fused.data().size(); ++i)
        worst = std::max(worst, std::abs(fused.data()[i] - hrms.data()[i]));
    CHECK(worst < 1e-8);

    auto again = sample(oracle, pan, lrms_up, s, 99);
    CHECK(again.data() == fused.data());

    // a trajectory-dependent model exposes the seed (the oracle cannot:
    // its final step returns x0 no matter the start)
    auto passthrough = [&](const Td& xt, const Td&, const Td&, int64_t) {
        return mul_scalar(xt, 0.5);
    };
    auto pa = sample(passthrough, pan, lrms_up, s, 99);
    auto pb = sample(passthrough, pan, lrms_up, s, 100);
    CHECK(pa.data() == sample(passthrough, pan, lrms_up, s, 99).data());
    CHECK(pa.data() != pb.data());

    auto nan_model = [&](const Td&, const Td&, const Td& lu, int64_t) {
        return Td::full(lu.shape(), std::numeric_limits<double>::quiet_NaN());
    };
    CHECK_THROWS_WITH_AS(sample(nan_model, pan, lrms_up, s, 1),
                         doctest::Contains("t=500"), numeric_error);
}
