#include <doctest.h>

#include <pansharp/gradcheck.hpp>
#include <pansharp/nn_ops.hpp>
#include <pansharp/tensor.hpp>

using namespace pansharp;
using Td = Tensor<double>;

TEST_CASE("softmax over axis of [0,0] is [0.5,0.5]") {
    auto x = Td::from({2}, {0.0, 0.0});
    auto s = softmax_lastdim(x);
    CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softplus(0) = ln 2") {
    auto y = softplus(Td::scalar(0.0));
    CHECK(y.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("matmul by identity preserves the operand") {
    auto a = Td::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto eye = Td::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto r = matmul(a, eye);
    REQUIRE(r.shape() == Shape{2, 3});
    for (int i = 0; i < 6; ++i) CHECK(r.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("backward of sum(x^2)") {
    auto x = Td::from({2}, {1.0, 2.0}, true);
    auto loss = sum(x * x);
    loss.backward();
    CHECK(x.grad_data()[0] == doctest::Approx(2.0));
    CHECK(x.grad_data()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward on constant loss is a no-op") {
    auto loss = Td::scalar(3.0);
    CHECK_NOTHROW(loss.backward());
}

TEST_CASE("backward of mean(|x|)") {
    auto x = Td::from({2}, {3.0, -3.0}, true);
    auto loss = mean(abs(x));
    loss.backward();
    CHECK(x.grad_data()[0] == doctest::Approx(0.5));
    CHECK(x.grad_data()[1] == doctest::Approx(-0.5));
}

TEST_CASE("backward called on non-scalar throws") {
    auto x = Td::from({2}, {1.0, 2.0}, true);
    auto y = x * x;
    CHECK_THROWS_AS(y.backward(), contract_error);
}

TEST_CASE("repeated backward accumulates grads") {
    auto x = Td::from({1}, {2.0}, true);
    auto loss = sum(x * x);
    loss.backward();
    loss.backward();
    CHECK(x.grad_data()[0] == doctest::Approx(8.0));
}

TEST_CASE("shape mismatch names both shapes") {
    auto a = Td::zeros({2, 3});
    auto b = Td::zeros({4, 5});
    try {
        auto c = a + b;
        FAIL("expected shape_error");
    } catch (const shape_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("log and div at exact zero are domain errors") {
    auto z = Td::from({2}, {1.0, 0.0});
    CHECK_THROWS_AS((void)log(z), value_domain_error);
    auto a = Td::from({2}, {1.0, 1.0});
    CHECK_THROWS_AS((void)(a / z), value_domain_error);
}

TEST_CASE("broadcast result shape is elementwise max of aligned dims") {
    auto a = Td::zeros({4, 1, 3});
    auto b = Td::zeros({2, 1});
    auto c = a + b;
    CHECK(c.shape() == Shape{4, 2, 3});
}

TEST_CASE("broadcast values and grads") {
    // (2,2) * (2,) : column vector broadcast over rows
    auto a = Td::from({2, 2}, {1, 2, 3, 4}, true);
    auto b = Td::from({2}, {10, 100}, true);
    auto c = a * b;
    CHECK(c.data() == std::vector<double>{10, 200, 30, 400});
    auto loss = sum(c);
    loss.backward();
    CHECK(a.grad_data() == std::vector<double>{10, 100, 10, 100});
    CHECK(b.grad_data() == std::vector<double>{4, 6});
}

TEST_CASE("determinism: same seed gives bit-identical tensors") {
    Rng r1(42), r2(42);
    auto a = Td::randn({64}, r1);
    auto b = Td::randn({64}, r2);
    CHECK(a.data() == b.data());
}

TEST_CASE("finite_difference_check on sum(x^2) is tiny") {
    Rng rng(7);
    auto x = Td::randn({3, 3}, rng);
    double err = finite_difference_check([](Td t) { return sum(t * t); }, x, 1e-5);
    CHECK(err < 1e-6);
}

static double check_unary(Tensor<double> (*op)(const Tensor<double>&), const Td& x) {
    return finite_difference_check([op](Td t) { return sum(op(t)); }, x, 1e-6);
}

TEST_CASE("gradcheck: elementwise ops") {
    Rng rng(11);
    auto x = Td::rand_uniform({2, 5}, rng, 0.2, 2.0);
    CHECK(check_unary(&exp<double>, x) < 1e-6);
    CHECK(check_unary(&log<double>, x) < 1e-6);
    CHECK(check_unary(&sqrt<double>, x) < 1e-6);
    CHECK(check_unary(&softplus<double>, x) < 1e-6);
    CHECK(check_unary(&gelu<double>, x) < 1e-6);
    auto y = Td::rand_uniform({2, 5}, rng, -2.0, -0.2);
    CHECK(check_unary(&abs<double>, y) < 1e-6);
    CHECK(check_unary(&relu<double>, y) < 1e-6);
}

TEST_CASE("gradcheck: binary ops with broadcasting") {
    Rng rng(13);
    auto a0 = Td::rand_uniform({3, 4}, rng, 0.5, 1.5);
    auto b0 = Td::rand_uniform({4}, rng, 0.5, 1.5);
    auto wrt_a = [&](Td t) { return sum(t / b0 + t * b0); };
    auto wrt_b = [&](Td t) { return sum(a0 / t + a0 * t); };
    CHECK(finite_difference_check(wrt_a, a0, 1e-6) < 1e-6);
    CHECK(finite_difference_check(wrt_b, b0, 1e-6) < 1e-6);
}

TEST_CASE("gradcheck: matmul all transpose combinations") {
    Rng rng(17);
    auto a = Td::randn({3, 4}, rng);
    auto b = Td::randn({4, 2}, rng);
    auto at = Td::randn({4, 3}, rng);
    auto bt = Td::randn({2, 4}, rng);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(t, b)); }, a, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(a, t)); }, b, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(t, b, true, false)); }, at, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(a, t, false, true)); }, bt, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(t, bt, true, true)); }, at, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(at, t, true, true)); }, bt, 1e-6) < 1e-6);
}

TEST_CASE("gradcheck: batched matmul") {
    Rng rng(19);
    auto a = Td::randn({2, 3, 4}, rng);
    auto b = Td::randn({2, 4, 3}, rng);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(t, b)); }, a, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(a, t)); }, b, 1e-6) < 1e-6);
    CHECK(finite_difference_check([&](Td t) { return sum(matmul(a, t, false, true)); }, a, 1e-6) < 1e-6);
}

TEST_CASE("gradcheck: softmax, reductions, shape ops") {
    Rng rng(23);
    auto x = Td::randn({3, 5}, rng);
    auto weights = Td::randn({3, 5}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(softmax_lastdim(t) * weights); }, x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(sum_axis(t, 0) * sum_axis(weights, 0)); }, x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(mean_axis(t, 1, true) * weights); }, x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(reshape(t, {5, 3}) * reshape(weights, {5, 3})); }, x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) {
                  auto c = concat<double>({t, t * 2.0}, 1);
                  return sum(c * c);
              },
              x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(slice(t, 1, 1, 3) * slice(weights, 1, 1, 3)); }, x, 1e-6) < 1e-6);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(29);
    auto x = Td::randn({4, 7}, rng);
    auto s = softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double acc = 0;
        for (int i = 0; i < 7; ++i) acc += s.data()[r * 7 + i];
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conv2d matches direct computation on a known case") {
    // 1x1x3x3 input, 3x3 kernel of ones, zero pad same: each output is the
    // sum of the 3x3 neighbourhood.
    auto x = Td::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Td::full({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, Td(), 1, 1);
    CHECK(y.at({0, 0, 1, 1}) == doctest::Approx(45.0));
    CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(1 + 2 + 4 + 5));
    CHECK(y.at({0, 0, 2, 2}) == doctest::Approx(5 + 6 + 8 + 9));
}

TEST_CASE("gradcheck: conv2d variants") {
    Rng rng(31);
    auto x = Td::randn({2, 4, 6, 6}, rng);
    auto w33 = Td::randn({3, 4, 3, 3}, rng, 0.5);
    auto w11 = Td::randn({5, 4, 1, 1}, rng, 0.5);
    auto wdw = Td::randn({4, 1, 3, 3}, rng, 0.5);
    auto ws2 = Td::randn({3, 4, 3, 3}, rng, 0.5);
    auto b = Td::randn({3}, rng);

    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(t, w33, b, 1, 1))); }, x, 1e-6) < 1e-5);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(x, t, b, 1, 1))); }, w33, 1e-6) < 1e-5);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(x, w33, t, 1, 1))); }, b, 1e-6) < 1e-5);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(t, w11, Td(), 1, 0))); }, x, 1e-6) < 1e-5);
    // depthwise
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(t, wdw, Td(), 1, 1, 4))); }, x, 1e-6) < 1e-5);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(x, t, Td(), 1, 1, 4))); }, wdw, 1e-6) < 1e-5);
    // stride 2
    CHECK(finite_difference_check(
              [&](Td t) { return sum(abs(conv2d(t, ws2, Td(), 2, 1))); }, x, 1e-6) < 1e-5);
}

TEST_CASE("conv2d stride-2 output shape") {
    auto x = Td::zeros({1, 2, 8, 8});
    auto w = Td::zeros({4, 2, 3, 3});
    auto y = conv2d(x, w, Td(), 2, 1);
    CHECK(y.shape() == Shape{1, 4, 4, 4});
}

TEST_CASE("gradcheck: upsample and group_norm") {
    Rng rng(37);
    auto x = Td::randn({2, 4, 4, 4}, rng);
    auto weights = Td::randn({2, 4, 8, 8}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(upsample_nearest2x(t) * weights); }, x, 1e-6) < 1e-6);
    auto gw = Td::randn({2, 4, 4, 4}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(group_norm(t, 4) * gw); }, x, 1e-6) < 1e-5);
    auto gamma = Td::rand_uniform({4}, rng, 0.5, 1.5);
    auto beta = Td::randn({4}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(group_norm_affine(t, 4, gamma, beta) * gw); }, x, 1e-6) < 1e-5);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(group_norm_affine(x, 4, t, beta) * gw); }, gamma, 1e-6) < 1e-5);
}

TEST_CASE("group_norm normalizes each group") {
    Rng rng(41);
    auto x = Td::randn({1, 8, 4, 4}, rng, 3.0);
    auto y = group_norm(x, 4);
    // each group of 2 channels has mean ~0, var ~1
    for (int g = 0; g < 4; ++g) {
        double m = 0, v = 0;
        const int n = 2 * 16;
        for (int c = 2 * g; c < 2 * g + 2; ++c)
            for (int i = 0; i < 16; ++i) m += y.data()[c * 16 + i];
        m /= n;
        for (int c = 2 * g; c < 2 * g + 2; ++c)
            for (int i = 0; i < 16; ++i) {
                double d = y.data()[c * 16 + i] - m;
                v += d * d;
            }
        v /= n;
        CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("detach cuts the graph") {
    auto x = Td::from({2}, {1.0, 2.0}, true);
    auto y = (x * x).detach();
    auto loss = sum(y * x);
    loss.backward();
    // only the direct x factor contributes: d/dx (x^2_detached * x) = x^2
    CHECK(x.grad_data()[0] == doctest::Approx(1.0));
    CHECK(x.grad_data()[1] == doctest::Approx(4.0));
}

TEST_CASE("NoGradGuard suppresses graph construction") {
    auto x = Td::from({2}, {1.0, 2.0}, true);
    NoGradGuard ng;
    auto y = sum(x * x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("global_mean_hw") {
    auto x = Td::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    auto m = global_mean_hw(x);
    CHECK(m.shape() == Shape{1, 2});
    CHECK(m.data()[0] == doctest::Approx(2.5));
    CHECK(m.data()[1] == doctest::Approx(25.0));
}
