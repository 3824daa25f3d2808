#include <doctest.h>

#include <pansharp/fft.hpp>
#include <pansharp/gradcheck.hpp>
#include <pansharp/wavelet.hpp>

using namespace pansharp;
using Td = Tensor<double>;

namespace {

// circular shift by (dy, dx) on the last two axes
Td roll(const Td& x, int64_t dy, int64_t dx) {
    int64_t h = x.dim(-2), w = x.dim(-1);
    int64_t ch = x.numel() / (h * w);
    std::vector<double> out(x.data().size());
    for (int64_t c = 0; c < ch; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                int64_t sy = ((y - dy) % h + h) % h;
                int64_t sx = ((xx - dx) % w + w) % w;
                out[(c * h + y) * w + xx] = x.data()[(c * h + sy) * w + sx];
            }
    return Td::from(x.shape(), out);
}

double max_abs_diff(const Td& a, const Td& b) {
    double m = 0;
    for (size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("rfft2 of a constant image is DC-only") {
    double c = 0.7;
    auto x = Td::full({1, 4, 4}, c);
    auto X = rfft2(x);
    CHECK(X.real.shape() == Shape{1, 4, 3});
    CHECK(X.real.at({0, 0, 0}) == doctest::Approx(16 * c).epsilon(1e-12));
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t v = 0; v < 3; ++v) {
            if (y == 0 && v == 0) continue;
            CHECK(std::abs(X.real.at({0, y, v})) < 1e-12);
            CHECK(std::abs(X.imag.at({0, y, v})) < 1e-12);
        }
}

TEST_CASE("rfft2 rejects odd and non-power-of-two widths") {
    CHECK_THROWS_AS((void)rfft2(Td::zeros({1, 4, 6})), contract_error);
    CHECK_THROWS_AS((void)rfft2(Td::zeros({1, 3, 4})), contract_error);
}

TEST_CASE("irfft2(rfft2(x)) round trip within 1e-10") {
    Rng rng(5);
    auto x = Td::randn({2, 8, 8}, rng);
    auto back = irfft2(rfft2(x));
    CHECK(max_abs_diff(x, back) < 1e-10);
}

TEST_CASE("Parseval identity with Hermitian double counting") {
    Rng rng(9);
    int64_t h = 8, w = 8, w2 = w / 2 + 1;
    auto x = Td::randn({1, h, w}, rng);
    double lhs = 0;
    for (double v : x.data()) lhs += v * v;
    auto X = rfft2(x);
    double rhs = 0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t v = 0; v < w2; ++v) {
            double p = X.real.at({0, y, v}) * X.real.at({0, y, v}) +
                       X.imag.at({0, y, v}) * X.imag.at({0, y, v});
            bool interior = (v != 0 && v != w2 - 1);
            rhs += interior ? 2 * p : p;
        }
    rhs /= double(h * w);
    CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-9);
}

TEST_CASE("irfft2 trivial spectra") {
    auto zr = Td::zeros({1, 4, 3});
    auto zi = Td::zeros({1, 4, 3});
    auto y = irfft2(ComplexTensor<double>{zr, zi});
    for (double v : y.data()) CHECK(v == 0.0);

    double c = 1.25;
    std::vector<double> dc(12, 0.0);
    dc[0] = 16 * c;
    auto y2 = irfft2(ComplexTensor<double>{Td::from({1, 4, 3}, dc), zi});
    for (double v : y2.data()) CHECK(v == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("rfft2 o irfft2 identity on spectra produced by rfft2") {
    Rng rng(21);
    auto x = Td::randn({1, 8, 8}, rng);
    auto X = rfft2(x);
    auto X2 = rfft2(irfft2(X));
    CHECK(max_abs_diff(X.real, X2.real) < 1e-9);
    CHECK(max_abs_diff(X.imag, X2.imag) < 1e-9);
}

TEST_CASE("gradcheck through rfft2 and irfft2") {
    Rng rng(33);
    auto x = Td::randn({1, 4, 4}, rng);
    auto wr = Td::randn({1, 4, 3}, rng);
    auto wi = Td::randn({1, 4, 3}, rng);
    CHECK(finite_difference_check(
              [&](Td t) {
                  auto X = rfft2(t);
                  return sum(X.real * wr) + sum(X.imag * wi);
              },
              x, 1e-6) < 1e-6);
    auto w = Td::randn({1, 4, 4}, rng);
    auto base_i = Td::randn({1, 4, 3}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(irfft2(ComplexTensor<double>{t, base_i}) * w); },
              Td::randn({1, 4, 3}, rng), 1e-6) < 1e-6);
    auto base_r = Td::randn({1, 4, 3}, rng);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(irfft2(ComplexTensor<double>{base_r, t}) * w); },
              Td::randn({1, 4, 3}, rng), 1e-6) < 1e-6);
    // composed round trip
    CHECK(finite_difference_check(
              [&](Td t) { return sum(irfft2(rfft2(t)) * w); }, x, 1e-6) < 1e-6);
}

TEST_CASE("swt2 of a constant image: L = input, details exactly zero") {
    double c = 0.42;
    auto x = Td::full({2, 4, 4}, c);
    auto b = swt2(x);
    for (double v : b.L.data()) CHECK(v == doctest::Approx(c).epsilon(1e-15));
    for (double v : b.H.data()) CHECK(v == 0.0);
    for (double v : b.V.data()) CHECK(v == 0.0);
    for (double v : b.D.data()) CHECK(v == 0.0);
}

TEST_CASE("swt2 rejects unknown filters") {
    CHECK_THROWS_AS((void)swt2(Td::zeros({1, 4, 4}), "db4"), config_error);
}

TEST_CASE("SWT circular shift equivariance is exact") {
    Rng rng(3);
    auto x = Td::randn({1, 8, 8}, rng);
    auto b = swt2(x);
    auto bs = swt2(roll(x, 1, 1));
    CHECK(max_abs_diff(bs.L, roll(b.L, 1, 1)) < 1e-10);
    CHECK(max_abs_diff(bs.H, roll(b.H, 1, 1)) < 1e-10);
    CHECK(max_abs_diff(bs.V, roll(b.V, 1, 1)) < 1e-10);
    CHECK(max_abs_diff(bs.D, roll(b.D, 1, 1)) < 1e-10);
}

TEST_CASE("step edge lands in V only, on the edge columns") {
    // columns [0, 0, 1, 1]: forward differences are nonzero at columns 1
    // (0->1 transition) and 3 (circular wrap)
    std::vector<double> data(16);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) data[y * 4 + x] = x >= 2 ? 1.0 : 0.0;
    auto b = swt2(Td::from({1, 4, 4}, data));
    for (double v : b.H.data()) CHECK(v == 0.0);
    for (double v : b.D.data()) CHECK(v == 0.0);
    for (int y = 0; y < 4; ++y) {
        CHECK(b.V.at({0, y, 0}) == 0.0);
        CHECK(b.V.at({0, y, 1}) == doctest::Approx(-0.5));
        CHECK(b.V.at({0, y, 2}) == 0.0);
        CHECK(b.V.at({0, y, 3}) == doctest::Approx(0.5));
    }
}

TEST_CASE("iswt2 round trip") {
    Rng rng(77);
    auto x = Td::randn({3, 8, 8}, rng);
    CHECK(max_abs_diff(x, iswt2(swt2(x))) < 1e-10);

    auto zero = WaveletBundle<double>{Td::zeros({1, 4, 4}), Td::zeros({1, 4, 4}),
                                      Td::zeros({1, 4, 4}), Td::zeros({1, 4, 4})};
    auto rz = iswt2(zero);
    for (double v : rz.data()) CHECK(v == 0.0);

    auto bc = swt2(Td::full({1, 4, 4}, 2.0));
    auto rc = iswt2(bc);
    for (double v : rc.data()) CHECK(v == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("iswt2 rejects DWT bundles") {
    auto b = dwt2(Td::zeros({1, 4, 4}));
    CHECK_THROWS_AS((void)iswt2(b), contract_error);
}

TEST_CASE("dwt2 basics") {
    auto b = dwt2(Td::full({1, 8, 8}, 0.3));
    CHECK(b.L.shape() == Shape{1, 4, 4});
    for (double v : b.L.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
    for (double v : b.H.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS((void)dwt2(Td::zeros({1, 5, 4})), contract_error);
}

TEST_CASE("DWT shift-variance witness on a step edge") {
    std::vector<double> data(64);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) data[y * 8 + x] = x >= 4 ? 1.0 : 0.0;
    auto x = Td::from({1, 8, 8}, data);
    auto b0 = dwt2(x);
    auto b1 = dwt2(roll(x, 0, 1));
    // no integer subband shift can reconcile the two decompositions
    double witness = 1e9;
    for (int s = 0; s < 4; ++s)
        witness = std::min(witness, max_abs_diff(b1.V, roll(b0.V, 0, s)));
    CHECK(witness > 1e-3);
}

TEST_CASE("gradcheck through wavelet transforms") {
    Rng rng(55);
    auto x = Td::randn({1, 4, 4}, rng);
    auto w = Td::randn({1, 4, 4}, rng);
    auto wh = Td::randn({1, 2, 2}, rng);
    CHECK(finite_difference_check(
              [&](Td t) {
                  auto b = swt2(t);
                  return sum(b.L * w) + sum(b.H * w) + sum(b.V * w) + sum(b.D * w);
              },
              x, 1e-6) < 1e-6);
    CHECK(finite_difference_check(
              [&](Td t) { return sum(iswt2(swt2(t)) * w); }, x, 1e-6) < 1e-6);
    // independent weights per subband so no element of the true gradient is
    // an exact zero (the relative-error metric is meaningless there)
    auto wh2 = Td::randn({1, 2, 2}, rng);
    CHECK(finite_difference_check(
              [&](Td t) {
                  auto b = dwt2(t);
                  return sum(b.L * wh) + sum(b.D * wh2);
              },
              x, 1e-6) < 1e-6);
}

TEST_CASE("build_s_cond constants and channel counts") {
    int64_t B = 8;
    auto pan = Td::full({1, 8, 8}, 0.5);
    auto lrms = Td::full({B, 8, 8}, 0.25);
    auto sc = build_s_cond(pan, lrms);
    CHECK(sc.shape() == Shape{B + 3, 8, 8});
    for (int64_t c = 0; c < B; ++c)
        for (int64_t i = 0; i < 64; ++i) CHECK(sc.data()[c * 64 + i] == doctest::Approx(0.25));
    for (int64_t c = B; c < B + 3; ++c)
        for (int64_t i = 0; i < 64; ++i) CHECK(sc.data()[c * 64 + i] == 0.0);
}

TEST_CASE("build_s_cond energy matches PAN subband energies") {
    Rng rng(91);
    auto pan = Td::rand_uniform({1, 8, 8}, rng, 0.0, 1.0);
    auto lrms = Td::rand_uniform({4, 8, 8}, rng, 0.0, 1.0);
    auto sc = build_s_cond(pan, lrms);
    double lhs = 0;
    for (int64_t c = 4; c < 7; ++c)
        for (int64_t i = 0; i < 64; ++i) {
            double v = sc.data()[c * 64 + i];
            lhs += v * v;
        }
    auto bp = swt2(pan);
    double rhs = 0;
    for (const auto* band : {&bp.H, &bp.V, &bp.D})
        for (double v : band->data()) rhs += v * v;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("build_s_cond DWT variant is half resolution") {
    auto pan = Td::zeros({1, 8, 8});
    auto lrms = Td::zeros({4, 8, 8});
    auto sc = build_s_cond(pan, lrms, WaveletKind::DWT);
    CHECK(sc.shape() == Shape{7, 4, 4});
}

TEST_CASE("build_s_cond spatial mismatch is a contract error") {
    CHECK_THROWS_AS((void)build_s_cond(Td::zeros({1, 8, 8}), Td::zeros({4, 4, 4})),
                    contract_error);
}
