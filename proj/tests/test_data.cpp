#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <pansharp/data.hpp>
#include <pansharp/metrics.hpp>
#include <pansharp/png.hpp>
#include <pansharp/raster_io.hpp>

using namespace pansharp;
using Td = Tensor<double>;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

bool bit_equal(const Td& a, const Td& b) {
    return a.shape() == b.shape() && a.data() == b.data();
}

}  // namespace

TEST_CASE("synth_scene determinism, geometry, value range") {
    auto a = synth_scene<double>(42, 4, 32, 32);
    auto b = synth_scene<double>(42, 4, 32, 32);
    CHECK(bit_equal(a.pan, b.pan));
    CHECK(bit_equal(a.lrms, b.lrms));
    CHECK(bit_equal(a.lrms_up, b.lrms_up));
    CHECK(bit_equal(a.hrms, b.hrms));
    CHECK(bit_equal(a.edge_mask, b.edge_mask));

    auto c = synth_scene<double>(43, 4, 32, 32);
    CHECK_FALSE(bit_equal(a.hrms, c.hrms));

    CHECK(a.pan.shape() == Shape{1, 32, 32});
    CHECK(a.lrms.shape() == Shape{4, 8, 8});
    CHECK(a.lrms_up.shape() == Shape{4, 32, 32});
    CHECK(a.hrms.shape() == Shape{4, 32, 32});
    CHECK(a.edge_mask.shape() == Shape{1, 32, 32});

    for (const Td* t : {&a.pan, &a.lrms, &a.lrms_up, &a.hrms})
        for (double v : t->data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    double edge_frac = 0;
    for (double v : a.edge_mask.data()) {
        CHECK((v == 0.0 || v == 1.0));
        edge_frac += v / double(a.edge_mask.numel());
    }
    CHECK(edge_frac > 0.0);
    CHECK(edge_frac < 0.5);

    // lrms is exactly the seeded degradation of hrms
    CHECK(bit_equal(a.lrms, wald_degrade(a.hrms)));

    CHECK_THROWS_AS(synth_scene<double>(1, 4, 30, 32), contract_error);
}

TEST_CASE("synth_scene residual has near-zero spatial mean across seeds") {
    // the low-pass content lives in lrms_up, so hrms - lrms_up should be
    // nearly mean-free for every seed
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto s = synth_scene<double>(seed, 4, 32, 32);
        double m = 0;
        for (int64_t i = 0; i < s.hrms.numel(); ++i)
            m += (s.hrms.data()[size_t(i)] - s.lrms_up.data()[size_t(i)]) /
                 double(s.hrms.numel());
        CHECK(std::abs(m) < 0.05);
    }
}

TEST_CASE("wald_degrade constants, impulse response, mean preservation") {
    CHECK_THROWS_AS(wald_degrade(Td::zeros({1, 10, 12})), contract_error);

    auto deg = wald_degrade(Td::full({2, 16, 16}, 0.37));
    CHECK(deg.shape() == Shape{2, 4, 4});
    for (double v : deg.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    // interior impulse: hand-convolve the separable Gaussian, then block-average
    std::vector<double> img(16 * 16, 0.0);
    img[7 * 16 + 7] = 1.0;
    auto out = wald_degrade(Td::from({1, 16, 16}, img));
    std::vector<double> k(7);
    double ks = 0;
    for (int i = 0; i < 7; ++i) {
        double d = i - 3;
        k[size_t(i)] = std::exp(-d * d / (2 * 1.6 * 1.6));
        ks += k[size_t(i)];
    }
    for (auto& v : k) v /= ks;
    for (int64_t yq = 0; yq < 4; ++yq)
        for (int64_t xq = 0; xq < 4; ++xq) {
            double want = 0;
            for (int64_t dy = 0; dy < 4; ++dy)
                for (int64_t dx = 0; dx < 4; ++dx) {
                    int64_t y = 4 * yq + dy, x = 4 * xq + dx;
                    if (std::abs(y - 7) <= 3 && std::abs(x - 7) <= 3)
                        want += k[size_t(y - 4)] * k[size_t(x - 4)] / 16.0;
                }
            CHECK(out.data()[yq * 4 + xq] == doctest::Approx(want).epsilon(1e-12));
        }

    // DC preservation on random inputs
    Rng rng(77);
    auto x = Td::rand_uniform({3, 32, 32}, rng, 0.0, 1.0);
    auto y = wald_degrade(x);
    double mi = 0, mo = 0;
    for (double v : x.data()) mi += v / double(x.numel());
    for (double v : y.data()) mo += v / double(y.numel());
    CHECK(std::abs(mi - mo) < 1e-6);
}

TEST_CASE("wald_degrade commutes with flips") {
    auto s = synth_scene<double>(5, 3, 32, 32);
    for (auto [fh, fv] : {std::pair{true, false}, {false, true}, {true, true}}) {
        auto a = wald_degrade(detail::flip_hw(s.hrms, fh, fv));
        auto b = detail::flip_hw(wald_degrade(s.hrms), fh, fv);
        REQUIRE(a.shape() == b.shape());
        for (int64_t i = 0; i < a.numel(); ++i)
            CHECK(a.data()[size_t(i)] == doctest::Approx(b.data()[size_t(i)]).epsilon(1e-12));
    }
}

TEST_CASE("augment_flip involution, identity, metric invariance") {
    auto s = synth_scene<double>(9, 4, 32, 32);

    auto id = augment_flip(s, false, false);
    CHECK(bit_equal(id.pan, s.pan));
    CHECK(bit_equal(id.hrms, s.hrms));

    for (auto [fh, fv] : {std::pair{true, false}, {false, true}, {true, true}}) {
        auto f = augment_flip(s, fh, fv);
        CHECK_FALSE(bit_equal(f.hrms, s.hrms));
        auto back = augment_flip(f, fh, fv);
        CHECK(bit_equal(back.pan, s.pan));
        CHECK(bit_equal(back.lrms, s.lrms));
        CHECK(bit_equal(back.lrms_up, s.lrms_up));
        CHECK(bit_equal(back.hrms, s.hrms));
        CHECK(bit_equal(back.edge_mask, s.edge_mask));
    }

    auto other = synth_scene<double>(10, 4, 32, 32);
    auto fa = augment_flip(s, true, true), fb = augment_flip(other, true, true);
    CHECK(sam(fa.hrms, fb.hrms) == doctest::Approx(sam(s.hrms, other.hrms)).epsilon(1e-12));
}

TEST_CASE("ukrs round trip is bit-exact for both dtypes") {
    Rng rng(21);
    auto a = Td::randn({2, 5, 7}, rng);
    auto b = Tensor<float>::randn({3, 4}, rng);
    RasterMap m;
    m.emplace_back("alpha", Raster::from(a));
    m.emplace_back("beta", Raster::from(b));

    auto path = tmp_path("ukrs_roundtrip.ukrs");
    write_ukrs(path, m);
    auto got = read_ukrs(path);
    REQUIRE(got.size() == 2);
    CHECK(got[0].first == "alpha");
    CHECK(got[1].first == "beta");
    CHECK(got[0].second.dtype == 2);
    CHECK(got[1].second.dtype == 1);
    CHECK(got[0].second.f64 == m[0].second.f64);
    CHECK(got[1].second.f32 == m[1].second.f32);
    CHECK(bit_equal(got[0].second.to<double>(), a));
    CHECK(got[1].second.to<float>().data() == b.data());
    std::remove(path.c_str());
}

TEST_CASE("ukrs empty map and corruption cases") {
    auto path = tmp_path("ukrs_cases.ukrs");

    write_ukrs(path, {});
    // header only: magic + u16 version + u16 count
    CHECK(std::filesystem::file_size(path) == 8);
    CHECK(read_ukrs(path).empty());

    RasterMap m;
    m.emplace_back("field", Raster::from(Td::full({4, 4}, 0.5)));
    write_ukrs(path, m);
    std::string bytes = slurp(path);

    // bad magic
    std::string bad = bytes;
    bad[0] = 'X';
    dump(path, bad);
    CHECK_THROWS_WITH_AS(read_ukrs(path), doctest::Contains("bad magic"), format_error);

    // unknown dtype: byte right after the 2-byte name length + 5-byte name
    bad = bytes;
    bad[8 + 2 + 5] = char(9);
    dump(path, bad);
    try {
        read_ukrs(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(std::string(e.what()).find("unknown dtype 9") != std::string::npos);
        CHECK(std::string(e.what()).find("byte offset 15") != std::string::npos);
    }

    // truncation mid-payload must name the entry
    dump(path, bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_WITH_AS(read_ukrs(path), doctest::Contains("payload of entry 'field'"),
                         format_error);

    // non-finite data is rejected at write time
    Raster nf = Raster::from(Td::full({2}, 1.0));
    nf.f64[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(write_ukrs(path, {{"bad", nf}}), format_error);
    std::remove(path.c_str());
}

TEST_CASE("png preview export") {
    auto s = synth_scene<double>(33, 4, 32, 32);
    auto path = tmp_path("preview.png");
    preview_png(path, s.hrms, 2, 1, 0);
    std::string bytes = slurp(path);
    REQUIRE(bytes.size() > 8 + 25 + 12);
    CHECK(bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0);
    // IHDR width/height, big-endian, at fixed offsets
    auto be32 = [&](size_t off) {
        return (uint32_t(uint8_t(bytes[off])) << 24) | (uint32_t(uint8_t(bytes[off + 1])) << 16) |
               (uint32_t(uint8_t(bytes[off + 2])) << 8) | uint32_t(uint8_t(bytes[off + 3]));
    };
    CHECK(be32(16) == 32);
    CHECK(be32(20) == 32);
    CHECK(bytes.find("IEND") != std::string::npos);

    // determinism
    auto path2 = tmp_path("preview2.png");
    preview_png(path2, s.hrms, 2, 1, 0);
    CHECK(slurp(path2) == bytes);

    CHECK_THROWS_AS(preview_png(path2, s.hrms, 4, 1, 0), contract_error);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}
