#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace pansharp {

namespace detail {

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    uint32_t len = static_cast<uint32_t>(payload.size());
    for (int i = 3; i >= 0; --i) out.push_back(char((len >> (8 * i)) & 0xff));
    std::string body(type, 4);
    body += payload;
    out += body;
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size())));
    for (int i = 3; i >= 0; --i) out.push_back(char((crc >> (8 * i)) & 0xff));
}

}  // namespace detail

// Minimal 8-bit RGB PNG writer; rgb is row-major H*W*3.
inline void write_png_rgb8(const std::string& path, int64_t h, int64_t w,
                           const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != h * w * 3)
        throw contract_error("write_png_rgb8: buffer size does not match " + std::to_string(h) +
                             "x" + std::to_string(w));
    // raw scanlines, filter byte 0 per row
    std::vector<uint8_t> raw(static_cast<size_t>(h * (w * 3 + 1)));
    for (int64_t y = 0; y < h; ++y) {
        raw[size_t(y * (w * 3 + 1))] = 0;
        std::memcpy(raw.data() + y * (w * 3 + 1) + 1, rgb.data() + y * w * 3, size_t(w * 3));
    }
    uLongf zcap = compressBound(uLong(raw.size()));
    std::vector<uint8_t> z(zcap);
    if (compress2(z.data(), &zcap, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw format_error("write_png_rgb8: deflate failed");
    z.resize(zcap);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    auto be32 = [&](std::string& s, uint32_t v) {
        for (int i = 3; i >= 0; --i) s.push_back(char((v >> (8 * i)) & 0xff));
    };
    be32(ihdr, uint32_t(w));
    be32(ihdr, uint32_t(h));
    ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit, RGB
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", std::string(reinterpret_cast<char*>(z.data()), z.size()));
    detail::png_chunk(out, "IEND", "");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw format_error("write_png_rgb8: cannot open '" + path + "'");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw format_error("write_png_rgb8: short write to '" + path + "'");
}

// Preview export: three bands of a (B,H,W) stack, stretched per band to the
// 1%..99% percentile range and quantized. Never used for metrics.
template <class T>
void preview_png(const std::string& path, const Tensor<T>& img, int64_t rb, int64_t gb,
                 int64_t bb) {
    if (img.rank() != 3) throw contract_error("preview_png expects (B,H,W)");
    int64_t B = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (int64_t b : {rb, gb, bb})
        if (b < 0 || b >= B)
            throw contract_error("preview_png: band " + std::to_string(b) + " outside 0.." +
                                 std::to_string(B - 1));
    const auto& d = img.data();
    std::vector<uint8_t> rgb(static_cast<size_t>(H * W * 3));
    int64_t bands[3] = {rb, gb, bb};
    for (int c = 0; c < 3; ++c) {
        std::vector<double> v(static_cast<size_t>(H * W));
        for (int64_t p = 0; p < H * W; ++p) v[size_t(p)] = double(d[bands[c] * H * W + p]);
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        double lo = sorted[size_t(double(sorted.size() - 1) * 0.01)];
        double hi = sorted[size_t(double(sorted.size() - 1) * 0.99)];
        double span = hi > lo ? hi - lo : 1.0;
        for (int64_t p = 0; p < H * W; ++p) {
            double t = (v[size_t(p)] - lo) / span;
            t = std::min(1.0, std::max(0.0, t));
            rgb[size_t(p * 3 + c)] = static_cast<uint8_t>(t * 255.0 + 0.5);
        }
    }
    write_png_rgb8(path, H, W, rgb);
}

}  // namespace pansharp
