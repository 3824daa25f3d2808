#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "tensor.hpp"

namespace pansharp {

// One named array of the "UKRS" container. dtype 1 = f32, 2 = f64; exactly
// one of the payload vectors is populated.
struct Raster {
    uint8_t dtype = 2;
    std::vector<uint32_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    int64_t numel() const {
        int64_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }

    template <class T>
    static Raster from(const Tensor<T>& t) {
        Raster r;
        r.dtype = sizeof(T) == 4 ? 1 : 2;
        for (int64_t d : t.shape()) r.dims.push_back(static_cast<uint32_t>(d));
        if (r.dtype == 1)
            r.f32.assign(t.data().begin(), t.data().end());
        else
            r.f64.assign(t.data().begin(), t.data().end());
        return r;
    }

    template <class T>
    Tensor<T> to() const {
        Shape s;
        for (uint32_t d : dims) s.push_back(static_cast<int64_t>(d));
        std::vector<T> data(static_cast<size_t>(numel()));
        if (dtype == 1)
            for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(f32[i]);
        else
            for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(f64[i]);
        return Tensor<T>::from(std::move(s), std::move(data));
    }
};

// Insertion-ordered; the on-disk entry order is the vector order.
using RasterMap = std::vector<std::pair<std::string, Raster>>;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "UKRS I/O assumes a little-endian host");

template <class T>
void put(std::string& buf, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
}

}  // namespace detail

inline void write_ukrs(const std::string& path, const RasterMap& rasters) {
    std::string buf;
    buf.append("UKRS", 4);
    detail::put<uint16_t>(buf, 1);  // version
    detail::put<uint16_t>(buf, static_cast<uint16_t>(rasters.size()));
    for (const auto& [name, r] : rasters) {
        if (r.dtype != 1 && r.dtype != 2)
            throw format_error("write_ukrs: entry '" + name + "' has unknown dtype " +
                               std::to_string(int(r.dtype)));
        size_t have = r.dtype == 1 ? r.f32.size() : r.f64.size();
        if (static_cast<int64_t>(have) != r.numel())
            throw format_error("write_ukrs: entry '" + name + "' payload size mismatch");
        auto check_finite = [&](auto const& v) {
            for (auto x : v)
                if (!std::isfinite(double(x)))
                    throw format_error("write_ukrs: entry '" + name + "' has non-finite values");
        };
        check_finite(r.f32);
        check_finite(r.f64);
        detail::put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        detail::put<uint8_t>(buf, r.dtype);
        detail::put<uint8_t>(buf, static_cast<uint8_t>(r.dims.size()));
        for (uint32_t d : r.dims) detail::put<uint32_t>(buf, d);
        if (r.dtype == 1)
            buf.append(reinterpret_cast<const char*>(r.f32.data()), r.f32.size() * 4);
        else
            buf.append(reinterpret_cast<const char*>(r.f64.data()), r.f64.size() * 8);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("write_ukrs: cannot open '" + path + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw format_error("write_ukrs: short write to '" + path + "'");
}

inline RasterMap read_ukrs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("read_ukrs: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t off = 0;
    auto need = [&](size_t n, const std::string& what) {
        if (off + n > buf.size())
            throw format_error("read_ukrs: truncated " + what + " at byte offset " +
                               std::to_string(off) + " in '" + path + "'");
    };
    auto get = [&]<class T>(std::type_identity<T>, const std::string& what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf.data() + off, sizeof(T));
        off += sizeof(T);
        return v;
    };
    need(4, "magic");
    if (buf.compare(0, 4, "UKRS") != 0)
        throw format_error("read_ukrs: bad magic at byte offset 0 in '" + path + "'");
    off = 4;
    uint16_t version = get(std::type_identity<uint16_t>{}, "version");
    if (version != 1)
        throw format_error("read_ukrs: unsupported version " + std::to_string(version) +
                           " at byte offset 4");
    uint16_t count = get(std::type_identity<uint16_t>{}, "entry count");
    RasterMap out;
    for (uint16_t e = 0; e < count; ++e) {
        uint16_t nlen = get(std::type_identity<uint16_t>{}, "name length");
        need(nlen, "entry name");
        std::string name = buf.substr(off, nlen);
        off += nlen;
        Raster r;
        r.dtype = get(std::type_identity<uint8_t>{}, "dtype of '" + name + "'");
        if (r.dtype != 1 && r.dtype != 2)
            throw format_error("read_ukrs: unknown dtype " + std::to_string(int(r.dtype)) +
                               " for entry '" + name + "' at byte offset " +
                               std::to_string(off - 1));
        uint8_t rank = get(std::type_identity<uint8_t>{}, "rank of '" + name + "'");
        for (uint8_t d = 0; d < rank; ++d)
            r.dims.push_back(get(std::type_identity<uint32_t>{}, "dims of '" + name + "'"));
        size_t bytes = static_cast<size_t>(r.numel()) * (r.dtype == 1 ? 4 : 8);
        need(bytes, "payload of entry '" + name + "'");
        if (r.dtype == 1) {
            r.f32.resize(static_cast<size_t>(r.numel()));
            std::memcpy(r.f32.data(), buf.data() + off, bytes);
        } else {
            r.f64.resize(static_cast<size_t>(r.numel()));
            std::memcpy(r.f64.data(), buf.data() + off, bytes);
        }
        off += bytes;
        out.emplace_back(std::move(name), std::move(r));
    }
    return out;
}

}  // namespace pansharp
