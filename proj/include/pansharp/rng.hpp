#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pansharp {

// Counter-based generator: output i of stream `seed` is a pure function of
// (seed, i), so state is just two u64 and serializes trivially.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    uint64_t next_u64() {
        uint64_t z = seed_ + (counter_++) * 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // standard normal, Box-Muller; consumes exactly two counter slots
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t uniform_int(uint64_t lo, uint64_t hi_inclusive) {
        return lo + next_u64() % (hi_inclusive - lo + 1);
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

private:
    uint64_t seed_;
    uint64_t counter_;
};

// Sub-stream derivation: hash the purpose string into the parent seed so each
// consumer gets an independent stream from one top-level --seed.
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose) {
    uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (char c : purpose) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= seed << 1;
    h = (h ^ (h >> 33)) * 0xff51afd7ed558ccdULL;
    h = (h ^ (h >> 33)) * 0xc4ceb9fe1a85ec53ULL;
    return h ^ (h >> 33);
}

}  // namespace pansharp
