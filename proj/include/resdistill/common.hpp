#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace resdistill {

// splitmix64: used both as a seed expander and as a cheap stable mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Order-sensitive combine of 64-bit values into one stable hash. Not tied to
// std::hash so results are identical across compilers and platforms.
inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

inline std::uint64_t hash_string(std::string_view s) {
    // FNV-1a 64, finished with a splitmix round for avalanche.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

// Deterministic RNG with explicitly-specified distributions. std::mt19937 is
// portable but std::normal_distribution / uniform_real_distribution are not
// pinned by the standard, so the conversions are written out here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that small seeds do not produce correlated early output.
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1): top 53 bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n), n > 0. Modulo bias is negligible for n << 2^64.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller. The spare value is kept, so a stream of normals consumes a
    // deterministic number of uniforms.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename It>
    void shuffle(It first, It last) {
        // Fisher-Yates.
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derive an independent stream for a named purpose from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
    return hash_combine(base, hash_string(purpose));
}
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index) {
    return hash_combine(hash_combine(base, hash_string(purpose)), index);
}

// Fixed-format float for CSV/SVG output. setlocale is never called, so the
// decimal point is always '.'.
inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return std::string(buf);
}

} // namespace resdistill
