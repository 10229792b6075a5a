#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace msemu {

/// Small deterministic PRNG (splitmix64). Used everywhere a seed appears so
/// results are reproducible across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // rejection-free modulo is fine here; n is tiny compared to 2^64
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform01();
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t state_;
};

/// Stable 64-bit mix of several keys, for seeding per-item generators.
inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) {
    Rng r(a ^ 0x632be59bd9b4e019ULL);
    std::uint64_t h = r.next_u64();
    h ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = Rng(h).next_u64();
    h ^= c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = Rng(h).next_u64();
    h ^= d + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return Rng(h).next_u64();
}

/// Round x to p significant bits (round-to-nearest). p >= 1.
inline double round_to_bits(double x, int p) {
    if (x == 0.0 || !std::isfinite(x) || p >= 53) return x;
    int e;
    double m = std::frexp(x, &e);            // x = m * 2^e, |m| in [0.5, 1)
    double s = std::ldexp(1.0, p);
    return std::ldexp(std::nearbyint(m * s) / s, e);
}

/// Run fn(i) for i in [0, n) on up to `jobs` threads. jobs <= 1 runs inline.
inline void parallel_for(std::int64_t n, int jobs, const std::function<void(std::int64_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = static_cast<int>(std::min<std::int64_t>(jobs, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::int64_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace msemu
