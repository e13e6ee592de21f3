#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedner {

/// Deterministic RNG for reproducible experiments. Streams are derived from
/// a root seed plus a key (purpose tag and indices), so independent parts of
/// the pipeline never share or race on generator state. Only the mt19937_64
/// raw output is used; distributions are implemented here because the
/// standard library's are not portable across implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static std::uint64_t derive_key(std::uint64_t seed, std::string_view tag,
                                    std::uint64_t a = 0, std::uint64_t b = 0,
                                    std::uint64_t c = 0, std::uint64_t d = 0) {
        // FNV-1a over the tag, then splitmix-style mixing of the indices.
        std::uint64_t h = 14695981039346656037ull;
        for (char ch : tag) {
            h ^= static_cast<unsigned char>(ch);
            h *= 1099511628211ull;
        }
        for (std::uint64_t x : {seed, a, b, c, d}) {
            h += 0x9e3779b97f4a7c15ull + x;
            h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
            h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
            h ^= h >> 31;
        }
        return h;
    }

    static Rng keyed(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                     std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0) {
        return Rng(derive_key(seed, tag, a, b, c, d));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound), bound > 0. Rejection sampling keeps the
    /// distribution exact.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

    /// Standard normal via Box-Muller.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// First k elements of a shuffle: uniform sample without replacement.
    template <typename T>
    std::vector<T> sample(std::vector<T> pool, std::size_t k) {
        for (std::size_t i = 0; i < k && i + 1 < pool.size(); ++i) {
            std::size_t j = i + static_cast<std::size_t>(next_below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(std::min(k, pool.size()));
        return pool;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fedner
