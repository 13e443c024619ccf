#pragma once

// Counter-based random streams.
//
// Every random quantity in the simulator is drawn from a Stream identified by
// a 64-bit key plus a cursor. Draw n of a stream is a pure function of
// (key, n), so a stream can be checkpointed by its cursor alone and replayed
// bit-for-bit on any platform. Keys are derived by hashing a run seed with a
// tuple of integers (round, client id, purpose tag, ...), which gives every
// client of every round an independent stream regardless of the order in
// which clients are executed.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

namespace fedsel::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// FNV-1a; used to turn purpose names into stream tags.
constexpr std::uint64_t tag(std::string_view name) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t k = mix64(seed + kGolden);
    for (std::uint64_t p : parts) {
        k = mix64(k ^ mix64(p + kGolden));
    }
    return k;
}

class Stream {
public:
    constexpr Stream() noexcept = default;
    constexpr explicit Stream(std::uint64_t key, std::uint64_t cursor = 0) noexcept
        : key_(key), cursor_(cursor) {}

    constexpr std::uint64_t key() const noexcept { return key_; }
    constexpr std::uint64_t cursor() const noexcept { return cursor_; }
    constexpr void seek(std::uint64_t cursor) noexcept { cursor_ = cursor; }

    /// SplitMix64 output for state key + (cursor+1)*golden.
    constexpr std::uint64_t next_u64() noexcept {
        ++cursor_;
        return mix64(key_ + cursor_ * kGolden);
    }

    /// Uniform on [0, 1) with 53 bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Multiply-shift; bias is below 2^-64 * n.
    std::uint64_t index(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal by Box-Muller. Always consumes exactly two draws, so
    /// the i-th normal of a fresh stream sits at cursors 2i+1 and 2i+2.
    double normal() noexcept {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 uses the u^(1/shape) boost.
    double gamma(double shape) noexcept {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(uniform_open(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Symmetric Dirichlet(alpha) over `n` categories.
    std::vector<double> dirichlet(std::size_t n, double alpha) {
        std::vector<double> p(n);
        double total = 0.0;
        for (auto& x : p) {
            x = gamma(alpha);
            total += x;
        }
        if (!(total > 0.0)) {
            // Every gamma underflowed (tiny alpha); put all mass on one category.
            std::fill(p.begin(), p.end(), 0.0);
            p[index(n)] = 1.0;
            return p;
        }
        for (auto& x : p) x /= total;
        return p;
    }

    /// In-place Fisher-Yates.
    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t key_ = 0;
    std::uint64_t cursor_ = 0;
};

} // namespace fedsel::rng
