#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "lamcast/common.hpp"

namespace lamcast {

// Counter-based random streams built on Philox4x32-10. Every consumer of
// randomness in the pipeline owns a stream addressed by (seed, stream id);
// streams can be created in any order and on any thread without coupling,
// which is what makes ensemble results invariant to the degree of
// parallelism.

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace detail

// One Philox4x32-10 block evaluation. Exposed for known-answer tests.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t(detail::kPhiloxM0) * ctr[0];
        const std::uint64_t p1 = std::uint64_t(detail::kPhiloxM1) * ctr[2];
        const auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        const auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += detail::kPhiloxW0;
        key[1] += detail::kPhiloxW1;
    }
    return ctr;
}

// Stream identifiers. The id is a pure function of the logical role plus up
// to three coordinates (trajectory, member, step, ...), so any two draws at
// different coordinates come from provably distinct counter blocks.
enum class StreamKind : std::uint64_t {
    blob_init = 1,       // per-trajectory blob layout jitter
    obs_noise = 2,       // per-trajectory observation noise
    model_init = 3,      // parameter initialization
    train_epoch = 4,     // per-epoch sample order + noise draws
    forecast_latent = 5, // per (init, member, step) latent noise
    test = 100,          // scratch streams in test code
};

inline std::uint64_t stream_id(StreamKind kind, std::uint64_t a = 0,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
    using detail::splitmix64;
    std::uint64_t s = splitmix64(static_cast<std::uint64_t>(kind));
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    s = splitmix64(s ^ c);
    return s;
}

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
          stream_{std::uint32_t(stream), std::uint32_t(stream >> 32)} {}

    RngStream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0,
              std::uint64_t b = 0, std::uint64_t c = 0)
        : RngStream(seed, stream_id(kind, a, b, c)) {}

    std::uint32_t next_u32() {
        if (avail_ == 0) refill();
        return block_[--avail_];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log argument.
    double uniform_pos() { return 1.0 - uniform(); }

    // Uniform integer on {0, ..., n-1} by rejection (unbiased).
    std::uint64_t uniform_below(std::uint64_t n) {
        require(n > 0, "uniform_below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; pairs cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(std::span<T> out, double mean, double stddev) {
        for (auto& v : out) v = static_cast<T>(mean + stddev * normal());
    }

private:
    void refill() {
        const std::array<std::uint32_t, 4> ctr = {
            std::uint32_t(counter_), std::uint32_t(counter_ >> 32), stream_[0], stream_[1]};
        const auto out = philox4x32(ctr, key_);
        block_ = {out[3], out[2], out[1], out[0]};
        avail_ = 4;
        ++counter_;
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 2> stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int avail_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace lamcast
