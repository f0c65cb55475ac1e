#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "lamcast/rng.hpp"

using namespace lamcast;

// Known-answer vectors for Philox4x32-10 from the reference implementation's
// test vectors (kat_vectors: counter, key -> output).
TEST_CASE("philox4x32-10 known-answer vectors") {
    {
        const auto out = philox4x32({0u, 0u, 0u, 0u}, {0u, 0u});
        CHECK(out[0] == 0x6627e8d5u);
        CHECK(out[1] == 0xe169c58du);
        CHECK(out[2] == 0xbc57ac4cu);
        CHECK(out[3] == 0x9b00dbd8u);
    }
    {
        const auto out = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                    {0xffffffffu, 0xffffffffu});
        CHECK(out[0] == 0x408f276du);
        CHECK(out[1] == 0x41c83b0eu);
        CHECK(out[2] == 0xa20bc7c6u);
        CHECK(out[3] == 0x6d5451fdu);
    }
    {
        const auto out = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                    {0xa4093822u, 0x299f31d0u});
        CHECK(out[0] == 0xd16cfe09u);
        CHECK(out[1] == 0x94fdccebu);
        CHECK(out[2] == 0x5001e420u);
        CHECK(out[3] == 0x24126ea1u);
    }
}

TEST_CASE("stream output is a pure function of (seed, stream id)") {
    std::vector<std::uint32_t> ref;
    {
        RngStream a(1234, StreamKind::test, 7);
        for (int i = 0; i < 100; ++i) ref.push_back(a.next_u32());
    }
    RngStream b(1234, StreamKind::test, 7);
    for (int i = 0; i < 100; ++i) REQUIRE(b.next_u32() == ref[size_t(i)]);

    // Interleaving draws on an unrelated stream must not disturb this one.
    RngStream c(1234, StreamKind::test, 7);
    RngStream other(1234, StreamKind::test, 8);
    for (int i = 0; i < 100; ++i) {
        if (i % 3 == 0) (void)other.next_u64();
        REQUIRE(c.next_u32() == ref[size_t(i)]);
    }
}

TEST_CASE("distinct stream ids give distinct sequences") {
    RngStream a(99, StreamKind::forecast_latent, 0, 0, 0);
    RngStream b(99, StreamKind::forecast_latent, 0, 1, 0);
    RngStream c(99, StreamKind::forecast_latent, 0, 0, 1);
    RngStream d(100, StreamKind::forecast_latent, 0, 0, 0);
    std::set<std::uint64_t> firsts = {a.next_u64(), b.next_u64(), c.next_u64(), d.next_u64()};
    CHECK(firsts.size() == 4);

    // Stream ids themselves must differ across kinds and coordinates.
    std::set<std::uint64_t> ids;
    for (std::uint64_t i = 0; i < 16; ++i) {
        ids.insert(stream_id(StreamKind::train_epoch, i));
        ids.insert(stream_id(StreamKind::forecast_latent, i, 3, 5));
        ids.insert(stream_id(StreamKind::obs_noise, i));
    }
    CHECK(ids.size() == 48);
}

TEST_CASE("uniform stays in [0,1) and uniform_pos in (0,1]") {
    RngStream r(42, StreamKind::test, 1);
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        const double p = r.uniform_pos();
        REQUIRE(p > 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("uniform_below is bounded and roughly uniform") {
    RngStream r(42, StreamKind::test, 2);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto v = r.uniform_below(7);
        REQUIRE(v < 7);
        ++counts[size_t(v)];
    }
    for (int c : counts) {
        CHECK(c > n / 7 - 600);  // ~6 sigma for a binomial(n, 1/7)
        CHECK(c < n / 7 + 600);
    }
}

TEST_CASE("normal draws are finite with the expected first two moments") {
    RngStream r(2024, StreamKind::test, 3);
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        REQUIRE(std::isfinite(x));
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("counter advances across block boundaries without repeating blocks") {
    RngStream r(7, StreamKind::test, 4);
    // 4 words per Philox block; 64 words crosses 16 block refills.
    std::vector<std::uint32_t> words;
    for (int i = 0; i < 64; ++i) words.push_back(r.next_u32());
    std::set<std::vector<std::uint32_t>> blocks;
    for (size_t i = 0; i < words.size(); i += 4)
        blocks.insert({words[i], words[i + 1], words[i + 2], words[i + 3]});
    CHECK(blocks.size() == 16);
}

TEST_CASE("fill_normal writes mean + stddev * z") {
    RngStream a(11, StreamKind::test, 5);
    RngStream b(11, StreamKind::test, 5);
    std::vector<double> buf(64);
    a.fill_normal(std::span<double>(buf), 2.0, 0.5);
    for (double v : buf) {
        const double z = (v - 2.0) / 0.5;
        CHECK(std::abs(z - b.normal()) < 1e-12);
    }
}

TEST_CASE("uniform_below rejects n = 0") {
    RngStream r(1, StreamKind::test, 6);
    CHECK_THROWS_AS(r.uniform_below(0), contract_error);
}
