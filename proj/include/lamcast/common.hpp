#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lamcast {

// Error taxonomy. The CLI maps each category to a distinct exit code, so
// library code should throw the most specific type that applies.

// Invalid configuration: bad key, bad value, incompatible architecture.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File and serialization failures.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures detected at runtime (NaN/Inf mid-computation,
// degenerate statistics).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract violations: shape mismatches, out-of-range indices, masked-access
// violations. These indicate caller bugs rather than bad input data.
class contract_error : public std::logic_error {
public:
    explicit contract_error(const std::string& msg) : std::logic_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

template <typename T>
inline bool is_finite_value(T v) {
    return std::isfinite(static_cast<double>(v));
}

// FNV-1a 64-bit content hash, reported as a fixed-width hex string. Used to
// stamp outputs with the config / checkpoint they came from.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[size_t(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string fnv1a64_hex(const std::string& text) {
    return hex64(fnv1a64(text.data(), text.size()));
}

}  // namespace lamcast
