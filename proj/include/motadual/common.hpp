// Shared error taxonomy, seeded RNG, and small utilities.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint and image formats assume a little-endian host");

namespace motadual {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Interface misused (bad argument combination, wrong call order).
struct ContractError : Error {
    using Error::Error;
};
// Tensor shapes incompatible for the requested kernel.
struct DimensionError : Error {
    using Error::Error;
};
// Non-finite or degenerate numeric input/result.
struct NumericError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};
// Input file unreadable or malformed.
struct IngestionError : Error {
    using Error::Error;
};
// Text reply could not be parsed into the expected structure.
struct ParseError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
// A required earlier-stage artifact is missing.
struct DependencyError : Error {
    using Error::Error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

// Deterministic RNG used everywhere a seed is taken. Distribution math is
// written out explicitly so results do not depend on the standard library's
// unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    bool coin() { return (engine_() & 1u) != 0; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, sigma^2) clipped by resampling to |z| <= 2 sigma.
    double truncated_normal(double sigma) {
        double z = normal();
        while (std::abs(z) > 2.0) z = normal();
        return z * sigma;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace motadual
