#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace artseg {

// ---------------------------------------------------------------------------
// Error taxonomy. Every failure surfaced by the library is one of these, so
// callers (and the CLI) can map categories to exit diagnostics.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/map shapes.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Invalid configuration values (strides, factors, divisibility, config files).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("configuration error: " + msg) {}
};

// Bad data on disk or out-of-range label values.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

// API misuse (backward on a non-scalar, missing gradients, ...).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Plain raster buffers shared by the data and metrics modules.
// IndexMap holds per-pixel class indices; FloatImage holds intensities in [0,1].
// ---------------------------------------------------------------------------

struct IndexMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;  // row-major, height*width entries

    IndexMap() = default;
    IndexMap(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    std::int64_t pixels() const { return static_cast<std::int64_t>(height) * width; }
};

struct FloatImage {
    int height = 0;
    int width = 0;
    std::vector<float> values;  // row-major, height*width entries

    FloatImage() = default;
    FloatImage(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
};

// ---------------------------------------------------------------------------
// Seeded RNG. The engine is std::mt19937_64 (bit-exact by the standard); the
// distributions are hand-rolled because the standard library's are not
// specified bit-for-bit across implementations.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() { return state_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = state_();
        } while (x >= limit);
        return x % n;
    }

    bool coin() { return (state_() & 1u) != 0; }

    // Standard normal via Box-Muller; caches the second deviate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = r * std::sin(two_pi * u2);
        have_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace artseg
