#pragma once

// Shared numeric and hashing utilities: keyed hashing, a counter-based
// PRNG (so every consumer can derive independent deterministic streams),
// simple samplers, and the linear-interpolation quantile used throughout.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wmlab {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// hashing / RNG

// splitmix64 finalizer; full avalanche on 64 bits.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Multiply-shift combine of a word sequence into one 64-bit key.
inline uint64_t hash_words(uint64_t seed, std::span<const uint64_t> words) {
    uint64_t h = mix64(seed ^ 0x8445D61A4E774912ull);
    for (uint64_t w : words) {
        h ^= mix64(w);
        h *= 0x9E3779B97F4A7C15ull;
        h ^= h >> 29;
    }
    return mix64(h ^ (uint64_t)words.size());
}

inline uint64_t hash_str(std::string_view s, uint64_t seed = 0) {
    // FNV-1a folded through mix64.
    uint64_t h = 1469598103934665603ull ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return mix64(h);
}

// Counter-based PRNG: value i of the stream keyed by `key`.
// Pure function, O(1) random access.
inline uint64_t counter_rng(uint64_t key, uint64_t counter) {
    return mix64(key + (counter + 1) * 0x9E3779B97F4A7C15ull);
}

inline double u64_to_unit(uint64_t x) {
    return (double)(x >> 11) * 0x1.0p-53;  // [0, 1)
}

// Small stateful stream over counter_rng; cheap to copy and fork.
class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    uint64_t next_u64() { return counter_rng(key_, counter_++); }
    double next_unit() { return u64_to_unit(next_u64()); }

    // (0, 1): rejects exact zero so logs stay finite
    double next_open() {
        double u;
        do { u = next_unit(); } while (u <= 0.0);
        return u;
    }

    double next_normal() {
        double u1 = next_open();
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Marsaglia-Tsang; alpha < 1 handled by the boost identity.
    double next_gamma(double alpha) {
        if (alpha <= 0.0) throw Error("gamma: alpha must be > 0");
        if (alpha < 1.0) {
            double u = next_open();
            return next_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = next_normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = next_open();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    // index into cumulative weights; weights need not be normalized
    size_t next_index(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) throw Error("next_index: non-positive total weight");
        double r = next_unit() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

    // Fisher-Yates over [0, n)
    std::vector<uint32_t> next_permutation(uint32_t n) {
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = n; i > 1; --i) {
            uint32_t j = (uint32_t)(next_u64() % i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// numerics

// Quantile with linear interpolation between order statistics
// (h = (n-1)*q convention).
inline double quantile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw Error("quantile: empty input");
    if (q < 0.0 || q > 1.0) throw Error("quantile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (double)(values.size() - 1) * q;
    const size_t lo = (size_t)h;
    if (lo + 1 >= values.size()) return values.back();
    const double frac = h - (double)lo;
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw Error("mean: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

// In-place softmax with max subtraction.
inline void softmax_inplace(std::vector<double>& scores) {
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
    }
    for (double& s : scores) s /= sum;
}

}  // namespace wmlab
