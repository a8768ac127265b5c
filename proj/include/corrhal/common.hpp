#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace corrhal {

enum class ErrorCode {
    NonPositiveDepth,
    NonFiniteInput,
    NonFiniteCost,
    InvalidConfig,
    UncoveredFrustum,
    ShapeMismatch,
    DegenerateConfiguration,
    EmptyBatch,
    EmptyDataset,
    IoError,
    BadFormat,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

/// Seeded RNG with self-contained value derivation so that streams are
/// bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (always consumes two draws).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Fork a stream for a named sub-task; decouples consumption orders.
    Rng fork(uint64_t stream) {
        uint64_t s = next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        return Rng(s);
    }

private:
    std::mt19937_64 eng_;
};

/// SplitMix64 hash step; used for procedural textures.
inline uint64_t hash_u64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace corrhal
