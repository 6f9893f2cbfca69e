// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fuselave {

// Thrown for malformed user input (bad config, bad file, bad CLI args).
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when optimization produces a non-finite loss. CLI exit code 3.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Counter-based seedable RNG (splitmix64 core). Every consumer receives its
// own Rng value, so parallel callers never share hidden state and a stream
// can be re-derived from (seed, label) pairs.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform on [0,1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller (one value per call; always consumes
    // two uniforms so the stream layout is position-independent).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Truncated normal in [-2s, 2s], resampling tails.
    double trunc_normal(double s) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * s;
        }
    }

    // Derive an independent stream from this one's seed and a tag.
    Rng fork(uint64_t tag) const {
        Rng mix(state_ ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
        return Rng(mix.next_u64());
    }

  private:
    uint64_t state_;
};

}  // namespace fuselave
