#pragma once

#include <cstdint>
#include <cmath>

#include "sgp/common.hpp"

namespace sgp {

// Counter-free splitmix64 generator with an explicit stream id. The integer
// pipeline and the uniform mapping are exact in IEEE double, so a (seed,
// stream) pair replays the same sequence everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : state_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))), stream_(stream) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix_out(state_);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per draw.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * kPi * u2);
    }

    // [0, n)
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Independent child generator for a named substream.
    Rng fork(std::uint64_t substream) const { return Rng(state_ ^ mix(substream + 1), stream_ + substream + 1); }

    std::uint64_t stream() const { return stream_; }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        return mix_out(z);
    }
    static std::uint64_t mix_out(std::uint64_t z) {
        z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31u);
    }

    std::uint64_t state_;
    std::uint64_t stream_;
};

}  // namespace sgp
