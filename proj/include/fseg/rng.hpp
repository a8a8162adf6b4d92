#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace fseg::rng {

// splitmix64 step; used both as a stream seeder and as a seed mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Fold an arbitrary list of ids (master seed, round, client, stream tag, ...)
// into one stream seed. Order-sensitive on purpose.
inline std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = 0x243F6A8885A308D3ull;
    for (std::uint64_t p : parts) {
        state ^= p + 0x9E3779B97F4A7C15ull + (state << 6) + (state >> 2);
        splitmix64(state);
    }
    return splitmix64(state);
}

// Stream tags so independent consumers of the same master seed never collide.
enum Tag : std::uint64_t {
    kModelInit = 0x11,
    kClientSample = 0x22,
    kShuffle = 0x33,
    kVolume = 0x44,
    kFedVcDraw = 0x55,
    kFedVcBatch = 0x66,
};

// Deterministic random stream. The distributions are mapped by hand from the
// raw engine output: std::uniform_real_distribution and friends are
// implementation-defined and would not reproduce across standard libraries.
class Stream {
  public:
    explicit Stream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return eng_() % n; }

    // standard normal via Box-Muller, one cached value
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fseg::rng
