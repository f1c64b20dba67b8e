#pragma once

#include <cstdint>
#include <vector>

namespace gradweave {

// splitmix64 step; also used to derive independent stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mixes any number of 64-bit keys into one seed. Used for per-sample /
// per-camera streams so generation order never affects the result.
inline uint64_t derive_seed(uint64_t seed) { return seed; }

template <typename... Rest>
uint64_t derive_seed(uint64_t seed, uint64_t key, Rest... rest) {
    uint64_t s = seed ^ (key + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    s = splitmix64(s);
    return derive_seed(s, static_cast<uint64_t>(rest)...);
}

// Small deterministic PRNG. The standard <random> engines are portable but
// their distributions are not specified bit-for-bit, and reruns must produce
// byte-identical artifacts, so all draws go through this.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelates nearby seeds
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // uniform in [lo, hi]
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // uniform integer in [lo, hi] inclusive
    int next_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool bernoulli(double p) { return next_double() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace gradweave
