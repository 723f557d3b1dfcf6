#pragma once

#include <cstdint>
#include <vector>

namespace diffsed {

// Deterministic RNG with explicit transforms on top of xoshiro256**.
// The standard <random> distributions are implementation-defined, which
// would break bit-identical reruns across toolchains; every draw here is
// spelled out so a (seed, stream) pair always produces the same bytes.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed);

    // Derive an independent stream from this seed and a stream id.
    // Used to give every (epoch, clip) its own generator so batch-level
    // threading cannot change the draws.
    static Rng derive(uint64_t seed, uint64_t stream);
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b);

    uint64_t next_u64();

    // Uniform on [0, 1), 53-bit resolution.
    double uniform();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi) (hi > lo).
    int64_t uniform_int(int64_t lo, int64_t hi);
    // Standard normal via Box-Muller (second value cached).
    double normal();

    std::vector<double> normal_vec(size_t n);
    std::vector<double> uniform_vec(size_t n);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<size_t> permutation(size_t n);

private:
    uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 step; also used to hash ids into sub-seeds.
uint64_t mix64(uint64_t x);

}  // namespace diffsed
