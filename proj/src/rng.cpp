#include "diffsed/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace diffsed {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void Rng::reseed(uint64_t seed) {
    // splitmix64 expansion into the xoshiro state, per the reference impl.
    uint64_t s = seed;
    for (auto& w : state_) {
        s += 0x9e3779b97f4a7c15ULL;
        uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        w = z ^ (z >> 31);
    }
    has_spare_ = false;
}

Rng Rng::derive(uint64_t seed, uint64_t stream) {
    return Rng(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

Rng Rng::derive(uint64_t seed, uint64_t a, uint64_t b) {
    return derive(mix64(seed) ^ mix64(a), b);
}

static inline uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi <= lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo);
    return lo + static_cast<int64_t>(next_u64() % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 is kept away from 0 so the log is finite.
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<double> Rng::normal_vec(size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
}

std::vector<double> Rng::uniform_vec(size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform();
    return v;
}

std::vector<size_t> Rng::permutation(size_t n) {
    std::vector<size_t> p(n);
    for (size_t i = 0; i < n; ++i) p[i] = i;
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i)));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace diffsed
