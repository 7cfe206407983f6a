#include "core/rng.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace pixelgen {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t root, uint64_t purpose, uint64_t step) {
    uint64_t s = root;
    uint64_t a = splitmix64(s);
    s ^= purpose * 0x9e3779b97f4a7c15ull;
    uint64_t b = splitmix64(s);
    s ^= step * 0xd1b54a32d192ed03ull;
    uint64_t c = splitmix64(s);
    return a ^ (b << 1) ^ (c >> 1) ^ c;
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : s_) w = splitmix64(s);
}

Rng Rng::derive(uint64_t root, RngPurpose purpose, uint64_t step) {
    return Rng(mix_seed(root, static_cast<uint64_t>(purpose), step));
}

uint64_t Rng::next_u64() {
    uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) fail(ErrorCode::contract, "Rng::uniform_int: n must be positive");
    return static_cast<int64_t>((static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
}

}  // namespace pixelgen
