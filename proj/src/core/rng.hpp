#pragma once

#include <cstdint>

namespace pixelgen {

// Purpose tags for derived substreams. Every consumer of randomness draws from
// its own (root seed, purpose, step) stream, so replaying any step is
// independent of batch assembly order or thread count.
enum class RngPurpose : uint64_t {
    dataset_sample = 1,
    batch_indices = 2,
    time_sample = 3,
    noise = 4,
    label_drop = 5,
    init_model = 6,
    init_lpips = 7,
    init_global = 8,
    init_eval_feat = 9,
    sample_noise = 10,
    diagnostics = 11,
};

uint64_t splitmix64(uint64_t& state);

// Collapse (root, purpose, step) into one well-mixed 64-bit stream key.
uint64_t mix_seed(uint64_t root, uint64_t purpose, uint64_t step);

// xoshiro256++ stream seeded through splitmix64; normal variates via Box-Muller.
class Rng {
public:
    explicit Rng(uint64_t seed);

    static Rng derive(uint64_t root, RngPurpose purpose, uint64_t step = 0);

    uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    double normal();
    int64_t uniform_int(int64_t n);  // [0, n)

private:
    uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pixelgen
