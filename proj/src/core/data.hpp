#pragma once

// Procedural labeled toy dataset: 8 classes = {circle, square, triangle,
// cross} x {warm, cool}, jittered and anti-aliased, fully determined by
// (dataset_seed, index). No files on disk.

#include "core/tensor.hpp"

namespace pixelgen {

struct DataConfig {
    uint64_t dataset_seed = 1234;
    int64_t image_size = 16;
    int64_t epoch_size = 8192;  // virtual epoch the batch sampler draws from
};

inline int64_t class_of_index(int64_t index) { return index % 8; }

// Deterministic sample: 3 x size x size image in [-1,1] plus its class id.
std::pair<Tensor<float>, int64_t> gen_sample(uint64_t dataset_seed, int64_t index, int64_t image_size = 16);

struct Batch {
    Tensor<float> images;          // [B,3,H,W]
    std::vector<int64_t> labels;   // [B]
};

// Indices drawn uniformly from the virtual epoch; deterministic per
// (run_seed, step) so batch assembly order never matters.
Batch make_batch(const DataConfig& cfg, uint64_t run_seed, uint64_t step, int64_t batch_size);

// Stack explicit dataset indices into a batch (used by evaluation).
Batch batch_from_indices(const DataConfig& cfg, const std::vector<int64_t>& indices);

}  // namespace pixelgen
