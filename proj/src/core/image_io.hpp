#pragma once

// Image grid serialization: binary PPM (P6) with a bit-exact [-1,1] -> byte
// mapping, plus an optional PNG path (8-bit RGB, non-interlaced).

#include <string>

#include "core/tensor.hpp"

namespace pixelgen {

// round-half-even mapping of [-1,1] to [0,255]
uint8_t pixel_to_byte(float v);

// Tile [N,3,H,W] images into a grid with 2-px black separators between tiles
// and write it to `path` (.png extension selects PNG, anything else PPM).
void write_image_grid(const Tensor<float>& images, const std::string& path, int64_t columns);

void write_ppm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb);
void write_png(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb);

}  // namespace pixelgen
