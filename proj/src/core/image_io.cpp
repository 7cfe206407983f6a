#include "core/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

namespace pixelgen {

uint8_t pixel_to_byte(float v) {
    float clamped = std::min(1.0f, std::max(-1.0f, v));
    double scaled = (static_cast<double>(clamped) + 1.0) / 2.0 * 255.0;
    return static_cast<uint8_t>(std::nearbyint(scaled));  // default FP mode: round half to even
}

void write_ppm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(ErrorCode::io, "write_ppm: cannot open " + path);
    std::fprintf(f, "P6\n%lld %lld\n255\n", static_cast<long long>(width), static_cast<long long>(height));
    size_t written = std::fwrite(rgb.data(), 1, rgb.size(), f);
    if (std::fclose(f) != 0 || written != rgb.size()) fail(ErrorCode::io, "write_ppm: short write to " + path);
}

namespace {

void png_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    auto be32 = [&](uint32_t v) {
        out.push_back(static_cast<uint8_t>(v >> 24));
        out.push_back(static_cast<uint8_t>(v >> 16));
        out.push_back(static_cast<uint8_t>(v >> 8));
        out.push_back(static_cast<uint8_t>(v));
    };
    be32(static_cast<uint32_t>(data.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    be32(static_cast<uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
    // filter byte 0 per scanline, then one zlib stream
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height * (1 + width * 3)));
    for (int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + y * width * 3;
        raw.insert(raw.end(), row, row + width * 3);
    }
    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        fail(ErrorCode::io, "write_png: deflate failed for " + path);
    comp.resize(comp_size);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    auto be32 = [&](uint32_t v) {
        ihdr.push_back(static_cast<uint8_t>(v >> 24));
        ihdr.push_back(static_cast<uint8_t>(v >> 16));
        ihdr.push_back(static_cast<uint8_t>(v >> 8));
        ihdr.push_back(static_cast<uint8_t>(v));
    };
    be32(static_cast<uint32_t>(width));
    be32(static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // non-interlaced
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", comp);
    png_chunk(out, "IEND", {});

    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(ErrorCode::io, "write_png: cannot open " + path);
    size_t written = std::fwrite(out.data(), 1, out.size(), f);
    if (std::fclose(f) != 0 || written != out.size()) fail(ErrorCode::io, "write_png: short write to " + path);
}

void write_image_grid(const Tensor<float>& images, const std::string& path, int64_t columns) {
    if (images.ndim() != 4 || images.dim(1) != 3)
        fail(ErrorCode::dimension, "write_image_grid: expected [N,3,H,W], got " + shape_str(images.shape()));
    if (columns < 1) fail(ErrorCode::config, "write_image_grid: columns must be >= 1");
    int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
    int64_t rows = (n + columns - 1) / columns;
    const int64_t sep = 2;
    int64_t canvas_w = columns * w + (columns - 1) * sep;
    int64_t canvas_h = rows * h + (rows - 1) * sep;
    std::vector<uint8_t> rgb(static_cast<size_t>(canvas_w * canvas_h * 3), 0);
    const float* px = images.data();
    for (int64_t i = 0; i < n; ++i) {
        int64_t tile_r = i / columns, tile_c = i % columns;
        int64_t oy = tile_r * (h + sep), ox = tile_c * (w + sep);
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                for (int64_t c = 0; c < 3; ++c) {
                    float v = px[((i * 3 + c) * h + y) * w + x];
                    rgb[static_cast<size_t>(((oy + y) * canvas_w + ox + x) * 3 + c)] = pixel_to_byte(v);
                }
            }
        }
    }
    if (path.size() > 4 && path.substr(path.size() - 4) == ".png")
        write_png(path, canvas_w, canvas_h, rgb);
    else
        write_ppm(path, canvas_w, canvas_h, rgb);
}

}  // namespace pixelgen
