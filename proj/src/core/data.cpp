#include "core/data.hpp"

#include <cmath>

namespace pixelgen {

namespace {

constexpr double kTau = 6.283185307179586;

enum ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2, kCross = 3 };

struct ShapeSpec {
    int kind;
    bool warm;
    double cx, cy, radius, rot;
    double color[3];
};

bool inside(const ShapeSpec& s, double x, double y) {
    double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
        case kCircle:
            return dx * dx + dy * dy <= s.radius * s.radius;
        case kSquare: {
            double h = s.radius * 0.8;
            return std::abs(dx) <= h && std::abs(dy) <= h;
        }
        case kTriangle: {
            // equilateral with circumradius r, rotated
            double vx[3], vy[3];
            for (int k = 0; k < 3; ++k) {
                double a = s.rot + kTau * k / 3.0;
                vx[k] = s.radius * std::cos(a);
                vy[k] = s.radius * std::sin(a);
            }
            bool neg = false, pos = false;
            for (int k = 0; k < 3; ++k) {
                int j = (k + 1) % 3;
                double cross = (vx[j] - vx[k]) * (dy - vy[k]) - (vy[j] - vy[k]) * (dx - vx[k]);
                if (cross < 0) neg = true;
                if (cross > 0) pos = true;
            }
            return !(neg && pos);
        }
        case kCross: {
            double c = std::cos(-s.rot), sn = std::sin(-s.rot);
            double u = c * dx - sn * dy;
            double v = sn * dx + c * dy;
            double arm = s.radius, w = s.radius * 0.35;
            return (std::abs(u) <= arm && std::abs(v) <= w) || (std::abs(v) <= arm && std::abs(u) <= w);
        }
    }
    return false;
}

}  // namespace

std::pair<Tensor<float>, int64_t> gen_sample(uint64_t dataset_seed, int64_t index, int64_t image_size) {
    Rng rng = Rng::derive(dataset_seed, RngPurpose::dataset_sample, static_cast<uint64_t>(index));
    int64_t cls = class_of_index(index);

    ShapeSpec s;
    s.kind = static_cast<int>(cls / 2);
    s.warm = (cls % 2) == 0;
    double mid = static_cast<double>(image_size) / 2.0 - 0.5;
    s.cx = mid + rng.uniform(-2.0, 2.0);
    s.cy = mid + rng.uniform(-2.0, 2.0);
    s.radius = rng.uniform(3.0, 6.0);
    s.rot = rng.uniform(0.0, kTau);  // drawn for every shape to keep the stream layout fixed
    double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    if (s.warm) {
        s.color[0] = 0.55 + 0.4 * u1;
        s.color[1] = -0.3 + 0.6 * u2;
        s.color[2] = -0.9 + 0.35 * u3;
    } else {
        s.color[0] = -0.9 + 0.35 * u1;
        s.color[1] = -0.3 + 0.6 * u2;
        s.color[2] = 0.55 + 0.4 * u3;
    }

    int64_t hw = image_size * image_size;
    std::vector<float> img(static_cast<size_t>(3 * hw));
    for (int64_t py = 0; py < image_size; ++py) {
        for (int64_t px = 0; px < image_size; ++px) {
            double bg = rng.uniform(-0.05, 0.05);  // per-pixel gray background noise
            // 4x supersampled coverage
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx)
                    if (inside(s, px + (sx + 0.5) / 4.0, py + (sy + 0.5) / 4.0)) ++hits;
            double cov = hits / 16.0;
            for (int c = 0; c < 3; ++c) {
                double v = bg + cov * (s.color[c] - bg);
                v = std::min(1.0, std::max(-1.0, v));
                img[static_cast<size_t>(c * hw + py * image_size + px)] = static_cast<float>(v);
            }
        }
    }
    return {Tensor<float>::from_data({3, image_size, image_size}, std::move(img)), cls};
}

Batch batch_from_indices(const DataConfig& cfg, const std::vector<int64_t>& indices) {
    int64_t b = static_cast<int64_t>(indices.size());
    int64_t hw = cfg.image_size * cfg.image_size;
    std::vector<float> data(static_cast<size_t>(b * 3 * hw));
    Batch out;
    out.labels.resize(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        auto [img, cls] = gen_sample(cfg.dataset_seed, indices[static_cast<size_t>(i)], cfg.image_size);
        std::copy(img.vec().begin(), img.vec().end(), data.begin() + i * 3 * hw);
        out.labels[static_cast<size_t>(i)] = cls;
    }
    out.images = Tensor<float>::from_data({b, 3, cfg.image_size, cfg.image_size}, std::move(data));
    return out;
}

Batch make_batch(const DataConfig& cfg, uint64_t run_seed, uint64_t step, int64_t batch_size) {
    if (batch_size < 1) fail(ErrorCode::config, "make_batch: batch_size must be >= 1");
    Rng rng = Rng::derive(run_seed, RngPurpose::batch_indices, step);
    std::vector<int64_t> indices(static_cast<size_t>(batch_size));
    for (auto& i : indices) i = rng.uniform_int(cfg.epoch_size);
    return batch_from_indices(cfg, indices);
}

}  // namespace pixelgen
