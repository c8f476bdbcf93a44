#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "cdgc/core/rng.hpp"
#include "cdgc/data/dataset.hpp"

namespace cdgc {

// Synthetic 32x32 dataset: one shape per image in one palette colour at a
// random position and scale. The shape index is the category label; the
// colour index is a category-irrelevant factor kept as record metadata so
// disentanglement probes have ground truth.

inline constexpr int kToysetResolution = 32;
inline constexpr int kToysetMaxShapes = 4;   // circle, square, triangle, cross
inline constexpr int kToysetMaxColors = 8;

namespace detail {

inline const std::array<std::array<float, 3>, kToysetMaxColors>& toyset_palette() {
    static const std::array<std::array<float, 3>, kToysetMaxColors> p = {{
        {0.9f, -0.7f, -0.7f},   // red
        {-0.7f, 0.9f, -0.7f},   // green
        {-0.7f, -0.7f, 0.9f},   // blue
        {0.9f, 0.9f, -0.7f},    // yellow
        {0.9f, -0.7f, 0.9f},    // magenta
        {-0.7f, 0.9f, 0.9f},    // cyan
        {0.9f, 0.1f, -0.7f},    // orange
        {0.9f, 0.9f, 0.9f},     // white
    }};
    return p;
}

inline bool inside_shape(int shape, double dx, double dy, double s) {
    switch (shape) {
        case 0:  // circle
            return dx * dx + dy * dy <= s * s;
        case 1:  // square
            return std::abs(dx) <= s && std::abs(dy) <= s;
        case 2: {  // upward triangle
            if (dy < -s || dy > s) return false;
            const double half_width = (dy + s) / 2.0;  // 0 at apex, s at base
            return std::abs(dx) <= half_width;
        }
        case 3:  // cross
            return (std::abs(dx) <= s / 3.0 && std::abs(dy) <= s) ||
                   (std::abs(dy) <= s / 3.0 && std::abs(dx) <= s);
        default:
            return false;
    }
}

}  // namespace detail

inline Dataset generate_toyset(uint64_t seed, int n_shapes, int n_colors, int64_t count) {
    if (count <= 0) throw std::invalid_argument("toyset: count must be positive");
    if (n_shapes < 2 || n_shapes > kToysetMaxShapes)
        throw std::invalid_argument("toyset: n_shapes must be in [2," +
                                    std::to_string(kToysetMaxShapes) + "]");
    if (n_colors < 2 || n_colors > kToysetMaxColors)
        throw std::invalid_argument("toyset: n_colors must be in [2," +
                                    std::to_string(kToysetMaxColors) + "]");

    constexpr int R = kToysetResolution;
    constexpr float bg = -0.85f;
    const auto& palette = detail::toyset_palette();

    Dataset ds;
    ds.n_classes = n_shapes;
    ds.resolution = R;
    ds.records.reserve(static_cast<size_t>(count));
    Rng rng(seed);
    for (int64_t i = 0; i < count; ++i) {
        const int shape = static_cast<int>(rng.uniform_int(n_shapes));
        const int color = static_cast<int>(rng.uniform_int(n_colors));
        const double s = rng.uniform(5.0, 10.0);
        const double cx = rng.uniform(s + 1.0, R - 1.0 - s);
        const double cy = rng.uniform(s + 1.0, R - 1.0 - s);

        ImageRecord rec;
        rec.label = shape;
        rec.nuisance = color;
        rec.pixels = Tensor<float>({3, R, R});
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x) {
                // 3x3 supersampling for soft edges.
                int hits = 0;
                for (int sy = 0; sy < 3; ++sy)
                    for (int sx = 0; sx < 3; ++sx) {
                        const double px = x + (sx + 0.5) / 3.0 - cx;
                        const double py = y + (sy + 0.5) / 3.0 - cy;
                        if (detail::inside_shape(shape, px, py, s)) ++hits;
                    }
                const float cov = static_cast<float>(hits) / 9.0f;
                for (int c = 0; c < 3; ++c)
                    rec.pixels[(c * R + y) * R + x] = bg + cov * (palette[color][c] - bg);
            }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

// On-disk layout: <stem>.json header plus raw little-endian tensors
// <stem>.images.f32 (count*3*32*32 float32) and <stem>.labels.i32 /
// <stem>.nuisance.i32 (count int32 each).
inline void save_toyset(const Dataset& ds, const std::string& stem, uint64_t seed, int n_shapes,
                        int n_colors) {
    {
        std::ofstream h(stem + ".json");
        if (!h) throw std::runtime_error("toyset: cannot write " + stem + ".json");
        h << "{\n  \"count\": " << ds.size() << ",\n  \"seed\": " << seed
          << ",\n  \"n_shapes\": " << n_shapes << ",\n  \"n_colors\": " << n_colors
          << ",\n  \"resolution\": " << ds.resolution << ",\n  \"images\": \"" << stem
          << ".images.f32\",\n  \"labels\": \"" << stem << ".labels.i32\",\n  \"nuisance\": \""
          << stem << ".nuisance.i32\"\n}\n";
    }
    std::ofstream fi(stem + ".images.f32", std::ios::binary);
    std::ofstream fl(stem + ".labels.i32", std::ios::binary);
    std::ofstream fn(stem + ".nuisance.i32", std::ios::binary);
    if (!fi || !fl || !fn) throw std::runtime_error("toyset: cannot write tensors for " + stem);
    for (const auto& r : ds.records) {
        fi.write(reinterpret_cast<const char*>(r.pixels.data()),
                 static_cast<std::streamsize>(r.pixels.numel() * sizeof(float)));
        const int32_t lab = r.label, nui = r.nuisance;
        fl.write(reinterpret_cast<const char*>(&lab), sizeof(int32_t));
        fn.write(reinterpret_cast<const char*>(&nui), sizeof(int32_t));
    }
}

inline Dataset load_toyset(const std::string& stem) {
    std::ifstream h(stem + ".json");
    if (!h) throw std::runtime_error("toyset: cannot open " + stem + ".json");
    std::string header((std::istreambuf_iterator<char>(h)), std::istreambuf_iterator<char>());
    auto field = [&](const std::string& key) -> int64_t {
        const auto pos = header.find("\"" + key + "\"");
        if (pos == std::string::npos) throw std::runtime_error("toyset: header missing " + key);
        return std::stoll(header.substr(header.find(':', pos) + 1));
    };
    const int64_t count = field("count");
    const int n_shapes = static_cast<int>(field("n_shapes"));
    const int resolution = static_cast<int>(field("resolution"));

    Dataset ds;
    ds.n_classes = n_shapes;
    ds.resolution = resolution;
    std::ifstream fi(stem + ".images.f32", std::ios::binary);
    std::ifstream fl(stem + ".labels.i32", std::ios::binary);
    std::ifstream fn(stem + ".nuisance.i32", std::ios::binary);
    if (!fi || !fl || !fn) throw std::runtime_error("toyset: missing tensor files for " + stem);
    for (int64_t i = 0; i < count; ++i) {
        ImageRecord rec;
        rec.pixels = Tensor<float>({3, resolution, resolution});
        fi.read(reinterpret_cast<char*>(rec.pixels.data()),
                static_cast<std::streamsize>(rec.pixels.numel() * sizeof(float)));
        int32_t lab = 0, nui = 0;
        fl.read(reinterpret_cast<char*>(&lab), sizeof(int32_t));
        fn.read(reinterpret_cast<char*>(&nui), sizeof(int32_t));
        if (!fi || !fl || !fn) throw std::runtime_error("toyset: truncated tensors for " + stem);
        rec.label = lab;
        rec.nuisance = nui;
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace cdgc
