#pragma once

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>

#include "mpox/core/digest.hpp"
#include "mpox/core/image.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/data/manifest.hpp"

namespace mpox {

/// Stand-in for the real photographs: skin-toned backgrounds with
/// class-specific lesion patterns. Used by tests, samples and the acceptance
/// run whenever the real dataset is absent.
struct SyntheticOptions {
    int per_class = 100;
    int size = 96;
    std::uint64_t seed = 2024;
};

namespace detail {

inline void stamp_disc(ImageTensor& img, double cy, double cx, double radius, const float rgb[3], double softness) {
    const int y0 = std::max(0, static_cast<int>(cy - radius - 2)), y1 = std::min(img.height() - 1, static_cast<int>(cy + radius + 2));
    const int x0 = std::max(0, static_cast<int>(cx - radius - 2)), x1 = std::min(img.width() - 1, static_cast<int>(cx + radius + 2));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(y - cy, x - cx);
            const double w = std::clamp((radius - d) / softness + 0.5, 0.0, 1.0);
            if (w <= 0.0) continue;
            float* p = img.pixel(y, x);
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>((1.0 - w) * p[c] + w * rgb[c]);
        }
}

}  // namespace detail

inline ImageTensor synthetic_image(ClassLabel label, int size, Rng& rng) {
    ImageTensor img(size, size, 3);
    const float base[3] = {static_cast<float>(rng.uniform(170, 225)), static_cast<float>(rng.uniform(120, 170)),
                           static_cast<float>(rng.uniform(95, 140))};
    const double gy = rng.uniform(-0.3, 0.3), gx = rng.uniform(-0.3, 0.3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            float* p = img.pixel(y, x);
            const double shade = 1.0 + gy * (y - size / 2.0) / size + gx * (x - size / 2.0) / size;
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(base[c] * shade + rng.normal(0.0, 4.0));
        }
    const double s = size / 96.0;
    switch (label) {
        case ClassLabel::mpox: {  // a few large umbilicated pustules
            const int n = rng.uniform_int(2, 4);
            for (int i = 0; i < n; ++i) {
                const double cy = rng.uniform(0.2, 0.8) * size, cx = rng.uniform(0.2, 0.8) * size;
                const double r = rng.uniform(9, 14) * s;
                const float rim[3] = {205, 95, 85}, body[3] = {235, 225, 195}, core[3] = {90, 55, 45};
                detail::stamp_disc(img, cy, cx, r * 1.25, rim, 2.0 * s);
                detail::stamp_disc(img, cy, cx, r, body, 1.5 * s);
                detail::stamp_disc(img, cy, cx, r * 0.35, core, 1.0 * s);
            }
            break;
        }
        case ClassLabel::chickenpox: {  // many small red vesicles
            const int n = rng.uniform_int(14, 22);
            for (int i = 0; i < n; ++i) {
                const double cy = rng.uniform(0.05, 0.95) * size, cx = rng.uniform(0.05, 0.95) * size;
                const double r = rng.uniform(2.5, 4.5) * s;
                const float red[3] = {200, 60, 60}, clear[3] = {240, 190, 180};
                detail::stamp_disc(img, cy, cx, r * 1.5, red, 1.0 * s);
                detail::stamp_disc(img, cy, cx, r * 0.6, clear, 1.0 * s);
            }
            break;
        }
        case ClassLabel::acne: {  // clustered inflamed papules with white heads
            const double ccy = rng.uniform(0.3, 0.7) * size, ccx = rng.uniform(0.3, 0.7) * size;
            const int n = rng.uniform_int(6, 10);
            for (int i = 0; i < n; ++i) {
                const double cy = ccy + rng.normal(0.0, 0.15 * size), cx = ccx + rng.normal(0.0, 0.15 * size);
                const double r = rng.uniform(4, 7) * s;
                const float red[3] = {170, 50, 55}, head[3] = {250, 245, 225};
                detail::stamp_disc(img, cy, cx, r, red, 3.0 * s);
                detail::stamp_disc(img, cy, cx, r * 0.3, head, 0.8 * s);
            }
            break;
        }
        case ClassLabel::healthy: {  // pores and fine texture only
            const int n = rng.uniform_int(20, 40);
            for (int i = 0; i < n; ++i) {
                const float pore[3] = {base[0] * 0.85f, base[1] * 0.8f, base[2] * 0.8f};
                detail::stamp_disc(img, rng.uniform(0, size), rng.uniform(0, size), 0.8 * s, pore, 0.8);
            }
            break;
        }
    }
    for (auto& v : img.values()) v = std::round(std::clamp(v, 0.0f, 255.0f));
    return img;
}

/// Writes `<dir>/images/<label>/<id>.png` and `<dir>/manifest.csv`, returning the
/// loaded manifest. Deterministic for a given seed.
inline DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& opt = {}) {
    require(opt.per_class >= 1 && opt.size >= 8, ErrorCode::invalid_argument, "synthetic dataset too small");
    std::ostringstream csv;
    csv << "id,path,label,source,sha256\n";
    for (int li = 0; li < kMulticlassCount; ++li) {
        const auto label = static_cast<ClassLabel>(li);
        const std::string name = lowercase(to_string(label));
        std::filesystem::create_directories(dir / "images" / name);
        for (int i = 0; i < opt.per_class; ++i) {
            Rng rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(li), static_cast<std::uint64_t>(i)}));
            const auto bytes = encode_image(synthetic_image(label, opt.size, rng), ".png");
            std::ostringstream id;
            id << name << "_" << std::setw(3) << std::setfill('0') << i;
            const std::string rel = "images/" + name + "/" + id.str() + ".png";
            write_file_bytes((dir / rel).string(), bytes);
            csv << id.str() << ',' << rel << ',' << to_string(label) << ",synthetic," << sha256_hex(bytes) << '\n';
        }
    }
    write_text_file((dir / "manifest.csv").string(), csv.str());
    return load_manifest(dir / "manifest.csv");
}

}  // namespace mpox
