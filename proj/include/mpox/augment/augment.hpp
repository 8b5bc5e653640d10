#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/image.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/core/tensor.hpp"

namespace mpox {

enum class FlipType : int { vertical = 0, horizontal = 1, both = 2 };

/// Per-image outcome of the flip stage.
enum class FlipOutcome : int { none = 0, vertical = 1, horizontal = 2, both = 3 };

/// Training-time augmentation factors. Each continuous factor is the half-width
/// of a symmetric uniform draw, as a fraction of the transform's full scale.
struct AugmentConfig {
    double rotation = 0.0;    ///< fraction of a full turn: 0.2 -> +-72 degrees
    double zoom = 0.0;
    double contrast = 0.0;
    double brightness = 0.0;  ///< fraction of the 0..255 pixel range
    double tr_width = 0.0;    ///< fraction of image width
    double tr_height = 0.0;   ///< fraction of image height
    FlipType flip_type = FlipType::horizontal;

    void validate() const {
        const std::array<std::pair<const char*, double>, 6> factors{{{"rotation", rotation},
                                                                     {"zoom", zoom},
                                                                     {"contrast", contrast},
                                                                     {"brightness", brightness},
                                                                     {"tr_width", tr_width},
                                                                     {"tr_height", tr_height}}};
        for (const auto& [name, v] : factors)
            require(std::isfinite(v) && v >= 0.0 && v <= 0.5, ErrorCode::invalid_argument,
                    std::string("augmentation factor ") + name + " must lie in [0, 0.5]");
        const int f = static_cast<int>(flip_type);
        require(f >= 0 && f <= 2, ErrorCode::invalid_argument, "flip_type must be 0, 1 or 2");
    }

    bool operator==(const AugmentConfig&) const = default;
};

inline nlohmann::json to_json(const AugmentConfig& a) {
    return {{"rotation", a.rotation},     {"zoom", a.zoom},         {"contrast", a.contrast},
            {"brightness", a.brightness}, {"tr_width", a.tr_width}, {"tr_height", a.tr_height},
            {"flip_type", static_cast<int>(a.flip_type)}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
    AugmentConfig a;
    a.rotation = j.at("rotation").get<double>();
    a.zoom = j.at("zoom").get<double>();
    a.contrast = j.at("contrast").get<double>();
    a.brightness = j.at("brightness").get<double>();
    a.tr_width = j.at("tr_width").get<double>();
    a.tr_height = j.at("tr_height").get<double>();
    a.flip_type = static_cast<FlipType>(j.at("flip_type").get<int>());
    a.validate();
    return a;
}

/// Parameters drawn for one image.
struct AugmentDraw {
    FlipOutcome flip = FlipOutcome::none;
    double angle = 0.0;  ///< radians
    double dx = 0.0;     ///< fraction of width
    double dy = 0.0;     ///< fraction of height
    double zoom = 0.0;
    double contrast = 0.0;
    double brightness = 0.0;
};

inline constexpr float kPixelMax = 255.0f;

inline ImageTensor flip_vertical(const ImageTensor& img) {
    ImageTensor out(img.shape());
    const std::size_t row = static_cast<std::size_t>(img.width()) * img.channels();
    for (int y = 0; y < img.height(); ++y) std::copy_n(img.pixel(img.height() - 1 - y, 0), row, out.pixel(y, 0));
    return out;
}

inline ImageTensor flip_horizontal(const ImageTensor& img) {
    ImageTensor out(img.shape());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            std::copy_n(img.pixel(y, img.width() - 1 - x), img.channels(), out.pixel(y, x));
    return out;
}

inline ImageTensor apply_flip(const ImageTensor& img, FlipOutcome outcome) {
    switch (outcome) {
        case FlipOutcome::none: return img;
        case FlipOutcome::vertical: return flip_vertical(img);
        case FlipOutcome::horizontal: return flip_horizontal(img);
        case FlipOutcome::both: return flip_horizontal(flip_vertical(img));
    }
    return img;
}

/// Vertical and horizontal modes mirror unconditionally; "both" draws one of
/// the four outcomes uniformly.
inline FlipOutcome draw_flip_mode(FlipType mode, Rng& rng) {
    switch (mode) {
        case FlipType::vertical: return FlipOutcome::vertical;
        case FlipType::horizontal: return FlipOutcome::horizontal;
        case FlipType::both: return static_cast<FlipOutcome>(rng.uniform_int(0, 3));
    }
    return FlipOutcome::none;
}

inline ImageTensor flip(const ImageTensor& img, FlipType mode, Rng& rng) {
    return apply_flip(img, draw_flip_mode(mode, rng));
}

namespace detail {

inline void clip_pixels(ImageTensor& img) {
    for (auto& v : img.values()) v = std::clamp(v, 0.0f, kPixelMax);
}

/// Inverse-map warp: output pixel (x, y) samples the source at
/// centre + A * ((x, y) - centre) + shift, bilinear with reflective fill.
inline ImageTensor warp(const ImageTensor& img, double a00, double a01, double a10, double a11, double shift_x,
                        double shift_y) {
    ImageTensor out(img.shape());
    const double cx = (img.width() - 1) / 2.0;
    const double cy = (img.height() - 1) / 2.0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const double ox = x - cx, oy = y - cy;
            const double sx = cx + a00 * ox + a01 * oy + shift_x;
            const double sy = cy + a10 * ox + a11 * oy + shift_y;
            sample_bilinear_reflect(img, sy, sx, out.pixel(y, x));
        }
    detail::clip_pixels(out);
    return out;
}

}  // namespace detail

/// Rotate about the image centre by `angle` radians (counter-clockwise in
/// image coordinates with y pointing down), reflective fill.
inline ImageTensor rotate(const ImageTensor& img, double angle) {
    if (angle == 0.0) return img;
    const double c = std::cos(angle), s = std::sin(angle);
    return detail::warp(img, c, s, -s, c, 0.0, 0.0);
}

/// Shift content by (dx * W, dy * H) pixels, reflective fill.
inline ImageTensor translate(const ImageTensor& img, double dx, double dy) {
    if (dx == 0.0 && dy == 0.0) return img;
    return detail::warp(img, 1.0, 0.0, 0.0, 1.0, -dx * img.width(), -dy * img.height());
}

/// Rescale about the centre: the output frame shows (1 + factor) times the
/// source extent, so negative factors zoom in and positive ones zoom out.
inline ImageTensor zoom(const ImageTensor& img, double factor) {
    if (factor == 0.0) return img;
    const double s = 1.0 + factor;
    return detail::warp(img, s, 0.0, 0.0, s, 0.0, 0.0);
}

/// Scale each channel's deviation from its mean by (1 + factor).
inline ImageTensor adjust_contrast(const ImageTensor& img, double factor) {
    if (factor == 0.0) return img;
    ImageTensor out = img;
    const auto n = static_cast<double>(img.height()) * img.width();
    for (int ch = 0; ch < img.channels(); ++ch) {
        double mean = 0.0;
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) mean += img.at(y, x, ch);
        mean /= n;
        const auto m = static_cast<float>(mean);
        const auto gain = static_cast<float>(1.0 + factor);
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) out.at(y, x, ch) = m + (img.at(y, x, ch) - m) * gain;
    }
    detail::clip_pixels(out);
    return out;
}

/// Add factor * 255 to every pixel.
inline ImageTensor adjust_brightness(const ImageTensor& img, double factor) {
    if (factor == 0.0) return img;
    ImageTensor out = img;
    const auto delta = static_cast<float>(factor * kPixelMax);
    for (auto& v : out.values()) v += delta;
    detail::clip_pixels(out);
    return out;
}

namespace detail {
inline double symmetric_draw(Rng& rng, double half_width) { return -half_width + 2.0 * half_width * rng.uniform01(); }
}  // namespace detail

/// Draw every parameter in a fixed order. The flip stage flips with
/// probability 1/2 along the configured axis; "both" picks one of four.
inline AugmentDraw draw_augmentation(const AugmentConfig& config, Rng& rng) {
    AugmentDraw d;
    switch (config.flip_type) {
        case FlipType::vertical: d.flip = rng.bernoulli(0.5) ? FlipOutcome::vertical : FlipOutcome::none; break;
        case FlipType::horizontal: d.flip = rng.bernoulli(0.5) ? FlipOutcome::horizontal : FlipOutcome::none; break;
        case FlipType::both: d.flip = draw_flip_mode(FlipType::both, rng); break;
    }
    d.angle = detail::symmetric_draw(rng, config.rotation) * 2.0 * std::numbers::pi;
    d.dx = detail::symmetric_draw(rng, config.tr_width);
    d.dy = detail::symmetric_draw(rng, config.tr_height);
    d.zoom = detail::symmetric_draw(rng, config.zoom);
    d.contrast = detail::symmetric_draw(rng, config.contrast);
    d.brightness = detail::symmetric_draw(rng, config.brightness);
    return d;
}

/// Apply a concrete draw: flip, rotation, translation, zoom, contrast, brightness.
inline ImageTensor apply_augmentation(const ImageTensor& img, const AugmentDraw& d) {
    ImageTensor out = apply_flip(img, d.flip);
    out = rotate(out, d.angle);
    out = translate(out, d.dx, d.dy);
    out = zoom(out, d.zoom);
    out = adjust_contrast(out, d.contrast);
    return adjust_brightness(out, d.brightness);
}

inline ImageTensor augment(const ImageTensor& img, const AugmentConfig& config, Rng& rng) {
    require(img.channels() == 3, ErrorCode::invalid_argument, "augment expects an H x W x 3 image");
    return apply_augmentation(img, draw_augmentation(config, rng));
}

}  // namespace mpox
