#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "mpox/core/image.hpp"
#include "mpox/core/tensor.hpp"

namespace mpox {

/// Pixel normalisation expected by a backbone.
enum class ValueRange {
    raw255,     ///< identity, [0, 255] (MobileNetV3 rescales internally)
    unit,       ///< x / 255
    symmetric,  ///< x / 127.5 - 1 (Inception / NASNet convention)
    caffe,      ///< RGB -> BGR, minus the ImageNet channel means (VGG convention)
};

inline const char* to_string(ValueRange v) {
    switch (v) {
        case ValueRange::raw255: return "raw255";
        case ValueRange::unit: return "unit";
        case ValueRange::symmetric: return "symmetric";
        case ValueRange::caffe: return "caffe";
    }
    return "raw255";
}

inline ValueRange parse_value_range(const std::string& s) {
    if (s == "raw255") return ValueRange::raw255;
    if (s == "unit") return ValueRange::unit;
    if (s == "symmetric") return ValueRange::symmetric;
    if (s == "caffe") return ValueRange::caffe;
    fail(ErrorCode::parse, "unknown value range '" + s + "'");
}

struct PreprocessConfig {
    int target_height = 224;
    int target_width = 224;
    ValueRange value_range = ValueRange::raw255;
    std::optional<Rect> crop;
};

/// Map [0, 255] RGB pixels into the backbone's input convention.
inline Tensor normalize(ImageTensor img, ValueRange range) {
    switch (range) {
        case ValueRange::raw255:
            break;
        case ValueRange::unit:
            for (auto& v : img.values()) v /= 255.0f;
            break;
        case ValueRange::symmetric:
            for (auto& v : img.values()) v = v / 127.5f - 1.0f;
            break;
        case ValueRange::caffe: {
            require(img.channels() == 3, ErrorCode::invalid_argument, "caffe normalisation needs RGB input");
            constexpr float mean_bgr[3] = {103.939f, 116.779f, 123.68f};
            for (int y = 0; y < img.height(); ++y)
                for (int x = 0; x < img.width(); ++x) {
                    float* p = img.pixel(y, x);
                    const float r = p[0], g = p[1], b = p[2];
                    p[0] = b - mean_bgr[0];
                    p[1] = g - mean_bgr[1];
                    p[2] = r - mean_bgr[2];
                }
            break;
        }
    }
    return img;
}

/// Crop (if requested), resize to the target size, normalise. Deterministic.
inline Tensor preprocess_image(const ImageTensor& decoded, const PreprocessConfig& config) {
    require(config.target_height > 0 && config.target_width > 0, ErrorCode::invalid_argument,
            "target dimensions must be positive");
    const ImageTensor cropped = config.crop ? crop(decoded, *config.crop) : decoded;
    return normalize(resize_bilinear(cropped, config.target_height, config.target_width), config.value_range);
}

inline Tensor preprocess_image(std::span<const std::uint8_t> bytes, const PreprocessConfig& config) {
    return preprocess_image(decode_image(bytes), config);
}

}  // namespace mpox
