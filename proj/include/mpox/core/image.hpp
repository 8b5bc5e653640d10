#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/tensor.hpp"

namespace mpox {

/// Axis-aligned rectangle in source-pixel coordinates.
struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const Rect&) const = default;
    bool within(int width, int height) const {
        return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= width && y + h <= height;
    }
};

/// Decode JPEG/PNG (or anything OpenCV reads) into an RGB tensor with values in [0, 255].
inline ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) fail(ErrorCode::decode, "empty image payload");
    cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat bgr;
    try {
        bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        fail(ErrorCode::decode, std::string("image decode failed: ") + e.what());
    }
    if (bgr.empty()) fail(ErrorCode::decode, "payload is not a decodable image");
    ImageTensor out(bgr.rows, bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<std::uint8_t>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            float* px = out.pixel(y, x);
            px[0] = row[3 * x + 2];
            px[1] = row[3 * x + 1];
            px[2] = row[3 * x + 0];
        }
    }
    return out;
}

/// Encode an RGB tensor (values clamped to [0, 255]) as PNG or JPEG bytes.
inline std::vector<std::uint8_t> encode_image(const ImageTensor& img, const std::string& ext = ".png") {
    require(img.channels() == 3 || img.channels() == 1, ErrorCode::invalid_argument,
            "encode_image expects 1 or 3 channels");
    cv::Mat mat(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width(); ++x) {
            const float* px = img.pixel(y, x);
            auto q = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f))); };
            if (img.channels() == 3) {
                row[3 * x + 0] = q(px[2]);
                row[3 * x + 1] = q(px[1]);
                row[3 * x + 2] = q(px[0]);
            } else {
                row[x] = q(px[0]);
            }
        }
    }
    std::vector<std::uint8_t> out;
    if (!cv::imencode(ext, mat, out)) fail(ErrorCode::io, "image encode failed for " + ext);
    return out;
}

inline ImageTensor crop(const ImageTensor& img, const Rect& r) {
    if (!r.within(img.width(), img.height()))
        fail(ErrorCode::out_of_range, "crop rectangle (" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                                          std::to_string(r.w) + "," + std::to_string(r.h) +
                                          ") outside image " + std::to_string(img.width()) + "x" +
                                          std::to_string(img.height()));
    ImageTensor out(r.h, r.w, img.channels());
    for (int y = 0; y < r.h; ++y)
        std::copy_n(img.pixel(r.y + y, r.x), static_cast<std::size_t>(r.w) * img.channels(), out.pixel(y, 0));
    return out;
}

/// Symmetric reflection of an out-of-range coordinate: (c b a | a b c | c b a).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

/// Bilinear sample at continuous pixel-centre coordinates with reflective fill.
inline void sample_bilinear_reflect(const ImageTensor& img, double sy, double sx, float* out) {
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const float fy = static_cast<float>(sy - y0);
    const float fx = static_cast<float>(sx - x0);
    const int ya = reflect_index(y0, img.height()), yb = reflect_index(y0 + 1, img.height());
    const int xa = reflect_index(x0, img.width()), xb = reflect_index(x0 + 1, img.width());
    const float* p00 = img.pixel(ya, xa);
    const float* p01 = img.pixel(ya, xb);
    const float* p10 = img.pixel(yb, xa);
    const float* p11 = img.pixel(yb, xb);
    for (int c = 0; c < img.channels(); ++c) {
        const float top = p00[c] + (p01[c] - p00[c]) * fx;
        const float bot = p10[c] + (p11[c] - p10[c]) * fx;
        out[c] = top + (bot - top) * fy;
    }
}

/// Bilinear resize with half-pixel centres and edge clamping (the OpenCV
/// INTER_LINEAR convention for float images).
inline Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
    require(out_h > 0 && out_w > 0, ErrorCode::invalid_argument, "resize target must be positive");
    if (src.height() == out_h && src.width() == out_w) return src;
    Tensor out(out_h, out_w, src.channels());
    const double sy_scale = static_cast<double>(src.height()) / out_h;
    const double sx_scale = static_cast<double>(src.width()) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * sy_scale - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        float fy = static_cast<float>(sy - y0);
        if (y0 < 0) { y0 = 0; fy = 0.0f; }
        if (y0 >= src.height() - 1) { y0 = src.height() - 1; fy = 0.0f; }
        const int y1 = std::min(y0 + 1, src.height() - 1);
        for (int x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * sx_scale - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            float fx = static_cast<float>(sx - x0);
            if (x0 < 0) { x0 = 0; fx = 0.0f; }
            if (x0 >= src.width() - 1) { x0 = src.width() - 1; fx = 0.0f; }
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const float* p00 = src.pixel(y0, x0);
            const float* p01 = src.pixel(y0, x1);
            const float* p10 = src.pixel(y1, x0);
            const float* p11 = src.pixel(y1, x1);
            float* o = out.pixel(y, x);
            for (int c = 0; c < src.channels(); ++c) {
                const float top = p00[c] * (1.0f - fx) + p01[c] * fx;
                const float bot = p10[c] * (1.0f - fx) + p11[c] * fx;
                o[c] = top * (1.0f - fy) + bot * fy;
            }
        }
    }
    return out;
}

}  // namespace mpox
