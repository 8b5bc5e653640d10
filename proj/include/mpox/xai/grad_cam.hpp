#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/image.hpp"
#include "mpox/model/model.hpp"

namespace mpox::xai {

struct GradCamResult {
    Tensor heatmap;       ///< H x W x 1 in [0,1], model input resolution
    Tensor raw;           ///< h x w x 1 rectified map at feature resolution
    std::vector<float> alpha;  ///< pooled gradient weight per channel
    int target_class = 0;
    std::string layer;
    std::vector<double> probabilities;
};

struct GradCamOptions {
    std::string layer;  ///< empty: last convolution feeding the output
};

/// Min-max normalise to [0,1]; a constant map becomes all zeros.
inline void min_max_normalize(Tensor& t) {
    if (t.empty()) return;
    const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
    const float mn = *lo, mx = *hi;
    if (!(mx > mn)) {
        t.fill(0.0f);
        return;
    }
    // divide rather than multiply by a reciprocal so the maximum maps to exactly 1
    const float range = mx - mn;
    for (auto& v : t.values()) v = (v - mn) / range;
}

/// Gradients are taken of the pre-softmax score of `target_class`, through the
/// head and the global average pool back to the chosen layer.
inline GradCamResult grad_cam(const TrainedModel& model, const Tensor& normalized, int target_class,
                              const GradCamOptions& opt = {}) {
    require(model.backbone != nullptr, ErrorCode::invalid_argument, "model has no backbone");
    const auto& graph = model.backbone->graph;
    require(target_class >= 0 && target_class < model.head.classes(), ErrorCode::invalid_argument,
            "target class " + std::to_string(target_class) + " is not valid for a " +
                std::to_string(model.head.classes()) + "-class model");
    require(normalized.shape() == graph.input_shape(), ErrorCode::invalid_argument,
            "input shape " + normalized.shape().str() + " does not match " + graph.input_shape().str());
    const int target = opt.layer.empty() ? graph.last_conv_layer() : graph.layer_index(opt.layer);

    const auto trace = graph.forward_trace(normalized);
    const Tensor& fmap = trace.outputs[static_cast<std::size_t>(graph.output_index())];
    const auto embedding = Backbone::global_average(fmap);
    RowVectorF x(static_cast<Eigen::Index>(embedding.size()));
    for (std::size_t i = 0; i < embedding.size(); ++i) x(static_cast<Eigen::Index>(i)) = embedding[i];

    GradCamResult res;
    res.target_class = target_class;
    res.layer = graph.layer(target).name;
    res.probabilities = predict_embedding(model, embedding);

    const RowVectorF g_embed = model.head.logit_gradient(x, target_class);
    Tensor g_out(fmap.shape());
    const float inv_area = 1.0f / static_cast<float>(fmap.height() * fmap.width());
    for (int y = 0; y < fmap.height(); ++y)
        for (int xx = 0; xx < fmap.width(); ++xx)
            for (int c = 0; c < fmap.channels(); ++c) g_out.at(y, xx, c) = g_embed(c) * inv_area;

    const Tensor grads = graph.backward_to(trace, target, g_out);
    const Tensor& act = trace.outputs[static_cast<std::size_t>(target)];
    const int H = act.height(), W = act.width(), C = act.channels();
    res.alpha.assign(static_cast<std::size_t>(C), 0.0f);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            for (int c = 0; c < C; ++c) res.alpha[static_cast<std::size_t>(c)] += grads.at(y, xx, c);
    for (auto& a : res.alpha) a /= static_cast<float>(H * W);

    res.raw = Tensor(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
            double s = 0.0;
            const float* a = act.pixel(y, xx);
            for (int c = 0; c < C; ++c) s += static_cast<double>(res.alpha[static_cast<std::size_t>(c)]) * a[c];
            res.raw.at(y, xx, 0) = static_cast<float>(std::max(s, 0.0));
        }
    const auto in = graph.input_shape();
    res.heatmap = resize_bilinear(res.raw, in.h, in.w);
    min_max_normalize(res.heatmap);
    return res;
}

enum class Colormap { inferno, turbo, jet };

inline Colormap parse_colormap(const std::string& s) {
    if (s == "inferno") return Colormap::inferno;
    if (s == "turbo") return Colormap::turbo;
    if (s == "jet") return Colormap::jet;
    fail(ErrorCode::invalid_argument, "unknown colormap '" + s + "' (inferno, turbo, jet)");
}

inline const char* to_string(Colormap c) {
    switch (c) {
        case Colormap::inferno: return "inferno";
        case Colormap::turbo: return "turbo";
        case Colormap::jet: return "jet";
    }
    return "unknown";
}

/// 256-entry RGB table; index 0 is the cold end, 255 the warm end.
inline std::array<std::array<float, 3>, 256> colormap_table(Colormap cm) {
    cv::Mat ramp(256, 1, CV_8UC1);
    for (int i = 0; i < 256; ++i) ramp.at<std::uint8_t>(i) = static_cast<std::uint8_t>(i);
    cv::Mat bgr;
    const int id = cm == Colormap::inferno ? cv::COLORMAP_INFERNO : cm == Colormap::turbo ? cv::COLORMAP_TURBO : cv::COLORMAP_JET;
    cv::applyColorMap(ramp, bgr, id);
    std::array<std::array<float, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
        const auto& px = bgr.at<cv::Vec3b>(i);
        t[static_cast<std::size_t>(i)] = {static_cast<float>(px[2]), static_cast<float>(px[1]), static_cast<float>(px[0])};
    }
    return t;
}

/// Heatmap as an RGB colour image.
inline ImageTensor colorize(const Tensor& heatmap, Colormap cm = Colormap::inferno) {
    require(heatmap.channels() == 1, ErrorCode::invalid_argument, "heatmap must have one channel");
    const auto table = colormap_table(cm);
    ImageTensor out(heatmap.height(), heatmap.width(), 3);
    for (int y = 0; y < heatmap.height(); ++y)
        for (int x = 0; x < heatmap.width(); ++x) {
            const float v = std::clamp(heatmap.at(y, x, 0), 0.0f, 1.0f);
            const auto& rgb = table[static_cast<std::size_t>(std::lround(v * 255.0f))];
            std::copy(rgb.begin(), rgb.end(), out.pixel(y, x));
        }
    return out;
}

/// alpha * colormap(heatmap) + (1 - alpha) * original, clipped to [0,255]. The
/// heatmap is resized to the original's dimensions first.
inline ImageTensor overlay(const ImageTensor& original, const Tensor& heatmap, double alpha,
                           Colormap cm = Colormap::inferno) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::invalid_argument, "overlay alpha must lie in [0,1]");
    require(original.channels() == 3, ErrorCode::invalid_argument, "overlay expects an RGB image");
    Tensor hm = heatmap;
    if (hm.height() != original.height() || hm.width() != original.width())
        hm = resize_bilinear(heatmap, original.height(), original.width());
    const ImageTensor colors = colorize(hm, cm);
    ImageTensor out(original.shape());
    const float a = static_cast<float>(alpha);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::clamp(a * colors.data()[i] + (1.0f - a) * original.data()[i], 0.0f, 255.0f);
    return out;
}

/// Grayscale PNG of the heatmap scaled to 0..255.
inline std::vector<std::uint8_t> encode_heatmap(const Tensor& heatmap) {
    Tensor scaled(heatmap.shape());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] = heatmap.data()[i] * 255.0f;
    return encode_image(scaled, ".png");
}

}  // namespace mpox::xai
