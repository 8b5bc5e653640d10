#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/core/tensor.hpp"
#include "mpox/data/preprocess.hpp"
#include "mpox/nn/container.hpp"

namespace mpox::nn {

// The runtime interprets the Keras layer set used by the five supported
// backbones. Layer semantics (padding arithmetic, activation definitions,
// pooling of padded windows) follow Keras/TensorFlow exactly.

enum class LayerType {
    input,
    conv2d,
    depthwise_conv2d,
    separable_conv2d,
    batch_norm,
    activation,
    relu,
    add,
    multiply,
    concatenate,
    global_avg_pool,
    max_pool,
    avg_pool,
    zero_pad,
    crop,
    rescaling,
    custom_scale,
    scalar_add,
    scalar_multiply,
};

enum class Activation { linear, relu, relu6, hard_sigmoid, hard_silu, sigmoid, silu, tanh };

enum class Padding { same, valid };

inline LayerType parse_layer_type(const std::string& s) {
    static const std::map<std::string, LayerType> table{
        {"InputLayer", LayerType::input},
        {"Conv2D", LayerType::conv2d},
        {"DepthwiseConv2D", LayerType::depthwise_conv2d},
        {"SeparableConv2D", LayerType::separable_conv2d},
        {"BatchNormalization", LayerType::batch_norm},
        {"Activation", LayerType::activation},
        {"ReLU", LayerType::relu},
        {"Add", LayerType::add},
        {"Multiply", LayerType::multiply},
        {"Concatenate", LayerType::concatenate},
        {"GlobalAveragePooling2D", LayerType::global_avg_pool},
        {"MaxPooling2D", LayerType::max_pool},
        {"AveragePooling2D", LayerType::avg_pool},
        {"ZeroPadding2D", LayerType::zero_pad},
        {"Cropping2D", LayerType::crop},
        {"Rescaling", LayerType::rescaling},
        {"CustomScaleLayer", LayerType::custom_scale},
        {"ScalarAdd", LayerType::scalar_add},
        {"ScalarMultiply", LayerType::scalar_multiply},
    };
    auto it = table.find(s);
    if (it == table.end()) fail(ErrorCode::unsupported, "unsupported layer type '" + s + "'");
    return it->second;
}

inline Activation parse_activation(const std::string& s) {
    if (s == "linear" || s.empty() || s == "null") return Activation::linear;
    if (s == "relu") return Activation::relu;
    if (s == "relu6") return Activation::relu6;
    if (s == "hard_sigmoid") return Activation::hard_sigmoid;
    if (s == "hard_silu" || s == "hard_swish") return Activation::hard_silu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "silu" || s == "swish") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    fail(ErrorCode::unsupported, "unsupported activation '" + s + "'");
}

inline float activate(float x, Activation a) {
    switch (a) {
        case Activation::linear: return x;
        case Activation::relu: return x > 0.0f ? x : 0.0f;
        case Activation::relu6: return std::clamp(x, 0.0f, 6.0f);
        case Activation::hard_sigmoid: return std::clamp(x + 3.0f, 0.0f, 6.0f) / 6.0f;
        case Activation::hard_silu: return x * std::clamp(x + 3.0f, 0.0f, 6.0f) / 6.0f;
        case Activation::sigmoid: return 1.0f / (1.0f + std::exp(-x));
        case Activation::silu: return x / (1.0f + std::exp(-x));
        case Activation::tanh: return std::tanh(x);
    }
    return x;
}

/// d activate(x) / dx, evaluated at the pre-activation value.
inline float activate_grad(float x, Activation a) {
    switch (a) {
        case Activation::linear: return 1.0f;
        case Activation::relu: return x > 0.0f ? 1.0f : 0.0f;
        case Activation::relu6: return (x > 0.0f && x < 6.0f) ? 1.0f : 0.0f;
        case Activation::hard_sigmoid: return (x > -3.0f && x < 3.0f) ? 1.0f / 6.0f : 0.0f;
        case Activation::hard_silu:
            if (x < -3.0f) return 0.0f;
            if (x > 3.0f) return 1.0f;
            return (2.0f * x + 3.0f) / 6.0f;
        case Activation::sigmoid: {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f - s);
        }
        case Activation::silu: {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s + x * s * (1.0f - s);
        }
        case Activation::tanh: {
            const float t = std::tanh(x);
            return 1.0f - t * t;
        }
    }
    return 1.0f;
}

struct Layer {
    std::string name;
    LayerType type = LayerType::input;
    std::string type_name;
    std::vector<int> inputs;
    nlohmann::json config = nlohmann::json::object();

    int filters = 0;
    int kh = 1, kw = 1, sh = 1, sw = 1, dh = 1, dw = 1;
    int depth_multiplier = 1;
    Padding padding = Padding::valid;
    Activation act = Activation::linear;
    std::array<int, 4> pads{0, 0, 0, 0};  ///< top, bottom, left, right
    bool keepdims = false;
    float scale = 1.0f, offset = 0.0f, value = 0.0f, epsilon = 1e-3f;
    float max_value = std::numeric_limits<float>::infinity();
    float negative_slope = 0.0f, threshold = 0.0f;

    std::map<std::string, std::vector<float>> weights;
    std::map<std::string, std::vector<int>> weight_shapes;

    std::vector<float> bn_scale, bn_shift;  ///< folded batch-norm affine
    Shape3 out_shape{};

    const std::vector<float>& w(const std::string& key) const {
        auto it = weights.find(key);
        if (it == weights.end()) fail(ErrorCode::parse, "layer " + name + " lacks weight '" + key + "'");
        return it->second;
    }
    const float* bias() const {
        auto it = weights.find("bias");
        return it == weights.end() ? nullptr : it->second.data();
    }
    bool is_convolution() const {
        return type == LayerType::conv2d || type == LayerType::depthwise_conv2d || type == LayerType::separable_conv2d;
    }
};

namespace ops {

struct Window {
    int out = 0;
    int pad_before = 0;
};

/// TensorFlow output size / leading pad for one spatial axis.
inline Window window(int in, int k, int stride, int dilation, Padding padding) {
    const int eff = (k - 1) * dilation + 1;
    if (padding == Padding::valid) {
        require(in >= eff, ErrorCode::invalid_argument, "input smaller than the kernel window");
        return {(in - eff) / stride + 1, 0};
    }
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + eff - in, 0);
    return {out, total / 2};
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

inline constexpr int kIm2colChunk = 2048;

struct ConvGeometry {
    int kh, kw, sh, sw, dh, dw;
    Window wy, wx;
};

inline ConvGeometry conv_geometry(const Layer& L, const Shape3& in) {
    return {L.kh, L.kw, L.sh, L.sw, L.dh, L.dw, window(in.h, L.kh, L.sh, L.dh, L.padding),
            window(in.w, L.kw, L.sw, L.dw, L.padding)};
}

/// Dense convolution, kernel laid out (kh, kw, cin, cout). Pre-activation output.
inline Tensor conv2d(const Tensor& in, const float* kernel, const float* bias, int cout, const ConvGeometry& g) {
    const int cin = in.channels();
    const int oh = g.wy.out, ow = g.wx.out;
    const int K = g.kh * g.kw * cin;
    Tensor out(oh, ow, cout);
    ConstRowMap kmat(kernel, K, cout);
    const bool pointwise = g.kh == 1 && g.kw == 1 && g.sh == 1 && g.sw == 1 && g.wy.pad_before == 0 &&
                           g.wx.pad_before == 0 && oh == in.height() && ow == in.width();
    if (pointwise) {
        RowMap(out.data(), oh * ow, cout).noalias() = ConstRowMap(in.data(), oh * ow, cin) * kmat;
    } else {
        const int total = oh * ow;
        std::vector<float> cols(static_cast<std::size_t>(std::min(total, kIm2colChunk)) * K);
        for (int start = 0; start < total; start += kIm2colChunk) {
            const int rows = std::min(kIm2colChunk, total - start);
            for (int r = 0; r < rows; ++r) {
                const int oy = (start + r) / ow, ox = (start + r) % ow;
                float* dst = cols.data() + static_cast<std::size_t>(r) * K;
                for (int ky = 0; ky < g.kh; ++ky) {
                    const int iy = oy * g.sh - g.wy.pad_before + ky * g.dh;
                    for (int kx = 0; kx < g.kw; ++kx, dst += cin) {
                        const int ix = ox * g.sw - g.wx.pad_before + kx * g.dw;
                        if (iy < 0 || iy >= in.height() || ix < 0 || ix >= in.width())
                            std::fill_n(dst, cin, 0.0f);
                        else
                            std::copy_n(in.pixel(iy, ix), cin, dst);
                    }
                }
            }
            RowMap(out.data() + static_cast<std::size_t>(start) * cout, rows, cout).noalias() =
                ConstRowMap(cols.data(), rows, K) * kmat;
        }
    }
    if (bias) {
        float* o = out.data();
        for (int p = 0; p < oh * ow; ++p, o += cout)
            for (int c = 0; c < cout; ++c) o[c] += bias[c];
    }
    return out;
}

/// Gradient of conv2d w.r.t. its input.
inline Tensor conv2d_backward_input(const Shape3& in_shape, const Tensor& dout, const float* kernel,
                                    const ConvGeometry& g) {
    const int cin = in_shape.c, cout = dout.channels();
    const int oh = g.wy.out, ow = g.wx.out;
    const int K = g.kh * g.kw * cin;
    Tensor din(in_shape);
    ConstRowMap kmat(kernel, K, cout);
    const int total = oh * ow;
    std::vector<float> cols(static_cast<std::size_t>(std::min(total, kIm2colChunk)) * K);
    for (int start = 0; start < total; start += kIm2colChunk) {
        const int rows = std::min(kIm2colChunk, total - start);
        RowMap(cols.data(), rows, K).noalias() =
            ConstRowMap(dout.data() + static_cast<std::size_t>(start) * cout, rows, cout) * kmat.transpose();
        for (int r = 0; r < rows; ++r) {
            const int oy = (start + r) / ow, ox = (start + r) % ow;
            const float* src = cols.data() + static_cast<std::size_t>(r) * K;
            for (int ky = 0; ky < g.kh; ++ky) {
                const int iy = oy * g.sh - g.wy.pad_before + ky * g.dh;
                for (int kx = 0; kx < g.kw; ++kx, src += cin) {
                    const int ix = ox * g.sw - g.wx.pad_before + kx * g.dw;
                    if (iy < 0 || iy >= in_shape.h || ix < 0 || ix >= in_shape.w) continue;
                    float* d = din.pixel(iy, ix);
                    for (int c = 0; c < cin; ++c) d[c] += src[c];
                }
            }
        }
    }
    return din;
}

/// Depthwise convolution, kernel (kh, kw, cin, mult); output channel c*mult+j.
inline Tensor depthwise(const Tensor& in, const float* kernel, const float* bias, int mult, const ConvGeometry& g) {
    const int cin = in.channels();
    const int cout = cin * mult;
    Tensor out(g.wy.out, g.wx.out, cout);
    for (int oy = 0; oy < g.wy.out; ++oy)
        for (int ox = 0; ox < g.wx.out; ++ox) {
            float* o = out.pixel(oy, ox);
            for (int ky = 0; ky < g.kh; ++ky) {
                const int iy = oy * g.sh - g.wy.pad_before + ky * g.dh;
                if (iy < 0 || iy >= in.height()) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                    const int ix = ox * g.sw - g.wx.pad_before + kx * g.dw;
                    if (ix < 0 || ix >= in.width()) continue;
                    const float* x = in.pixel(iy, ix);
                    const float* k = kernel + static_cast<std::size_t>(ky * g.kw + kx) * cin * mult;
                    if (mult == 1) {
                        for (int c = 0; c < cin; ++c) o[c] += x[c] * k[c];
                    } else {
                        for (int c = 0; c < cin; ++c)
                            for (int j = 0; j < mult; ++j) o[c * mult + j] += x[c] * k[c * mult + j];
                    }
                }
            }
            if (bias)
                for (int c = 0; c < cout; ++c) o[c] += bias[c];
        }
    return out;
}

inline Tensor depthwise_backward_input(const Shape3& in_shape, const Tensor& dout, const float* kernel, int mult,
                                       const ConvGeometry& g) {
    const int cin = in_shape.c;
    Tensor din(in_shape);
    for (int oy = 0; oy < g.wy.out; ++oy)
        for (int ox = 0; ox < g.wx.out; ++ox) {
            const float* d = dout.pixel(oy, ox);
            for (int ky = 0; ky < g.kh; ++ky) {
                const int iy = oy * g.sh - g.wy.pad_before + ky * g.dh;
                if (iy < 0 || iy >= in_shape.h) continue;
                for (int kx = 0; kx < g.kw; ++kx) {
                    const int ix = ox * g.sw - g.wx.pad_before + kx * g.dw;
                    if (ix < 0 || ix >= in_shape.w) continue;
                    float* dx = din.pixel(iy, ix);
                    const float* k = kernel + static_cast<std::size_t>(ky * g.kw + kx) * cin * mult;
                    for (int c = 0; c < cin; ++c)
                        for (int j = 0; j < mult; ++j) dx[c] += d[c * mult + j] * k[c * mult + j];
                }
            }
        }
    return din;
}

inline Tensor pool(const Tensor& in, const Layer& L, bool is_max) {
    const auto wy = window(in.height(), L.kh, L.sh, 1, L.padding);
    const auto wx = window(in.width(), L.kw, L.sw, 1, L.padding);
    const int C = in.channels();
    Tensor out(wy.out, wx.out, C);
    std::vector<float> acc(static_cast<std::size_t>(C));
    for (int oy = 0; oy < wy.out; ++oy)
        for (int ox = 0; ox < wx.out; ++ox) {
            std::fill(acc.begin(), acc.end(), is_max ? -std::numeric_limits<float>::infinity() : 0.0f);
            int count = 0;
            for (int ky = 0; ky < L.kh; ++ky) {
                const int iy = oy * L.sh - wy.pad_before + ky;
                if (iy < 0 || iy >= in.height()) continue;
                for (int kx = 0; kx < L.kw; ++kx) {
                    const int ix = ox * L.sw - wx.pad_before + kx;
                    if (ix < 0 || ix >= in.width()) continue;
                    ++count;
                    const float* x = in.pixel(iy, ix);
                    for (int c = 0; c < C; ++c) acc[static_cast<std::size_t>(c)] = is_max ? std::max(acc[static_cast<std::size_t>(c)], x[c]) : acc[static_cast<std::size_t>(c)] + x[c];
                }
            }
            float* o = out.pixel(oy, ox);
            for (int c = 0; c < C; ++c) o[c] = is_max ? acc[static_cast<std::size_t>(c)] : acc[static_cast<std::size_t>(c)] / static_cast<float>(count);
        }
    return out;
}

inline Tensor pool_backward(const Tensor& in, const Tensor& dout, const Layer& L, bool is_max) {
    const auto wy = window(in.height(), L.kh, L.sh, 1, L.padding);
    const auto wx = window(in.width(), L.kw, L.sw, 1, L.padding);
    const int C = in.channels();
    Tensor din(in.shape());
    for (int oy = 0; oy < wy.out; ++oy)
        for (int ox = 0; ox < wx.out; ++ox) {
            const float* d = dout.pixel(oy, ox);
            if (is_max) {
                for (int c = 0; c < C; ++c) {
                    float best = -std::numeric_limits<float>::infinity();
                    int by = -1, bx = -1;
                    for (int ky = 0; ky < L.kh; ++ky) {
                        const int iy = oy * L.sh - wy.pad_before + ky;
                        if (iy < 0 || iy >= in.height()) continue;
                        for (int kx = 0; kx < L.kw; ++kx) {
                            const int ix = ox * L.sw - wx.pad_before + kx;
                            if (ix < 0 || ix >= in.width()) continue;
                            if (in.at(iy, ix, c) > best) {
                                best = in.at(iy, ix, c);
                                by = iy;
                                bx = ix;
                            }
                        }
                    }
                    if (by >= 0) din.at(by, bx, c) += d[c];
                }
            } else {
                int count = 0;
                for (int ky = 0; ky < L.kh; ++ky) {
                    const int iy = oy * L.sh - wy.pad_before + ky;
                    for (int kx = 0; kx < L.kw; ++kx) {
                        const int ix = ox * L.sw - wx.pad_before + kx;
                        if (iy >= 0 && iy < in.height() && ix >= 0 && ix < in.width()) ++count;
                    }
                }
                for (int ky = 0; ky < L.kh; ++ky) {
                    const int iy = oy * L.sh - wy.pad_before + ky;
                    if (iy < 0 || iy >= in.height()) continue;
                    for (int kx = 0; kx < L.kw; ++kx) {
                        const int ix = ox * L.sw - wx.pad_before + kx;
                        if (ix < 0 || ix >= in.width()) continue;
                        float* g = din.pixel(iy, ix);
                        for (int c = 0; c < C; ++c) g[c] += d[c] / static_cast<float>(count);
                    }
                }
            }
        }
    return din;
}

/// Index into `b` when it is either the same shape as the output or 1x1xC.
inline bool broadcasts(const Shape3& a, const Shape3& b) { return b.h == 1 && b.w == 1 && b.c == a.c && !(a == b); }

}  // namespace ops

/// Intermediate values kept by a recording forward pass (for gradients).
struct Trace {
    std::vector<Tensor> outputs;
    std::vector<Tensor> preact;  ///< pre-activation, when a fused activation is non-linear
    std::vector<Tensor> mid;     ///< separable conv: depthwise stage output
};

class Graph {
public:
    Graph() = default;

    // --- construction -----------------------------------------------------

    /// Append a layer described the way the exporter writes it. Weight shapes
    /// are given alongside their values.
    int add_layer(const std::string& name, const std::string& type, const std::vector<std::string>& inputs,
                  const nlohmann::json& config,
                  const std::map<std::string, std::pair<std::vector<int>, std::vector<float>>>& weights = {}) {
        Layer L;
        L.name = name;
        L.type_name = type;
        L.type = parse_layer_type(type);
        L.config = config.is_null() ? nlohmann::json::object() : config;
        require(index_.find(name) == index_.end(), ErrorCode::parse, "duplicate layer name " + name);
        for (const auto& in : inputs) {
            auto it = index_.find(in);
            require(it != index_.end(), ErrorCode::parse, "layer " + name + " references unknown input " + in);
            L.inputs.push_back(it->second);
        }
        for (const auto& [key, sv] : weights) {
            std::size_t n = 1;
            for (int d : sv.first) n *= static_cast<std::size_t>(d);
            require(n == sv.second.size(), ErrorCode::parse, "weight " + key + " of " + name + " has wrong size");
            L.weight_shapes[key] = sv.first;
            L.weights[key] = sv.second;
        }
        configure(L);
        const int id = static_cast<int>(layers_.size());
        index_[name] = id;
        layers_.push_back(std::move(L));
        if (layers_.back().type == LayerType::input && input_ < 0) input_ = id;
        output_ = id;
        return id;
    }

    static Graph from_container(const Container& c) {
        Graph g;
        const auto& h = c.header;
        try {
            g.backbone_ = h.value("backbone", std::string("custom"));
            g.value_range_ = parse_value_range(h.value("value_range", std::string("raw255")));
            g.meta_ = nlohmann::json::object();
            for (const char* key : {"weights", "seed", "feature_dim"})
                if (h.contains(key)) g.meta_[key] = h[key];
            for (const auto& L : h.at("layers")) {
                std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> weights;
                for (const auto& [key, desc] : L.at("weights").items()) {
                    std::vector<int> shape;
                    auto values = c.get(desc, &shape);
                    weights[key] = {std::move(shape), std::move(values)};
                }
                g.add_layer(L.at("name").get<std::string>(), L.at("type").get<std::string>(),
                            L.at("inputs").get<std::vector<std::string>>(), L.at("config"), weights);
            }
            g.set_output(h.at("output").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::parse, std::string("malformed backbone header: ") + e.what());
        }
        return g;
    }

    static Graph load(const std::string& path) { return from_container(Container::load(path)); }

    /// Write layers and weights into a container header under the standard keys.
    void to_container(Container& c, Precision precision) const {
        auto& h = c.header;
        h["format"] = 1;
        h["backbone"] = backbone_;
        h["value_range"] = to_string(value_range_);
        h["input_shape"] = {input_shape().h, input_shape().w, input_shape().c};
        h["output"] = layers_.at(static_cast<std::size_t>(output_)).name;
        h["feature_dim"] = output_shape().c;
        for (const auto& [k, v] : meta_.items())
            if (k != "feature_dim") h[k] = v;
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& L : layers_) {
            nlohmann::json e{{"name", L.name}, {"type", L.type_name}, {"config", L.config}};
            nlohmann::json ins = nlohmann::json::array();
            for (int i : L.inputs) ins.push_back(layers_[static_cast<std::size_t>(i)].name);
            e["inputs"] = ins;
            nlohmann::json ws = nlohmann::json::object();
            for (const auto& [key, values] : L.weights) ws[key] = c.put(values, L.weight_shapes.at(key), precision);
            e["weights"] = ws;
            layers.push_back(std::move(e));
        }
        h["layers"] = std::move(layers);
    }

    void set_output(const std::string& name) { output_ = layer_index(name); }
    void set_backbone_name(std::string name) { backbone_ = std::move(name); }
    void set_value_range(ValueRange v) { value_range_ = v; }

    // --- introspection ----------------------------------------------------

    const std::string& backbone_name() const { return backbone_; }
    ValueRange value_range() const { return value_range_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }
    int output_index() const { return output_; }
    int input_index() const { return input_; }

    int layer_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorCode::not_found, "no layer named '" + name + "'");
        return it->second;
    }

    Shape3 input_shape() const {
        require(input_ >= 0, ErrorCode::invalid_argument, "graph has no input layer");
        return layers_[static_cast<std::size_t>(input_)].out_shape;
    }
    Shape3 output_shape() const { return layers_.at(static_cast<std::size_t>(output_)).out_shape; }

    /// Last convolution (in topological order) that the output depends on.
    int last_conv_layer() const {
        const auto anc = ancestors(output_);
        for (int i = output_; i >= 0; --i)
            if (anc.count(i) && layers_[static_cast<std::size_t>(i)].is_convolution()) return i;
        fail(ErrorCode::unsupported, "model has no convolutional layer");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& L : layers_)
            for (const auto& [k, v] : L.weights) n += v.size();
        return n;
    }

    /// SHA-256 over every weight tensor in layer order.
    std::string weight_digest() const {
        Sha256Stream s;
        for (const auto& L : layers_)
            for (const auto& [k, v] : L.weights) {
                s.update(L.name.data(), L.name.size());
                s.update(k.data(), k.size());
                s.update(v.data(), v.size() * sizeof(float));
            }
        return s.hex();
    }

    /// Round every weight through the given precision (fp16 dequantisation).
    void round_weights(Precision p) {
        if (p == Precision::fp32) return;
        for (auto& L : layers_) {
            for (auto& [k, v] : L.weights)
                for (auto& x : v) x = static_cast<float>(Eigen::half(x));
            configure(L);
        }
    }

    // --- execution ----------------------------------------------------------

    Tensor forward(const Tensor& input) const {
        check_input(input);
        std::vector<int> last_use(layers_.size(), -1);
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (int in : layers_[i].inputs) last_use[static_cast<std::size_t>(in)] = static_cast<int>(i);
        last_use[static_cast<std::size_t>(output_)] = std::numeric_limits<int>::max();
        std::vector<Tensor> values(layers_.size());
        for (int i = 0; i <= output_; ++i) {
            values[static_cast<std::size_t>(i)] = run_layer(i, values, input, nullptr);
            for (int in : layers_[static_cast<std::size_t>(i)].inputs)
                if (last_use[static_cast<std::size_t>(in)] == i) values[static_cast<std::size_t>(in)] = Tensor{};
        }
        return std::move(values[static_cast<std::size_t>(output_)]);
    }

    /// Forward pass keeping every intermediate value.
    Trace forward_trace(const Tensor& input) const {
        check_input(input);
        Trace t;
        t.outputs.resize(layers_.size());
        t.preact.resize(layers_.size());
        t.mid.resize(layers_.size());
        for (int i = 0; i <= output_; ++i) t.outputs[static_cast<std::size_t>(i)] = run_layer(i, t.outputs, input, &t);
        return t;
    }

    /// Vector-Jacobian product: given d(score)/d(output), return
    /// d(score)/d(output of layer `target`).
    Tensor backward_to(const Trace& trace, int target, const Tensor& grad_output) const {
        require(grad_output.shape() == output_shape(), ErrorCode::invalid_argument, "gradient shape mismatch");
        const auto anc = ancestors(output_);
        require(anc.count(target) > 0, ErrorCode::invalid_argument,
                "layer " + layer(target).name + " does not feed the output");
        std::vector<char> on_path(layers_.size(), 0);
        on_path[static_cast<std::size_t>(target)] = 1;
        for (int i = target + 1; i <= output_; ++i) {
            if (!anc.count(i)) continue;
            for (int in : layers_[static_cast<std::size_t>(i)].inputs)
                if (on_path[static_cast<std::size_t>(in)]) on_path[static_cast<std::size_t>(i)] = 1;
        }
        require(on_path[static_cast<std::size_t>(output_)], ErrorCode::invalid_argument, "no path from target to output");
        std::vector<Tensor> grads(layers_.size());
        grads[static_cast<std::size_t>(output_)] = grad_output;
        for (int i = output_; i > target; --i) {
            auto& g = grads[static_cast<std::size_t>(i)];
            if (!on_path[static_cast<std::size_t>(i)] || g.empty()) continue;
            backprop_layer(i, trace, g, grads, on_path);
            g = Tensor{};
        }
        Tensor out = std::move(grads[static_cast<std::size_t>(target)]);
        if (out.empty()) out = Tensor(layer(target).out_shape);
        return out;
    }

private:
    void check_input(const Tensor& input) const {
        require(input.shape() == input_shape(), ErrorCode::invalid_argument,
                "input shape " + input.shape().str() + " does not match model input " + input_shape().str());
    }

    std::set<int> ancestors(int node) const {
        std::set<int> seen{node};
        std::vector<int> stack{node};
        while (!stack.empty()) {
            const int n = stack.back();
            stack.pop_back();
            for (int in : layers_[static_cast<std::size_t>(n)].inputs)
                if (seen.insert(in).second) stack.push_back(in);
        }
        return seen;
    }

    Shape3 in_shape(const Layer& L, std::size_t k = 0) const {
        require(L.inputs.size() > k, ErrorCode::parse, "layer " + L.name + " is missing an input");
        return layers_[static_cast<std::size_t>(L.inputs[k])].out_shape;
    }

    static std::array<int, 2> pair_of(const nlohmann::json& c, const char* key, int fallback) {
        if (!c.contains(key) || c[key].is_null()) return {fallback, fallback};
        if (c[key].is_number()) return {c[key].get<int>(), c[key].get<int>()};
        return {c[key][0].get<int>(), c[key][1].get<int>()};
    }

    void configure(Layer& L) const {
        const auto& c = L.config;
        auto padding_of = [&](const char* key) {
            const auto p = c.value(key, std::string("valid"));
            if (p == "same") return Padding::same;
            if (p == "valid") return Padding::valid;
            fail(ErrorCode::unsupported, "layer " + L.name + ": padding '" + p + "'");
        };
        auto act_of = [&]() {
            if (!c.contains("activation") || c["activation"].is_null()) return Activation::linear;
            return parse_activation(c["activation"].get<std::string>());
        };
        switch (L.type) {
            case LayerType::input: {
                const auto s = c.at("shape").get<std::vector<int>>();
                require(s.size() == 3, ErrorCode::unsupported, "input layer must be H x W x C");
                L.out_shape = {s[0], s[1], s[2]};
                return;
            }
            case LayerType::conv2d:
            case LayerType::depthwise_conv2d:
            case LayerType::separable_conv2d: {
                const auto k = pair_of(c, "kernel", 1), s = pair_of(c, "strides", 1), d = pair_of(c, "dilation", 1);
                L.kh = k[0]; L.kw = k[1]; L.sh = s[0]; L.sw = s[1]; L.dh = d[0]; L.dw = d[1];
                L.padding = padding_of("padding");
                L.act = act_of();
                L.depth_multiplier = c.value("depth_multiplier", 1);
                L.filters = c.value("filters", 0);
                require(c.value("groups", 1) == 1, ErrorCode::unsupported, "grouped convolution in " + L.name);
                const auto in = in_shape(L);
                const auto wy = ops::window(in.h, L.kh, L.sh, L.dh, L.padding);
                const auto wx = ops::window(in.w, L.kw, L.sw, L.dw, L.padding);
                if (L.type == LayerType::conv2d) {
                    expect_shape(L, "kernel", {L.kh, L.kw, in.c, L.filters});
                    L.out_shape = {wy.out, wx.out, L.filters};
                } else if (L.type == LayerType::depthwise_conv2d) {
                    expect_shape(L, "depthwise", {L.kh, L.kw, in.c, L.depth_multiplier});
                    L.out_shape = {wy.out, wx.out, in.c * L.depth_multiplier};
                } else {
                    expect_shape(L, "depthwise", {L.kh, L.kw, in.c, L.depth_multiplier});
                    expect_shape(L, "pointwise", {1, 1, in.c * L.depth_multiplier, L.filters});
                    L.out_shape = {wy.out, wx.out, L.filters};
                }
                if (L.weights.count("bias")) expect_shape(L, "bias", {L.out_shape.c});
                return;
            }
            case LayerType::batch_norm: {
                const auto in = in_shape(L);
                L.epsilon = c.value("epsilon", 1e-3f);
                for (const char* key : {"gamma", "beta", "mean", "variance"}) expect_shape(L, key, {in.c});
                L.bn_scale.resize(static_cast<std::size_t>(in.c));
                L.bn_shift.resize(static_cast<std::size_t>(in.c));
                const auto &g = L.w("gamma"), &b = L.w("beta"), &m = L.w("mean"), &v = L.w("variance");
                for (std::size_t i = 0; i < L.bn_scale.size(); ++i) {
                    L.bn_scale[i] = g[i] / std::sqrt(v[i] + L.epsilon);
                    L.bn_shift[i] = b[i] - m[i] * L.bn_scale[i];
                }
                L.out_shape = in;
                return;
            }
            case LayerType::activation:
                L.act = act_of();
                L.out_shape = in_shape(L);
                return;
            case LayerType::relu:
                if (c.contains("max_value") && !c["max_value"].is_null()) L.max_value = c["max_value"].get<float>();
                L.negative_slope = c.value("negative_slope", 0.0f);
                L.threshold = c.value("threshold", 0.0f);
                L.out_shape = in_shape(L);
                return;
            case LayerType::add:
            case LayerType::multiply: {
                require(L.inputs.size() >= 2, ErrorCode::parse, L.name + " needs two or more inputs");
                Shape3 out = in_shape(L, 0);
                for (std::size_t k = 1; k < L.inputs.size(); ++k) {
                    const auto s = in_shape(L, k);
                    if (ops::broadcasts(out, s)) continue;
                    if (ops::broadcasts(s, out)) {
                        out = s;
                        continue;
                    }
                    require(s == out, ErrorCode::invalid_argument, L.name + ": incompatible shapes " + s.str() + " vs " + out.str());
                }
                L.out_shape = out;
                return;
            }
            case LayerType::concatenate: {
                Shape3 out = in_shape(L, 0);
                for (std::size_t k = 1; k < L.inputs.size(); ++k) {
                    const auto s = in_shape(L, k);
                    require(s.h == out.h && s.w == out.w, ErrorCode::invalid_argument, L.name + ": spatial mismatch");
                    out.c += s.c;
                }
                L.out_shape = out;
                return;
            }
            case LayerType::global_avg_pool:
                L.keepdims = c.value("keepdims", false);
                L.out_shape = {1, 1, in_shape(L).c};
                return;
            case LayerType::max_pool:
            case LayerType::avg_pool: {
                const auto p = pair_of(c, "pool", 2);
                const auto s = pair_of(c, "strides", p[0]);
                L.kh = p[0]; L.kw = p[1]; L.sh = s[0]; L.sw = s[1];
                L.padding = padding_of("padding");
                const auto in = in_shape(L);
                L.out_shape = {ops::window(in.h, L.kh, L.sh, 1, L.padding).out,
                               ops::window(in.w, L.kw, L.sw, 1, L.padding).out, in.c};
                return;
            }
            case LayerType::zero_pad:
            case LayerType::crop: {
                const auto v = c.at(L.type == LayerType::zero_pad ? "padding" : "cropping").get<std::vector<int>>();
                require(v.size() == 4, ErrorCode::parse, L.name + ": expected 4 padding values");
                std::copy(v.begin(), v.end(), L.pads.begin());
                const auto in = in_shape(L);
                const int sign = L.type == LayerType::zero_pad ? 1 : -1;
                L.out_shape = {in.h + sign * (L.pads[0] + L.pads[1]), in.w + sign * (L.pads[2] + L.pads[3]), in.c};
                require(L.out_shape.h > 0 && L.out_shape.w > 0, ErrorCode::invalid_argument, L.name + ": empty output");
                return;
            }
            case LayerType::rescaling:
                L.scale = c.value("scale", 1.0f);
                L.offset = c.value("offset", 0.0f);
                L.out_shape = in_shape(L);
                return;
            case LayerType::custom_scale:
                L.scale = c.value("scale", 1.0f);
                require(L.inputs.size() == 2 && in_shape(L, 0) == in_shape(L, 1), ErrorCode::parse,
                        L.name + ": custom scale needs two equal-shaped inputs");
                L.out_shape = in_shape(L);
                return;
            case LayerType::scalar_add:
            case LayerType::scalar_multiply:
                L.value = c.value("value", 0.0f);
                L.out_shape = in_shape(L);
                return;
        }
    }

    static void expect_shape(const Layer& L, const std::string& key, const std::vector<int>& shape) {
        auto it = L.weight_shapes.find(key);
        require(it != L.weight_shapes.end(), ErrorCode::parse, "layer " + L.name + " lacks weight '" + key + "'");
        require(it->second == shape, ErrorCode::parse, "layer " + L.name + " weight '" + key + "' has unexpected shape");
    }

    static void apply_act(Tensor& t, Activation a) {
        if (a == Activation::linear) return;
        for (auto& v : t.values()) v = activate(v, a);
    }

    Tensor run_layer(int i, const std::vector<Tensor>& values, const Tensor& input, Trace* trace) const {
        const Layer& L = layers_[static_cast<std::size_t>(i)];
        auto in = [&](std::size_t k) -> const Tensor& { return values[static_cast<std::size_t>(L.inputs[k])]; };
        switch (L.type) {
            case LayerType::input:
                return input;
            case LayerType::conv2d:
            case LayerType::depthwise_conv2d:
            case LayerType::separable_conv2d: {
                const auto g = ops::conv_geometry(L, in(0).shape());
                Tensor out;
                if (L.type == LayerType::conv2d) {
                    out = ops::conv2d(in(0), L.w("kernel").data(), L.bias(), L.filters, g);
                } else if (L.type == LayerType::depthwise_conv2d) {
                    out = ops::depthwise(in(0), L.w("depthwise").data(), L.bias(), L.depth_multiplier, g);
                } else {
                    Tensor mid = ops::depthwise(in(0), L.w("depthwise").data(), nullptr, L.depth_multiplier, g);
                    const ops::ConvGeometry pw{1, 1, 1, 1, 1, 1, {mid.height(), 0}, {mid.width(), 0}};
                    out = ops::conv2d(mid, L.w("pointwise").data(), L.bias(), L.filters, pw);
                    if (trace) trace->mid[static_cast<std::size_t>(i)] = std::move(mid);
                }
                if (trace && L.act != Activation::linear) trace->preact[static_cast<std::size_t>(i)] = out;
                apply_act(out, L.act);
                return out;
            }
            case LayerType::batch_norm: {
                Tensor out = in(0);
                const int C = out.channels();
                float* p = out.data();
                for (std::size_t n = 0; n < out.size(); n += static_cast<std::size_t>(C), p += C)
                    for (int c = 0; c < C; ++c) p[c] = p[c] * L.bn_scale[static_cast<std::size_t>(c)] + L.bn_shift[static_cast<std::size_t>(c)];
                return out;
            }
            case LayerType::activation: {
                Tensor out = in(0);
                apply_act(out, L.act);
                return out;
            }
            case LayerType::relu: {
                Tensor out = in(0);
                for (auto& v : out.values()) v = relu_layer(v, L);
                return out;
            }
            case LayerType::add:
            case LayerType::multiply: {
                Tensor out(L.out_shape, L.type == LayerType::add ? 0.0f : 1.0f);
                for (std::size_t k = 0; k < L.inputs.size(); ++k) {
                    const Tensor& x = in(k);
                    const bool bc = ops::broadcasts(out.shape(), x.shape());
                    const std::size_t C = static_cast<std::size_t>(out.channels());
                    for (std::size_t n = 0; n < out.size(); ++n) {
                        const float v = x.data()[bc ? n % C : n];
                        if (L.type == LayerType::add) out.data()[n] += v; else out.data()[n] *= v;
                    }
                }
                return out;
            }
            case LayerType::concatenate: {
                Tensor out(L.out_shape);
                int off = 0;
                for (std::size_t k = 0; k < L.inputs.size(); ++k) {
                    const Tensor& x = in(k);
                    for (int y = 0; y < out.height(); ++y)
                        for (int xx = 0; xx < out.width(); ++xx)
                            std::copy_n(x.pixel(y, xx), x.channels(), out.pixel(y, xx) + off);
                    off += x.channels();
                }
                return out;
            }
            case LayerType::global_avg_pool: {
                const Tensor& x = in(0);
                Tensor out(1, 1, x.channels());
                std::vector<double> acc(static_cast<std::size_t>(x.channels()), 0.0);
                for (int y = 0; y < x.height(); ++y)
                    for (int xx = 0; xx < x.width(); ++xx) {
                        const float* p = x.pixel(y, xx);
                        for (int c = 0; c < x.channels(); ++c) acc[static_cast<std::size_t>(c)] += p[c];
                    }
                const double n = static_cast<double>(x.height()) * x.width();
                for (int c = 0; c < x.channels(); ++c) out.data()[c] = static_cast<float>(acc[static_cast<std::size_t>(c)] / n);
                return out;
            }
            case LayerType::max_pool:
                return ops::pool(in(0), L, true);
            case LayerType::avg_pool:
                return ops::pool(in(0), L, false);
            case LayerType::zero_pad: {
                const Tensor& x = in(0);
                Tensor out(L.out_shape);
                for (int y = 0; y < x.height(); ++y)
                    std::copy_n(x.pixel(y, 0), static_cast<std::size_t>(x.width()) * x.channels(),
                                out.pixel(y + L.pads[0], L.pads[2]));
                return out;
            }
            case LayerType::crop: {
                const Tensor& x = in(0);
                Tensor out(L.out_shape);
                for (int y = 0; y < out.height(); ++y)
                    std::copy_n(x.pixel(y + L.pads[0], L.pads[2]), static_cast<std::size_t>(out.width()) * out.channels(),
                                out.pixel(y, 0));
                return out;
            }
            case LayerType::rescaling: {
                Tensor out = in(0);
                for (auto& v : out.values()) v = v * L.scale + L.offset;
                return out;
            }
            case LayerType::custom_scale: {
                Tensor out = in(0);
                const Tensor& b = in(1);
                for (std::size_t n = 0; n < out.size(); ++n) out.data()[n] += b.data()[n] * L.scale;
                return out;
            }
            case LayerType::scalar_add: {
                Tensor out = in(0);
                for (auto& v : out.values()) v += L.value;
                return out;
            }
            case LayerType::scalar_multiply: {
                Tensor out = in(0);
                for (auto& v : out.values()) v *= L.value;
                return out;
            }
        }
        fail(ErrorCode::unsupported, "layer " + L.name);
    }

    static float relu_layer(float x, const Layer& L) {
        if (x >= L.max_value) return L.max_value;
        if (x >= L.threshold) return x;
        return L.negative_slope * (x - L.threshold);
    }
    static float relu_layer_grad(float x, const Layer& L) {
        if (x >= L.max_value) return 0.0f;
        if (x >= L.threshold) return 1.0f;
        return L.negative_slope;
    }

    void accumulate(std::vector<Tensor>& grads, const std::vector<char>& on_path, int node, Tensor g) const {
        if (!on_path[static_cast<std::size_t>(node)]) return;
        auto& slot = grads[static_cast<std::size_t>(node)];
        if (slot.empty()) {
            slot = std::move(g);
        } else {
            for (std::size_t n = 0; n < slot.size(); ++n) slot.data()[n] += g.data()[n];
        }
    }

    void backprop_layer(int i, const Trace& trace, const Tensor& g, std::vector<Tensor>& grads,
                        const std::vector<char>& on_path) const {
        const Layer& L = layers_[static_cast<std::size_t>(i)];
        auto in = [&](std::size_t k) -> const Tensor& { return trace.outputs[static_cast<std::size_t>(L.inputs[k])]; };
        auto elementwise = [&](auto&& deriv) {
            Tensor d(g.shape());
            const Tensor& x = in(0);
            for (std::size_t n = 0; n < d.size(); ++n) d.data()[n] = g.data()[n] * deriv(x.data()[n]);
            accumulate(grads, on_path, L.inputs[0], std::move(d));
        };
        switch (L.type) {
            case LayerType::input:
                return;
            case LayerType::conv2d:
            case LayerType::depthwise_conv2d:
            case LayerType::separable_conv2d: {
                Tensor dpre = g;
                if (L.act != Activation::linear) {
                    const Tensor& pre = trace.preact[static_cast<std::size_t>(i)];
                    for (std::size_t n = 0; n < dpre.size(); ++n) dpre.data()[n] *= activate_grad(pre.data()[n], L.act);
                }
                const auto geo = ops::conv_geometry(L, in(0).shape());
                Tensor din;
                if (L.type == LayerType::conv2d) {
                    din = ops::conv2d_backward_input(in(0).shape(), dpre, L.w("kernel").data(), geo);
                } else if (L.type == LayerType::depthwise_conv2d) {
                    din = ops::depthwise_backward_input(in(0).shape(), dpre, L.w("depthwise").data(), L.depth_multiplier, geo);
                } else {
                    const Tensor& mid = trace.mid[static_cast<std::size_t>(i)];
                    const ops::ConvGeometry pw{1, 1, 1, 1, 1, 1, {mid.height(), 0}, {mid.width(), 0}};
                    Tensor dmid = ops::conv2d_backward_input(mid.shape(), dpre, L.w("pointwise").data(), pw);
                    din = ops::depthwise_backward_input(in(0).shape(), dmid, L.w("depthwise").data(), L.depth_multiplier, geo);
                }
                accumulate(grads, on_path, L.inputs[0], std::move(din));
                return;
            }
            case LayerType::batch_norm: {
                Tensor d = g;
                const int C = d.channels();
                for (std::size_t n = 0; n < d.size(); ++n) d.data()[n] *= L.bn_scale[n % static_cast<std::size_t>(C)];
                accumulate(grads, on_path, L.inputs[0], std::move(d));
                return;
            }
            case LayerType::activation:
                elementwise([&](float x) { return activate_grad(x, L.act); });
                return;
            case LayerType::relu:
                elementwise([&](float x) { return relu_layer_grad(x, L); });
                return;
            case LayerType::add:
            case LayerType::multiply: {
                const std::size_t C = static_cast<std::size_t>(g.channels());
                for (std::size_t k = 0; k < L.inputs.size(); ++k) {
                    if (!on_path[static_cast<std::size_t>(L.inputs[k])]) continue;
                    const Tensor& xk = in(k);
                    const bool bc = ops::broadcasts(g.shape(), xk.shape());
                    Tensor d(xk.shape());
                    for (std::size_t n = 0; n < g.size(); ++n) {
                        float v = g.data()[n];
                        if (L.type == LayerType::multiply) {
                            for (std::size_t o = 0; o < L.inputs.size(); ++o) {
                                if (o == k) continue;
                                const Tensor& xo = in(o);
                                v *= xo.data()[ops::broadcasts(g.shape(), xo.shape()) ? n % C : n];
                            }
                        }
                        d.data()[bc ? n % C : n] += v;
                    }
                    accumulate(grads, on_path, L.inputs[k], std::move(d));
                }
                return;
            }
            case LayerType::concatenate: {
                int off = 0;
                for (std::size_t k = 0; k < L.inputs.size(); ++k) {
                    const Shape3 s = in(k).shape();
                    if (on_path[static_cast<std::size_t>(L.inputs[k])]) {
                        Tensor d(s);
                        for (int y = 0; y < s.h; ++y)
                            for (int x = 0; x < s.w; ++x) std::copy_n(g.pixel(y, x) + off, s.c, d.pixel(y, x));
                        accumulate(grads, on_path, L.inputs[k], std::move(d));
                    }
                    off += s.c;
                }
                return;
            }
            case LayerType::global_avg_pool: {
                const Shape3 s = in(0).shape();
                Tensor d(s);
                const float inv = 1.0f / static_cast<float>(s.h * s.w);
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x)
                        for (int c = 0; c < s.c; ++c) d.at(y, x, c) = g.data()[c] * inv;
                accumulate(grads, on_path, L.inputs[0], std::move(d));
                return;
            }
            case LayerType::max_pool:
            case LayerType::avg_pool:
                accumulate(grads, on_path, L.inputs[0], ops::pool_backward(in(0), g, L, L.type == LayerType::max_pool));
                return;
            case LayerType::zero_pad: {
                const Shape3 s = in(0).shape();
                Tensor d(s);
                for (int y = 0; y < s.h; ++y)
                    std::copy_n(g.pixel(y + L.pads[0], L.pads[2]), static_cast<std::size_t>(s.w) * s.c, d.pixel(y, 0));
                accumulate(grads, on_path, L.inputs[0], std::move(d));
                return;
            }
            case LayerType::crop: {
                Tensor d(in(0).shape());
                for (int y = 0; y < g.height(); ++y)
                    std::copy_n(g.pixel(y, 0), static_cast<std::size_t>(g.width()) * g.channels(),
                                d.pixel(y + L.pads[0], L.pads[2]));
                accumulate(grads, on_path, L.inputs[0], std::move(d));
                return;
            }
            case LayerType::rescaling:
            case LayerType::scalar_multiply: {
                const float f = L.type == LayerType::rescaling ? L.scale : L.value;
                Tensor d = g;
                for (auto& v : d.values()) v *= f;
                accumulate(grads, on_path, L.inputs[0], std::move(d));
                return;
            }
            case LayerType::scalar_add:
                accumulate(grads, on_path, L.inputs[0], g);
                return;
            case LayerType::custom_scale: {
                accumulate(grads, on_path, L.inputs[0], g);
                Tensor d = g;
                for (auto& v : d.values()) v *= L.scale;
                accumulate(grads, on_path, L.inputs[1], std::move(d));
                return;
            }
        }
    }

    std::vector<Layer> layers_;
    std::map<std::string, int> index_;
    int input_ = -1;
    int output_ = -1;
    std::string backbone_ = "custom";
    ValueRange value_range_ = ValueRange::raw255;
    nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace mpox::nn
