#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mpox/core/error.hpp"
#include "mpox/data/labels.hpp"
#include "mpox/data/preprocess.hpp"
#include "mpox/nn/graph.hpp"

namespace mpox {

enum class BackboneId { vgg16, inception_resnet_v2, nasnet_mobile, mobilenet_v3_small, mobilenet_v3_large };

struct BackboneInfo {
    BackboneId id;
    const char* name;  ///< canonical name, also the artifact file stem
    int input_size;
    ValueRange value_range;
};

inline constexpr std::array<BackboneInfo, 5> kBackbones{{
    {BackboneId::vgg16, "VGG16", 224, ValueRange::caffe},
    {BackboneId::inception_resnet_v2, "InceptionResNetV2", 299, ValueRange::symmetric},
    {BackboneId::nasnet_mobile, "NASNetMobile", 224, ValueRange::symmetric},
    {BackboneId::mobilenet_v3_small, "MobileNetV3Small", 224, ValueRange::raw255},
    {BackboneId::mobilenet_v3_large, "MobileNetV3Large", 224, ValueRange::raw255},
}};

inline const BackboneInfo& info(BackboneId id) {
    for (const auto& b : kBackbones)
        if (b.id == id) return b;
    fail(ErrorCode::invalid_argument, "unknown backbone id");
}

inline const char* to_string(BackboneId id) { return info(id).name; }

/// Accepts canonical names case-insensitively, with or without separators
/// ("MobileNetV3Small", "mobilenetv3small", "mobilenet_v3_small").
inline BackboneId parse_backbone(std::string_view text) {
    auto squash = [](std::string_view s) {
        std::string out;
        for (char ch : s)
            if (ch != '_' && ch != '-' && ch != ' ') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        return out;
    };
    const auto key = squash(text);
    for (const auto& b : kBackbones)
        if (squash(b.name) == key) return b.id;
    fail(ErrorCode::parse, "unknown backbone '" + std::string(text) + "'");
}

inline std::string backbone_file_name(BackboneId id) { return std::string(to_string(id)) + ".bbn"; }

/// A frozen feature extractor: the backbone graph plus its weight digest.
struct Backbone {
    BackboneId id = BackboneId::mobilenet_v3_small;
    nn::Graph graph;
    std::string digest;

    int feature_dim() const { return graph.output_shape().c; }
    Shape3 input_shape() const { return graph.input_shape(); }
    ValueRange value_range() const { return graph.value_range(); }
    PreprocessConfig preprocess_config() const {
        PreprocessConfig p;
        p.target_height = input_shape().h;
        p.target_width = input_shape().w;
        p.value_range = value_range();
        return p;
    }

    /// Global-average-pooled feature vector for one normalised input.
    std::vector<float> embed(const Tensor& normalized) const {
        const Tensor fmap = graph.forward(normalized);
        return global_average(fmap);
    }

    static std::vector<float> global_average(const Tensor& fmap) {
        const int C = fmap.channels();
        std::vector<double> acc(static_cast<std::size_t>(C), 0.0);
        const float* p = fmap.data();
        for (std::size_t n = 0; n < fmap.size(); n += static_cast<std::size_t>(C), p += C)
            for (int c = 0; c < C; ++c) acc[static_cast<std::size_t>(c)] += p[c];
        const double inv = 1.0 / (static_cast<double>(fmap.height()) * fmap.width());
        std::vector<float> out(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(c)] = static_cast<float>(acc[static_cast<std::size_t>(c)] * inv);
        return out;
    }
};

inline std::shared_ptr<const Backbone> make_backbone(BackboneId id, nn::Graph graph) {
    auto b = std::make_shared<Backbone>();
    b->id = id;
    b->graph = std::move(graph);
    b->digest = b->graph.weight_digest();
    return b;
}

/// Load `<dir>/<Name>.bbn`.
inline std::shared_ptr<const Backbone> load_backbone(BackboneId id, const std::filesystem::path& dir) {
    const auto path = dir / backbone_file_name(id);
    require(std::filesystem::exists(path), ErrorCode::not_found,
            "backbone weights artifact unavailable: " + path.string());
    auto graph = nn::Graph::load(path.string());
    require(parse_backbone(graph.backbone_name()) == id, ErrorCode::parse,
            path.string() + " holds " + graph.backbone_name() + ", expected " + to_string(id));
    return make_backbone(id, std::move(graph));
}

}  // namespace mpox
