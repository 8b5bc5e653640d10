#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mpox/core/rng.hpp"
#include "mpox/model/backbone.hpp"
#include "mpox/model/model.hpp"

namespace mpoxtest {
using namespace mpox;

/// Directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "mpox-test") {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

/// Directory holding exported .bbn files, or empty when not configured.
inline std::filesystem::path backbone_dir() {
    const char* env = std::getenv("MPOX_BACKBONE_DIR");
    return env ? std::filesystem::path(env) : std::filesystem::path();
}

inline bool have_backbone(BackboneId id) {
    const auto dir = backbone_dir();
    return !dir.empty() && std::filesystem::exists(dir / backbone_file_name(id));
}

using WeightMap = std::map<std::string, std::pair<std::vector<int>, std::vector<float>>>;

inline std::vector<float> random_values(std::size_t n, Rng& rng, double scale) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-scale, scale));
    return v;
}

/// A small convolutional feature extractor for tests that need a real graph
/// but not a real backbone. Input is size x size x 3 in raw 0..255 pixels.
inline nn::Graph tiny_graph(int size = 32, std::uint64_t seed = 11, const std::string& name = "MobileNetV3Small") {
    Rng rng(seed);
    nn::Graph g;
    g.add_layer("input", "InputLayer", {}, {{"shape", {size, size, 3}}});
    g.add_layer("rescale", "Rescaling", {"input"}, {{"scale", 1.0 / 127.5}, {"offset", -1.0}});
    g.add_layer("conv_a", "Conv2D", {"rescale"},
                {{"kernel", {3, 3}}, {"strides", {2, 2}}, {"padding", "same"}, {"filters", 8}, {"activation", "relu"}},
                WeightMap{{"kernel", {{3, 3, 3, 8}, random_values(3 * 3 * 3 * 8, rng, 0.5)}},
                          {"bias", {{8}, random_values(8, rng, 0.1)}}});
    g.add_layer("dw", "DepthwiseConv2D", {"conv_a"},
                {{"kernel", {3, 3}}, {"strides", {1, 1}}, {"padding", "same"}, {"depth_multiplier", 1}},
                WeightMap{{"depthwise", {{3, 3, 8, 1}, random_values(72, rng, 0.5)}}});
    g.add_layer("bn", "BatchNormalization", {"dw"}, {{"epsilon", 1e-3}},
                WeightMap{{"gamma", {{8}, std::vector<float>(8, 1.0f)}},
                          {"beta", {{8}, random_values(8, rng, 0.1)}},
                          {"mean", {{8}, random_values(8, rng, 0.1)}},
                          {"variance", {{8}, std::vector<float>(8, 0.8f)}}});
    g.add_layer("act", "ReLU", {"bn"}, {{"max_value", 6.0}});
    g.add_layer("skip", "Add", {"act", "conv_a"}, {});
    g.add_layer("conv_out", "Conv2D", {"skip"},
                {{"kernel", {1, 1}}, {"padding", "valid"}, {"filters", 16}, {"activation", "relu"}},
                WeightMap{{"kernel", {{1, 1, 8, 16}, random_values(128, rng, 0.6)}},
                          {"bias", {{16}, random_values(16, rng, 0.1)}}});
    g.set_backbone_name(name);
    g.set_value_range(ValueRange::raw255);
    return g;
}

inline std::shared_ptr<const Backbone> tiny_backbone(int size = 32, std::uint64_t seed = 11) {
    return make_backbone(BackboneId::mobilenet_v3_small, tiny_graph(size, seed));
}

/// Images whose class is visible in the mean colour, so a head over the tiny
/// backbone can separate them.
inline ImageSet colour_images(int per_class, int classes, int size, std::uint64_t seed) {
    Rng rng(seed);
    ImageSet set;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            ImageTensor img(size, size, 3);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    for (int ch = 0; ch < 3; ++ch) {
                        // classes 0..2 are red, green, blue; class 3 is grey
                        const double base = c >= 3 ? 130.0 : ch == c ? 200.0 : 60.0;
                        img.at(y, x, ch) = static_cast<float>(std::clamp(base + rng.normal(0.0, 20.0), 0.0, 255.0));
                    }
            set.add("c" + std::to_string(c) + "_" + std::to_string(i), std::move(img), c);
        }
    return set;
}

}  // namespace mpoxtest
