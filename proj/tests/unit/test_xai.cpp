#include <gtest/gtest.h>

#include "mpox/xai/grad_cam.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mpox;
using namespace mpox::xai;

TEST(GradCam, FourParameterModelMatchesClosedForm) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        mpoxtest::HandCam hc{static_cast<float>(rng.uniform(-2, 2)), static_cast<float>(rng.uniform(-2, 2)),
                             static_cast<float>(rng.uniform(-2, 2)), static_cast<float>(rng.uniform(-2, 2))};
        const auto m = hc.model();
        Tensor x(hc.size, hc.size, 1);
        std::vector<double> xs;
        for (auto& v : x.values()) {
            v = static_cast<float>(rng.uniform(-1, 1));
            xs.push_back(v);
        }
        const auto res = grad_cam(m, x, 0);
        EXPECT_EQ(res.layer, "conv");
        const auto alpha = hc.alpha();
        ASSERT_EQ(res.alpha.size(), 2u);
        EXPECT_NEAR(res.alpha[0], alpha[0], 1e-6);
        EXPECT_NEAR(res.alpha[1], alpha[1], 1e-6);
        const auto raw = hc.raw(xs);
        const auto hm = hc.heatmap(xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            EXPECT_NEAR(res.raw.data()[i], raw[i], 1e-6) << trial;
            EXPECT_NEAR(res.heatmap.data()[i], hm[i], 1e-5) << trial;
        }
    }
}

TEST(GradCam, ZeroGradientGivesZeroHeatmap) {
    mpoxtest::HandCam hc{1.0f, -1.0f, 0.0f, 0.0f};
    Tensor x(4, 4, 1);
    x.fill(0.5f);
    const auto res = grad_cam(hc.model(), x, 0);
    for (float v : res.heatmap.values()) EXPECT_EQ(v, 0.0f);
}

TEST(GradCam, HeatmapIsNormalisedAndInputSized) {
    const auto bb = mpoxtest::tiny_backbone(32);
    const auto model = build_model(bb, HeadConfig{}, TaskKind::multiclass, 3);
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        ImageTensor img(32, 32, 3);
        for (auto& v : img.values()) v = static_cast<float>(rng.uniform(0, 255));
        const int target = trial % 4;
        const auto res = grad_cam(model, normalize(img, bb->value_range()), target);
        ASSERT_EQ(res.heatmap.height(), 32);
        ASSERT_EQ(res.heatmap.width(), 32);
        ASSERT_EQ(res.heatmap.channels(), 1);
        const auto [lo, hi] = std::minmax_element(res.heatmap.values().begin(), res.heatmap.values().end());
        EXPECT_GE(*lo, 0.0f);
        EXPECT_LE(*hi, 1.0f);
        EXPECT_TRUE((*lo == 0.0f && *hi == 1.0f) || *hi == 0.0f);
        EXPECT_EQ(res.target_class, target);
        EXPECT_NEAR(std::accumulate(res.probabilities.begin(), res.probabilities.end(), 0.0), 1.0, 1e-6);
    }
}

TEST(GradCam, RejectsBadTargetsAndLayers) {
    const auto bb = mpoxtest::tiny_backbone(32);
    const auto model = build_model(bb, HeadConfig{}, TaskKind::binary, 3);
    Tensor x(32, 32, 3);
    EXPECT_THROW(grad_cam(model, x, 2), Error);
    EXPECT_THROW(grad_cam(model, x, -1), Error);
    EXPECT_THROW(grad_cam(model, Tensor(16, 16, 3), 0), Error);
    EXPECT_THROW(grad_cam(model, x, 0, GradCamOptions{"no_such_layer"}), Error);
    EXPECT_EQ(grad_cam(model, x, 0, GradCamOptions{"dw"}).layer, "dw");
}

TEST(Overlay, BlendsAndValidatesAlpha) {
    ImageTensor img(8, 8, 3);
    img.fill(100.0f);
    Tensor hm(4, 4, 1);
    hm.fill(1.0f);
    const auto table = colormap_table(Colormap::inferno);
    const auto out = overlay(img, hm, 0.25);
    ASSERT_EQ(out.height(), 8);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(3, 5, c), 0.25 * table[255][static_cast<std::size_t>(c)] + 75.0, 1e-4);
    EXPECT_EQ(overlay(img, hm, 0.0), img);
    EXPECT_THROW(overlay(img, hm, 1.5), Error);
    EXPECT_THROW(overlay(img, hm, -0.1), Error);
    EXPECT_THROW(parse_colormap("viridis"), Error);
    EXPECT_EQ(parse_colormap("turbo"), Colormap::turbo);
    const auto png = encode_heatmap(hm);
    EXPECT_EQ(decode_image(png).at(0, 0, 0), 255.0f);
}
