#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"
// httplib after Eigen
#include "mpox/service/server.hpp"

using namespace mpox;
using namespace mpox::service;

namespace {

std::vector<std::uint8_t> sample_png(int w = 48, int h = 40) {
    ImageTensor img(h, w, 3);
    Rng rng(17);
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform_int(0, 255));
    return encode_image(img, ".png");
}

class ServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        catalog_ = new Catalog();
        const auto bb = mpoxtest::tiny_backbone(32);
        Catalog::List list;
        list.push_back(std::make_shared<const LoadedModel>(
            make_loaded("tiny-multi", deploy::export_artifact(build_model(bb, HeadConfig{}, TaskKind::multiclass, 1), nn::Precision::fp32))));
        list.push_back(std::make_shared<const LoadedModel>(
            make_loaded("tiny-binary", deploy::quantize_fp16(build_model(bb, HeadConfig{}, TaskKind::binary, 2)))));
        catalog_->replace(std::move(list));
        server_ = new httplib::Server();
        install_routes(*server_, *catalog_);
        port_ = server_->bind_to_any_port("127.0.0.1");
        thread_ = new std::thread([] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }
    static void TearDownTestSuite() {
        server_->stop();
        thread_->join();
        delete thread_;
        delete server_;
        delete catalog_;
    }

    static httplib::Client client() {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(60, 0);
        return c;
    }

    static nlohmann::json post_json(const nlohmann::json& body, int expect_status) {
        auto res = client().Post("/api/v1/predict", body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expect_status) << res->body;
        return nlohmann::json::parse(res->body);
    }

    static inline Catalog* catalog_ = nullptr;
    static inline httplib::Server* server_ = nullptr;
    static inline std::thread* thread_ = nullptr;
    static inline int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, HealthAndModels) {
    auto res = client().Get("/api/v1/health");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    const auto h = nlohmann::json::parse(res->body);
    EXPECT_EQ(h["status"], "ok");
    EXPECT_EQ(h["models_loaded"], 2);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

    res = client().Get("/api/v1/models");
    ASSERT_TRUE(res);
    const auto m = nlohmann::json::parse(res->body);
    ASSERT_EQ(m["models"].size(), 2u);
    EXPECT_EQ(m["models"][0]["id"], "tiny-multi");
    EXPECT_EQ(m["models"][0]["class_names"].size(), 4u);
    EXPECT_EQ(m["models"][1]["precision"], "fp16");
    EXPECT_EQ(m, handle_models(*catalog_));
}

TEST_F(ServiceTest, CorsPreflight) {
    auto res = client().Options("/api/v1/predict");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(ServiceTest, WireMatchesDirectCall) {
    const auto png = sample_png();
    PredictRequest direct;
    direct.image = png;
    direct.model_id = "tiny-multi";
    direct.crop = Rect{4, 2, 32, 30};
    const auto want = handle_predict(*catalog_, direct);

    const auto j = post_json({{"image_base64", base64_encode(png)},
                              {"model", "tiny-multi"},
                              {"crop", {{"x", 4}, {"y", 2}, {"w", 32}, {"h", 30}}}},
                             200);
    ASSERT_EQ(j["probabilities"].size(), want.probabilities.size());
    for (std::size_t i = 0; i < want.probabilities.size(); ++i)
        EXPECT_DOUBLE_EQ(j["probabilities"][i]["probability"].get<double>(), want.probabilities[i]);
    EXPECT_EQ(j["top_index"], want.top_index);
    EXPECT_EQ(j["crop"]["w"], 32);
    EXPECT_FALSE(j["disclaimer"].get<std::string>().empty());

    httplib::MultipartFormDataItems items{{"image", std::string(png.begin(), png.end()), "x.png", "image/png"},
                                          {"model", "tiny-multi", "", ""},
                                          {"crop_x", "4", "", ""},
                                          {"crop_y", "2", "", ""},
                                          {"crop_w", "32", "", ""},
                                          {"crop_h", "30", "", ""}};
    auto res = client().Post("/api/v1/predict", items);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto mp = nlohmann::json::parse(res->body);
    for (std::size_t i = 0; i < want.probabilities.size(); ++i)
        EXPECT_DOUBLE_EQ(mp["probabilities"][i]["probability"].get<double>(), want.probabilities[i]);
}

TEST_F(ServiceTest, DefaultModelAndExplanation) {
    const auto j = post_json({{"image_base64", base64_encode(sample_png(50, 44))}, {"explain", true}, {"alpha", 0.4}}, 200);
    EXPECT_EQ(j["model"]["id"], "tiny-multi");
    ASSERT_TRUE(j.contains("explanation"));
    const auto overlay = decode_image(base64_decode(j["explanation"]["overlay_png_base64"].get<std::string>()));
    EXPECT_EQ(overlay.width(), 50);
    EXPECT_EQ(overlay.height(), 44);
    const auto heat = decode_image(base64_decode(j["explanation"]["heatmap_png_base64"].get<std::string>()));
    EXPECT_EQ(heat.width(), 32);
    EXPECT_EQ(j["explanation"]["target_index"], j["top_index"]);
    double total = 0;
    for (const auto& p : j["probabilities"]) total += p["probability"].get<double>();
    EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST_F(ServiceTest, ErrorStatuses) {
    const auto png = base64_encode(sample_png());
    EXPECT_EQ(post_json({{"image_base64", png}, {"model", "nope"}}, 404)["error"]["code"], "unknown_model");
    EXPECT_EQ(post_json({{"image_base64", base64_encode(std::vector<std::uint8_t>{1, 2, 3, 4})}}, 400)["error"]["code"],
              "undecodable_image");
    EXPECT_EQ(post_json({{"image_base64", png}, {"crop", {{"x", 40}, {"y", 0}, {"w", 20}, {"h", 10}}}}, 400)["error"]["code"],
              "crop_out_of_bounds");
    EXPECT_EQ(post_json({{"image_base64", png}, {"alpha", 2.0}}, 400)["error"]["code"], "invalid_alpha");
    EXPECT_EQ(post_json({{"model", "tiny-multi"}}, 400)["error"]["code"], "missing_image");
    EXPECT_EQ(post_json({{"image_base64", png}, {"crop", {{"x", "a"}}}}, 400)["error"]["code"], "invalid_crop");

    // decoded payload over the limit is rejected before decoding
    const std::vector<std::uint8_t> big(kMaxUploadBytes + 1, 0);
    EXPECT_EQ(post_json({{"image_base64", base64_encode(big)}}, 413)["error"]["code"], "payload_too_large");
    // raw body over the transport limit is cut off by the server
    httplib::MultipartFormDataItems items{{"image", std::string(kMaxUploadBytes + 128 * 1024, 'x'), "big.png", "image/png"}};
    auto res = client().Post("/api/v1/predict", items);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 413);

    res = client().Get("/api/v1/nothing");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(nlohmann::json::parse(res->body)["error"]["code"], "not_found");
}

TEST(ServiceCatalog, LoadsArtifactsFromDirectory) {
    mpoxtest::TempDir dir;
    const auto bb = mpoxtest::tiny_backbone(32);
    deploy::save_artifact(deploy::quantize_fp16(build_model(bb, HeadConfig{}, TaskKind::binary, 4)), dir / "b");
    deploy::save_artifact(deploy::export_artifact(build_model(bb, HeadConfig{}, TaskKind::multiclass, 4), nn::Precision::fp32), dir / "a");
    std::filesystem::create_directories(dir / "empty");
    const auto list = load_catalog(dir.path());
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(list[0]->id, "a");
    EXPECT_EQ(list[1]->precision, nn::Precision::fp16);
    EXPECT_THROW(load_catalog(dir / "missing"), Error);
}
