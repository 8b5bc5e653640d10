#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/core/image.hpp"
#include "mpox/core/version.hpp"
#include "mpox/data/preprocess.hpp"
#include "mpox/deploy/artifact.hpp"
#include "mpox/xai/grad_cam.hpp"

// after Eigen: <resolv.h> (pulled in by httplib) defines a `_res` macro that
// collides with Eigen parameter names
#include <httplib.h>

namespace mpox::service {

inline constexpr std::size_t kMaxUploadBytes = 10 * 1024 * 1024;
inline constexpr const char* kDisclaimer =
    "Preliminary screening aid only. This result is not a medical diagnosis; consult a qualified clinician.";

/// Failure with an HTTP status and a machine-readable code.
struct ServiceError : std::runtime_error {
    int status;
    std::string code;
    ServiceError(int s, std::string c, const std::string& msg) : std::runtime_error(msg), status(s), code(std::move(c)) {}
};

struct LoadedModel {
    std::string id;
    TrainedModel model;
    nn::Precision precision = nn::Precision::fp32;
    std::string version;  ///< artifact digest prefix
};

inline nlohmann::json describe(const LoadedModel& m) {
    return {{"id", m.id},
            {"backbone", m.model.backbone->graph.backbone_name()},
            {"task", to_string(m.model.task)},
            {"precision", to_string(m.precision)},
            {"class_names", class_names(m.model.task)},
            {"input_shape", {m.model.backbone->input_shape().h, m.model.backbone->input_shape().w, 3}},
            {"version", m.version}};
}

inline LoadedModel make_loaded(std::string id, const deploy::ModelArtifact& a) {
    return {std::move(id), deploy::load_model(a), a.precision, a.digest().substr(0, 12)};
}

/// Immutable list of models; reload swaps the whole list under a lock.
class Catalog {
public:
    using List = std::vector<std::shared_ptr<const LoadedModel>>;

    void replace(List models) {
        auto next = std::make_shared<const List>(std::move(models));
        std::lock_guard lock(mu_);
        list_ = std::move(next);
    }
    std::shared_ptr<const List> snapshot() const {
        std::lock_guard lock(mu_);
        return list_;
    }
    std::shared_ptr<const LoadedModel> find(const std::string& id) const {
        const auto s = snapshot();
        if (id.empty() && !s->empty()) return s->front();
        for (const auto& m : *s)
            if (m->id == id) return m;
        return nullptr;
    }

private:
    mutable std::mutex mu_;
    std::shared_ptr<const List> list_ = std::make_shared<const List>();
};

/// Every subdirectory holding a `model.blob` becomes a model named after it.
inline Catalog::List load_catalog(const std::filesystem::path& dir) {
    require(std::filesystem::is_directory(dir), ErrorCode::not_found, "model directory not found: " + dir.string());
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory() && std::filesystem::exists(e.path() / "model.blob")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    Catalog::List out;
    for (const auto& d : dirs)
        out.push_back(std::make_shared<const LoadedModel>(make_loaded(d.filename().string(), deploy::load_artifact(d))));
    return out;
}

struct PredictRequest {
    std::vector<std::uint8_t> image;
    std::optional<Rect> crop;
    std::string model_id;
    bool explain = false;
    double overlay_alpha = 0.5;
};

struct PredictResponse {
    std::vector<std::string> class_names;
    std::vector<double> probabilities;
    int top_index = 0;
    std::string model_id, backbone, task, precision, version;
    std::optional<Rect> crop;
    std::string overlay_png;  ///< base64, empty unless explained
    std::string heatmap_png;
    std::string explained_layer;
    double latency_ms = 0.0;
};

inline nlohmann::json to_json(const PredictResponse& r) {
    nlohmann::json probs = nlohmann::json::array();
    for (std::size_t i = 0; i < r.probabilities.size(); ++i)
        probs.push_back({{"label", r.class_names[i]}, {"index", i}, {"probability", r.probabilities[i]}});
    nlohmann::json j{{"api_version", kApiVersion},
                     {"service_version", kVersion},
                     {"model", {{"id", r.model_id}, {"backbone", r.backbone}, {"task", r.task},
                                {"precision", r.precision}, {"version", r.version}}},
                     {"probabilities", probs},
                     {"top_label", r.class_names.at(static_cast<std::size_t>(r.top_index))},
                     {"top_index", r.top_index},
                     {"latency_ms", r.latency_ms},
                     {"disclaimer", kDisclaimer}};
    j["crop"] = r.crop ? nlohmann::json{{"x", r.crop->x}, {"y", r.crop->y}, {"w", r.crop->w}, {"h", r.crop->h}}
                       : nlohmann::json();
    if (!r.overlay_png.empty())
        j["explanation"] = {{"overlay_png_base64", r.overlay_png},
                            {"heatmap_png_base64", r.heatmap_png},
                            {"layer", r.explained_layer},
                            {"target_index", r.top_index}};
    return j;
}

/// Tensor exactly as the model sees it for this request.
inline Tensor preprocess_request(const LoadedModel& m, const ImageTensor& decoded, const std::optional<Rect>& crop) {
    auto cfg = m.model.backbone->preprocess_config();
    cfg.crop = crop;
    return preprocess_image(decoded, cfg);
}

inline PredictResponse handle_predict(const Catalog& catalog, const PredictRequest& req) {
    const auto start = std::chrono::steady_clock::now();
    if (req.image.size() > kMaxUploadBytes)
        throw ServiceError(413, "payload_too_large", "image exceeds the 10 MB upload limit");
    const auto m = catalog.find(req.model_id);
    if (!m) throw ServiceError(404, "unknown_model", "no model with id '" + req.model_id + "'");
    if (!(req.overlay_alpha >= 0.0 && req.overlay_alpha <= 1.0))
        throw ServiceError(400, "invalid_alpha", "overlay alpha must lie in [0,1]");
    ImageTensor decoded;
    try {
        decoded = decode_image(req.image);
    } catch (const Error& e) {
        throw ServiceError(400, "undecodable_image", e.what());
    }
    if (req.crop && !req.crop->within(decoded.width(), decoded.height()))
        throw ServiceError(400, "crop_out_of_bounds",
                           "crop rectangle lies outside the " + std::to_string(decoded.width()) + "x" +
                               std::to_string(decoded.height()) + " image");
    const Tensor input = preprocess_request(*m, decoded, req.crop);

    PredictResponse r;
    r.class_names = class_names(m->model.task);
    r.model_id = m->id;
    r.backbone = m->model.backbone->graph.backbone_name();
    r.task = to_string(m->model.task);
    r.precision = to_string(m->precision);
    r.version = m->version;
    r.crop = req.crop;
    if (req.explain) {
        const auto top = argmax(predict(m->model, input));
        const auto cam = xai::grad_cam(m->model, input, top);
        r.probabilities = cam.probabilities;
        const ImageTensor base = req.crop ? crop(decoded, *req.crop) : decoded;
        r.overlay_png = base64_encode(encode_image(xai::overlay(base, cam.heatmap, req.overlay_alpha), ".png"));
        r.heatmap_png = base64_encode(xai::encode_heatmap(cam.heatmap));
        r.explained_layer = cam.layer;
    } else {
        r.probabilities = predict(m->model, input);
    }
    r.top_index = argmax(r.probabilities);
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline nlohmann::json handle_models(const Catalog& catalog) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : *catalog.snapshot()) models.push_back(describe(*m));
    return {{"models", models}};
}

inline nlohmann::json handle_health(const Catalog& catalog) {
    return {{"status", "ok"}, {"version", kVersion}, {"api_version", kApiVersion},
            {"models_loaded", catalog.snapshot()->size()}};
}

// --- wire format --------------------------------------------------------------

namespace detail {

inline bool parse_bool(const std::string& s) {
    return s == "1" || s == "true" || s == "yes" || s == "on";
}

inline Rect parse_crop_json(const nlohmann::json& c) {
    try {
        return Rect{c.at("x").get<int>(), c.at("y").get<int>(), c.at("w").get<int>(), c.at("h").get<int>()};
    } catch (const nlohmann::json::exception&) {
        throw ServiceError(400, "invalid_crop", "crop must be an object with integer x, y, w, h");
    }
}

}  // namespace detail

/// Multipart (`image` file, optional `crop` JSON or `crop_x/y/w/h`, `model`,
/// `explain`, `alpha`) or JSON (`image_base64`, `crop`, `model`, `explain`, `alpha`).
inline PredictRequest parse_predict_request(const httplib::Request& req) {
    PredictRequest out;
    if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw ServiceError(400, "missing_image", "multipart field 'image' is required");
        const auto f = req.get_file_value("image");
        out.image.assign(f.content.begin(), f.content.end());
        auto field = [&](const char* key) -> std::optional<std::string> {
            if (!req.has_file(key)) return std::nullopt;
            return req.get_file_value(key).content;
        };
        if (auto v = field("model")) out.model_id = *v;
        if (auto v = field("explain")) out.explain = detail::parse_bool(*v);
        try {
            if (auto v = field("alpha")) out.overlay_alpha = std::stod(*v);
            if (auto v = field("crop")) {
                out.crop = detail::parse_crop_json(nlohmann::json::parse(*v));
            } else if (auto x = field("crop_x")) {
                auto need = [&](const char* k) {
                    auto s = field(k);
                    if (!s) throw ServiceError(400, "invalid_crop", std::string("missing ") + k);
                    return std::stoi(*s);
                };
                out.crop = Rect{std::stoi(*x), need("crop_y"), need("crop_w"), need("crop_h")};
            }
        } catch (const ServiceError&) {
            throw;
        } catch (const std::exception&) {
            throw ServiceError(400, "invalid_field", "malformed crop or alpha field");
        }
        return out;
    }
    nlohmann::json body;
    try {
        body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
        throw ServiceError(400, "undecodable_image", "body is neither multipart form data nor JSON");
    }
    if (!body.is_object() || !body.contains("image_base64") || !body["image_base64"].is_string())
        throw ServiceError(400, "missing_image", "JSON body needs a string field 'image_base64'");
    try {
        out.image = base64_decode(body["image_base64"].get<std::string>());
    } catch (const Error& e) {
        throw ServiceError(400, "undecodable_image", e.what());
    }
    out.model_id = body.value("model", std::string{});
    if (body.contains("explain")) {
        if (!body["explain"].is_boolean()) throw ServiceError(400, "invalid_field", "explain must be a boolean");
        out.explain = body["explain"].get<bool>();
    }
    if (body.contains("alpha")) {
        if (!body["alpha"].is_number()) throw ServiceError(400, "invalid_field", "alpha must be a number");
        out.overlay_alpha = body["alpha"].get<double>();
    }
    if (body.contains("crop") && !body["crop"].is_null()) out.crop = detail::parse_crop_json(body["crop"]);
    return out;
}

inline void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

inline nlohmann::json error_body(int status, const std::string& code, const std::string& message) {
    return {{"error", {{"status", status}, {"code", code}, {"message", message}}}, {"disclaimer", kDisclaimer}};
}

/// Registers the API routes, CORS headers and the JSON error handler.
inline void install_routes(httplib::Server& svr, const Catalog& catalog) {
    svr.set_payload_max_length(kMaxUploadBytes + 64 * 1024);  // multipart framing on top of the image
    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    svr.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    svr.Get("/api/v1/health", [&catalog](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, handle_health(catalog));
    });
    svr.Get("/api/v1/models", [&catalog](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, handle_models(catalog));
    });
    svr.Post("/api/v1/predict", [&catalog](const httplib::Request& req, httplib::Response& res) {
        try {
            send_json(res, 200, to_json(handle_predict(catalog, parse_predict_request(req))));
        } catch (const ServiceError& e) {
            send_json(res, e.status, error_body(e.status, e.code, e.what()));
        } catch (const Error& e) {
            send_json(res, 400, error_body(400, to_string(e.code()), e.what()));
        } catch (const std::exception& e) {
            send_json(res, 500, error_body(500, "internal", e.what()));
        }
    });
    svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        const std::string code = res.status == 413 ? "payload_too_large" : res.status == 404 ? "not_found" : "http_error";
        send_json(res, res.status, error_body(res.status, code, httplib::status_message(res.status)));
    });
}

}  // namespace mpox::service
