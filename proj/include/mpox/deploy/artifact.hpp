#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/data/preprocess.hpp"
#include "mpox/eval/metrics.hpp"
#include "mpox/model/model.hpp"
#include "mpox/nn/container.hpp"

namespace mpox::deploy {

/// Self-contained serialized model: backbone graph and head in one container.
struct ModelArtifact {
    std::vector<std::uint8_t> blob;
    nn::Precision precision = nn::Precision::fp32;
    nlohmann::json provenance;  ///< backbone, task, fold, seed, source digests

    std::size_t byte_size() const { return blob.size(); }
    std::string digest() const { return sha256_hex(blob); }
};

inline ModelArtifact export_artifact(const TrainedModel& model, nn::Precision precision) {
    require(model.backbone != nullptr, ErrorCode::invalid_argument, "model has no backbone");
    nn::Container c;
    model.backbone->graph.to_container(c, precision);
    put_head(c, model.head, precision);
    c.header["model"] = model_metadata(model);
    c.header["precision"] = to_string(precision);
    ModelArtifact a;
    a.precision = precision;
    try {
        a.blob = c.serialize();
    } catch (const std::exception& e) {
        fail(ErrorCode::io, std::string("artifact serialization failed: ") + e.what());
    }
    a.provenance = {{"backbone", model.backbone->graph.backbone_name()},
                    {"backbone_digest", model.backbone->digest},
                    {"task", to_string(model.task)},
                    {"fold", model.fold},
                    {"seed", model.seed},
                    {"precision", to_string(precision)},
                    {"parameters", model.backbone->graph.parameter_count() + model.head.parameter_count()}};
    return a;
}

/// Weight-only half precision: every stored tensor becomes fp16; inference
/// dequantises to fp32 on load.
inline ModelArtifact quantize_fp16(const TrainedModel& model) {
    auto a = export_artifact(model, nn::Precision::fp16);
    a.provenance["quantized_from"] = export_artifact(model, nn::Precision::fp32).digest();
    return a;
}

inline TrainedModel load_model(const ModelArtifact& a) {
    nn::Container c;
    try {
        c = nn::Container::parse(a.blob);
    } catch (const Error& e) {
        fail(ErrorCode::decode, std::string("undecodable artifact: ") + e.what());
    }
    require(c.header.contains("model") && c.header.contains("head"), ErrorCode::decode,
            "undecodable artifact: missing model or head section");
    auto graph = nn::Graph::from_container(c);
    BackboneId id = BackboneId::mobilenet_v3_small;
    try {
        id = parse_backbone(graph.backbone_name());
    } catch (const Error&) {
        // custom graphs (tests, tools) keep the default id; the name stays on the graph
    }
    TrainedModel m;
    m.backbone = make_backbone(id, std::move(graph));
    apply_metadata(m, c.header.at("model"));
    m.head = get_head(c);
    return m;
}

inline void save_artifact(const ModelArtifact& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_bytes((dir / "model.blob").string(), a.blob);
    nlohmann::json meta = a.provenance;
    meta["precision"] = to_string(a.precision);
    meta["byte_size"] = a.byte_size();
    meta["sha256"] = a.digest();
    write_text_file((dir / "meta").string(), meta.dump(2) + "\n");
}

inline ModelArtifact load_artifact(const std::filesystem::path& dir) {
    const auto blob_path = dir / "model.blob";
    require(std::filesystem::exists(blob_path), ErrorCode::not_found, "no model.blob in " + dir.string());
    ModelArtifact a;
    a.blob = read_file_bytes(blob_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file((dir / "meta").string()));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed artifact meta: ") + e.what());
    }
    a.precision = nn::parse_precision(meta.at("precision").get<std::string>());
    require(meta.value("byte_size", a.blob.size()) == a.blob.size(), ErrorCode::decode,
            "model.blob size differs from the size recorded in meta");
    require(meta.value("sha256", a.digest()) == a.digest(), ErrorCode::decode, "model.blob digest mismatch");
    meta.erase("byte_size");
    meta.erase("sha256");
    a.provenance = meta;
    return a;
}

struct SizeReport {
    std::size_t fp32_bytes = 0, fp16_bytes = 0;
    double ratio() const { return fp16_bytes ? static_cast<double>(fp32_bytes) / static_cast<double>(fp16_bytes) : 0.0; }
};

inline nlohmann::json to_json(const SizeReport& s) {
    return {{"fp32_bytes", s.fp32_bytes},
            {"fp16_bytes", s.fp16_bytes},
            {"fp32_mb", static_cast<double>(s.fp32_bytes) / 1e6},
            {"fp16_mb", static_cast<double>(s.fp16_bytes) / 1e6},
            {"ratio", s.ratio()}};
}

inline SizeReport size_report(const TrainedModel& model) {
    return {export_artifact(model, nn::Precision::fp32).byte_size(), quantize_fp16(model).byte_size()};
}

struct ArtifactEvaluation {
    std::vector<int> truth, predicted;
    std::vector<std::vector<double>> probabilities;
    ConfusionMatrix confusion;
    MetricSet metrics;
};

/// `test.images` are raw [0,255] tensors at the model's input size.
inline ArtifactEvaluation evaluate_model(const TrainedModel& model, const ImageSet& test) {
    require(!test.empty(), ErrorCode::invalid_argument, "empty test set");
    ArtifactEvaluation ev;
    const auto range = model.backbone->value_range();
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto p = predict(model, normalize(test.images[i], range));
        ev.predicted.push_back(argmax(p));
        ev.probabilities.push_back(std::move(p));
    }
    ev.truth = test.targets;
    ev.confusion = confusion(ev.truth, ev.predicted, model.classes());
    ev.metrics = compute_metrics(ev.confusion, model.task);
    return ev;
}

inline ArtifactEvaluation evaluate_artifact(const ModelArtifact& a, const ImageSet& test) {
    return evaluate_model(load_model(a), test);
}

}  // namespace mpox::deploy
