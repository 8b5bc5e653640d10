#pragma once

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/eval/cross_validation.hpp"
#include "mpox/hpo/hyperband.hpp"

namespace mpox::cli {

/// Settings shared by the subcommands. Seeds are always explicit.
struct PipelineConfig {
    std::string manifest;
    std::vector<std::string> backbones{"MobileNetV3Small"};
    std::string backbone_dir = "backbones";
    std::string task = "binary";
    bool augment = false;
    long hyperband_R = 27;
    long hyperband_eta = 3;
    int k = 10;
    std::uint64_t seed = 42;
    int jobs = 1;
    int final_epochs = 50;
    std::string output = "runs";
    std::string host = "127.0.0.1";
    int port = 8080;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    return {{"manifest", c.manifest}, {"backbones", c.backbones}, {"backbone_dir", c.backbone_dir},
            {"task", c.task},         {"augment", c.augment},     {"hyperband_R", c.hyperband_R},
            {"hyperband_eta", c.hyperband_eta}, {"k", c.k},       {"seed", c.seed},
            {"final_epochs", c.final_epochs}};
}

/// One message per offending field; empty means valid. `need` lists the
/// fields the running subcommand actually reads.
inline std::vector<std::string> validate(const PipelineConfig& c, const std::vector<std::string>& need) {
    std::vector<std::string> out;
    auto wants = [&](const char* f) { return std::find(need.begin(), need.end(), f) != need.end(); };
    if (wants("manifest")) {
        if (c.manifest.empty()) out.push_back("manifest: required");
        else if (!std::filesystem::is_regular_file(c.manifest)) out.push_back("manifest: file not found: " + c.manifest);
    }
    if (wants("backbones")) {
        if (c.backbones.empty()) out.push_back("backbones: at least one backbone is required");
        for (const auto& b : c.backbones) {
            try {
                (void)parse_backbone(b);
            } catch (const Error&) {
                out.push_back("backbones: unknown backbone '" + b + "'");
            }
        }
    }
    if (wants("backbone_dir") && !std::filesystem::is_directory(c.backbone_dir))
        out.push_back("backbone_dir: directory not found: " + c.backbone_dir);
    if (wants("task") && c.task != "binary" && c.task != "multiclass")
        out.push_back("task: must be 'binary' or 'multiclass', got '" + c.task + "'");
    if (wants("hyperband")) {
        if (c.hyperband_R < 1) out.push_back("hyperband_R: must be >= 1");
        if (c.hyperband_eta < 2) out.push_back("hyperband_eta: must be >= 2");
        if (c.final_epochs < 1) out.push_back("final_epochs: must be >= 1");
    }
    if (wants("k") && c.k < 2) out.push_back("k: must be >= 2");
    if (c.jobs < 1) out.push_back("jobs: must be >= 1");
    if (wants("port") && (c.port < 1 || c.port > 65535)) out.push_back("port: must lie in 1..65535");
    return out;
}

/// Output directory `<output>/<command>-<digest>`; the digest covers the
/// command name and its effective settings, so reruns land in the same place.
inline std::filesystem::path run_directory(const std::string& output, const std::string& command,
                                           const nlohmann::json& settings) {
    const auto digest = sha256_hex(command + "\n" + settings.dump()).substr(0, 12);
    return std::filesystem::path(output) / (command + "-" + digest);
}

/// Per-dimension (trial, value, accuracy) series plus the best-trial marker
/// (highest score, ties to the lowest trial id).
inline nlohmann::json emit_exploration_plot_data(const std::vector<TrialRecord>& trials) {
    require(!trials.empty(), ErrorCode::invalid_argument, "trial log is empty");
    const auto& best = best_trial(trials);
    std::vector<std::string> dims;
    for (const auto& t : trials) {
        const auto cfg = to_json(t.config);
        for (const auto& [k, v] : cfg.items())
            if (std::find(dims.begin(), dims.end(), k) == dims.end()) dims.push_back(k);
    }
    nlohmann::json series = nlohmann::json::object();
    for (const auto& d : dims) {
        nlohmann::json points = nlohmann::json::array();
        for (const auto& t : trials) {
            const auto cfg = to_json(t.config);
            points.push_back({{"trial_id", t.trial_id},
                              {"value", cfg.contains(d) ? cfg[d] : nlohmann::json()},
                              {"accuracy", t.score},
                              {"resource", t.resource},
                              {"failed", t.failed},
                              {"best", t.trial_id == best.trial_id}});
        }
        series[d] = points;
    }
    return {{"trials", trials.size()},
            {"best", {{"trial_id", best.trial_id}, {"accuracy", best.score}, {"config", to_json(best.config)}}},
            {"series", series}};
}

/// Markdown table with the four metric columns, one row per report, as
/// "mean (±std)".
inline std::string results_table(const std::vector<CVReport>& reports) {
    std::ostringstream os;
    os << "| Model | Augmentation | Accuracy | Sensitivity | Specificity | F-1 Score |\n";
    os << "|---|---|---|---|---|---|\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& r : reports) {
        const auto& m = r.summary.mean;
        const auto& s = r.summary.std;
        auto cell = [&](double mean, double sd) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(3) << mean << " (±" << sd << ")";
            return c.str();
        };
        os << "| " << r.backbone << " | " << (r.augmentation ? "yes" : "no") << " | " << cell(m.accuracy, s.accuracy)
           << " | " << cell(m.sensitivity, s.sensitivity) << " | " << cell(m.specificity, s.specificity) << " | "
           << cell(m.f1, s.f1) << " |\n";
    }
    return os.str();
}

}  // namespace mpox::cli
