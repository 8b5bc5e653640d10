// mpoxscreen: command-line entry point for the screening pipeline.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpox/cli/pipeline.hpp"
#include "mpox/data/folds.hpp"
#include "mpox/data/manifest.hpp"
#include "mpox/deploy/artifact.hpp"
#include "mpox/deploy/benchmark.hpp"
#include "mpox/eval/cross_validation.hpp"
#include "mpox/model/pca.hpp"
#include "mpox/stats/compare.hpp"
#include "mpox/xai/grad_cam.hpp"
#include "mpox/service/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpox;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(const cli::PipelineConfig& cfg, const std::vector<std::string>& need) {
    const auto problems = cli::validate(cfg, need);
    if (problems.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
}

void require_paths(const std::vector<std::string>& paths, const char* field) {
    for (const auto& p : paths)
        if (!fs::exists(p)) throw ConfigError(std::string("invalid configuration:\n  ") + field + ": not found: " + p);
}

fs::path prepare(const cli::PipelineConfig& cfg, const std::string& command, const json& settings) {
    const auto dir = cli::run_directory(cfg.output, command, settings);
    fs::create_directories(dir);
    write_text_file((dir / "config.json").string(), settings.dump(2) + "\n");
    return dir;
}

void write_json(const fs::path& p, const json& j) { write_text_file(p.string(), j.dump(2) + "\n"); }

std::optional<Rect> parse_crop(const std::string& s) {
    if (s.empty()) return std::nullopt;
    Rect r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream in(s);
    if (!(in >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',')
        throw ConfigError("invalid configuration:\n  crop: expected x,y,w,h");
    return r;
}

std::string report_label(const CVReport& r) { return r.backbone + (r.augmentation ? "-aug" : ""); }

// --- subcommands --------------------------------------------------------------

int cmd_validate(const cli::PipelineConfig& cfg) {
    check(cfg, {"manifest"});
    const auto m = load_manifest(cfg.manifest);
    const auto dir = prepare(cfg, "validate", {{"manifest", fs::absolute(cfg.manifest).string()}, {"version", m.version}});
    const auto report = validate_manifest(m);
    write_json(dir / "validation.json", to_json(report));
    for (const auto& c : report.checks) {
        std::cout << (c.passed ? "ok   " : "FAIL ") << c.name << "\n";
        for (const auto& d : c.details) std::cout << "     " << d << "\n";
    }
    std::cout << "records: " << m.records.size() << "\nreport: " << (dir / "validation.json").string() << "\n";
    return report.passed() ? 0 : 2;
}

int cmd_folds(const cli::PipelineConfig& cfg) {
    check(cfg, {"manifest", "k"});
    const auto m = load_manifest(cfg.manifest);
    const auto dir = prepare(cfg, "folds", {{"manifest_version", m.version}, {"k", cfg.k}, {"seed", cfg.seed}});
    const auto plan = make_stratified_folds(m, cfg.k, cfg.seed);
    write_json(dir / "folds.json", to_json(plan));
    std::cout << "fold plan: " << (dir / "folds.json").string() << "\n";
    return 0;
}

struct CvExtras {
    int batch_size = 32;
    int patience = 10;
    std::vector<int> dense;
    std::vector<int> n_layers;
};

CVOptions cv_options(const cli::PipelineConfig& cfg, const CvExtras& x) {
    CVOptions o;
    o.task = parse_task(cfg.task);
    o.augment = cfg.augment;
    o.hyperband.R = cfg.hyperband_R;
    o.hyperband.eta = cfg.hyperband_eta;
    o.k = cfg.k;
    o.seed = cfg.seed;
    o.final_epochs = cfg.final_epochs;
    o.batch_size = x.batch_size;
    o.patience = x.patience;
    o.jobs = cfg.jobs;
    if (!x.dense.empty()) o.space.dense = x.dense;
    if (!x.n_layers.empty()) o.space.n_layers = x.n_layers;
    o.space.augmentation = cfg.augment;
    o.space.validate();
    return o;
}

DatasetManifest manifest_for_task(const cli::PipelineConfig& cfg) {
    auto m = load_manifest(cfg.manifest);
    return parse_task(cfg.task) == TaskKind::binary ? relabel_binary(m) : m;
}

int cmd_cv(const cli::PipelineConfig& cfg, const CvExtras& x) {
    check(cfg, {"manifest", "backbones", "backbone_dir", "task", "hyperband", "k"});
    const auto opt = cv_options(cfg, x);
    const auto manifest = manifest_for_task(cfg);
    json settings = cli::to_json(cfg);
    settings["manifest_version"] = manifest.version;
    settings["batch_size"] = x.batch_size;
    settings["patience"] = x.patience;
    settings["dense"] = opt.space.dense;
    settings["n_layers"] = opt.space.n_layers;
    settings.erase("manifest");
    settings.erase("backbone_dir");
    const auto dir = prepare(cfg, "cv", settings);
    std::vector<CVReport> reports;
    for (const auto& name : cfg.backbones) {
        const auto backbone = load_backbone(parse_backbone(name), cfg.backbone_dir);
        std::cout << "cv " << to_string(backbone->id) << " (" << cfg.task << ", augmentation "
                  << (cfg.augment ? "on" : "off") << ", k=" << cfg.k << ")" << std::endl;
        const auto images = load_images(manifest, *backbone);
        const auto report = run_cross_validation(manifest, images, backbone, opt);
        const auto sub = dir / report_label(report);
        fs::create_directories(sub / "trials");
        write_json(sub / "report.json", to_json(report));
        for (const auto& f : report.folds)
            write_trial_log(f.trials, (sub / "trials" / ("fold" + std::to_string(f.fold) + ".jsonl")).string());
        std::cout << "  accuracy " << report.summary.mean.accuracy << " (±" << report.summary.std.accuracy << ")\n";
        reports.push_back(report);
    }
    write_text_file((dir / "results.md").string(), cli::results_table(reports));
    std::cout << cli::results_table(reports) << "output: " << dir.string() << "\n";
    return 0;
}

CVReport read_report(const std::string& path) {
    return cv_report_from_json(json::parse(read_text_file(path)));
}

stats::ComparisonReport build_comparison(const std::vector<CVReport>& reports, const std::vector<std::string>& aug_pairs) {
    stats::ComparisonReport cmp;
    if (reports.size() >= 2) cmp = stats::compare_models(reports);
    for (const auto& pair : aug_pairs) {
        const auto comma = pair.find(',');
        if (comma == std::string::npos) throw ConfigError("invalid configuration:\n  aug-pair: expected NOAUG.json,AUG.json");
        const auto a = read_report(pair.substr(0, comma));
        const auto b = read_report(pair.substr(comma + 1));
        auto res = stats::compare_augmentation(stats::sample_from_report(a, a.backbone), stats::sample_from_report(b, b.backbone));
        cmp.augmentation.push_back(std::move(res));
    }
    return cmp;
}

int cmd_stats(const cli::PipelineConfig& cfg, const std::vector<std::string>& report_paths,
              const std::vector<std::string>& aug_pairs) {
    require_paths(report_paths, "report");
    if (report_paths.size() < 2 && aug_pairs.empty())
        throw ConfigError("invalid configuration:\n  report: at least two CV reports (or one --aug-pair) are needed");
    std::vector<CVReport> reports;
    json settings{{"reports", json::array()}, {"aug_pairs", aug_pairs}};
    for (const auto& p : report_paths) {
        reports.push_back(read_report(p));
        settings["reports"].push_back(sha256_hex(read_text_file(p)).substr(0, 16));
    }
    const auto dir = prepare(cfg, "stats", settings);
    const auto cmp = build_comparison(reports, aug_pairs);
    write_json(dir / "comparison.json", to_json(cmp));
    write_text_file((dir / "narrative.txt").string(), stats::narrative(cmp));
    std::cout << stats::narrative(cmp) << "output: " << dir.string() << "\n";
    return 0;
}

int cmd_report(const cli::PipelineConfig& cfg, const std::vector<std::string>& report_paths,
               const std::vector<std::string>& trial_paths) {
    require_paths(report_paths, "report");
    require_paths(trial_paths, "trials");
    if (report_paths.empty()) throw ConfigError("invalid configuration:\n  report: at least one CV report is required");
    std::vector<CVReport> reports;
    json settings{{"reports", json::array()}, {"trials", json::array()}};
    for (const auto& p : report_paths) {
        reports.push_back(read_report(p));
        settings["reports"].push_back(sha256_hex(read_text_file(p)).substr(0, 16));
    }
    for (const auto& p : trial_paths) settings["trials"].push_back(sha256_hex(read_text_file(p)).substr(0, 16));
    const auto dir = prepare(cfg, "report", settings);

    std::map<TaskKind, std::vector<CVReport>> by_task;
    for (const auto& r : reports) by_task[r.task].push_back(r);
    std::string tables;
    for (const auto& [task, rs] : by_task) {
        tables += std::string("## ") + (task == TaskKind::binary ? "Binary" : "Multiclass") + " classification\n\n";
        tables += cli::results_table(rs) + "\n";
        for (const auto& r : rs) {
            tables += "Pooled confusion matrix, " + report_label(r) + " (rows: truth, columns: prediction)\n\n";
            const auto& names = class_names(r.task);
            tables += "| |";
            for (const auto& n : names) tables += " " + n + " |";
            tables += "\n|---|";
            for (std::size_t i = 0; i < names.size(); ++i) tables += "---|";
            tables += "\n";
            for (int t = 0; t < r.pooled.n_classes; ++t) {
                tables += "| " + names[static_cast<std::size_t>(t)] + " |";
                for (int p = 0; p < r.pooled.n_classes; ++p) tables += " " + std::to_string(r.pooled.at(t, p)) + " |";
                tables += "\n";
            }
            tables += "\n";
        }
        if (rs.size() >= 2) {
            const auto cmp = stats::compare_models(rs);
            write_json(dir / (std::string("comparison_") + to_string(task) + ".json"), to_json(cmp));
            tables += "```\n" + stats::narrative(cmp) + "```\n\n";
        }
    }
    write_text_file((dir / "tables.md").string(), tables);

    // Trial logs: explicit ones, else the ones written next to each report.
    std::vector<std::string> logs = trial_paths;
    if (logs.empty())
        for (const auto& p : report_paths) {
            const auto tdir = fs::path(p).parent_path() / "trials";
            if (!fs::is_directory(tdir)) continue;
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(tdir))
                if (e.path().extension() == ".jsonl") found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            logs.insert(logs.end(), found.begin(), found.end());
        }
    fs::create_directories(dir / "exploration");
    for (const auto& log : logs) {
        std::ifstream in(log);
        const auto trials = read_trial_log(in);
        const auto stem = fs::path(log).parent_path().parent_path().filename().string() + "_" + fs::path(log).stem().string();
        write_json(dir / "exploration" / (stem + ".json"), cli::emit_exploration_plot_data(trials));
    }
    std::cout << tables << "exploration plot data: " << logs.size() << " trial logs\noutput: " << dir.string() << "\n";
    return 0;
}

struct QuantizeExtras {
    std::string model_dir;
    std::string cv_report;
    int fold = 0;
    CvExtras cv;
};

int cmd_quantize(const cli::PipelineConfig& cfg, const QuantizeExtras& q) {
    TrainedModel model;
    std::optional<ImageSet> test;
    json settings;
    if (!q.model_dir.empty()) {
        require_paths({q.model_dir}, "model-dir");
        check(cfg, {"backbone_dir"});
        model = load_trained_model(q.model_dir, cfg.backbone_dir);
        settings = {{"model", model_metadata(model)}};
    } else {
        check(cfg, {"manifest", "backbones", "backbone_dir", "task", "k"});
        if (cfg.backbones.size() != 1) throw ConfigError("invalid configuration:\n  backbones: quantize takes exactly one");
        if (q.fold < 0 || q.fold >= cfg.k) throw ConfigError("invalid configuration:\n  fold: must lie in 0..k-1");
        const auto opt = cv_options(cfg, q.cv);
        const auto manifest = manifest_for_task(cfg);
        const auto backbone = load_backbone(parse_backbone(cfg.backbones.front()), cfg.backbone_dir);
        TrialConfig trial;
        if (!q.cv_report.empty()) {
            require_paths({q.cv_report}, "cv-report");
            const auto r = read_report(q.cv_report);
            if (r.backbone != to_string(backbone->id) || r.task != opt.task || q.fold >= static_cast<int>(r.folds.size()))
                throw ConfigError("invalid configuration:\n  cv-report: backbone, task or fold does not match");
            trial = r.folds[static_cast<std::size_t>(q.fold)].best_config;
        } else {
            trial.head.n_layers = 1;
            trial.head.dense = {256, 0, 0};
            trial.head.learning_rate = 1e-3;
        }
        settings = cli::to_json(cfg);
        settings.erase("manifest");
        settings.erase("backbone_dir");
        settings["manifest_version"] = manifest.version;
        settings["fold"] = q.fold;
        settings["trial"] = to_json(trial);
        const auto plan = make_stratified_folds(manifest, cfg.k, cfg.seed);
        EmbeddingCache cache;
        auto fm = train_fold_model(plan, q.fold, load_images(manifest, *backbone), backbone, trial, opt, cache);
        model = std::move(fm.model);
        test = std::move(fm.test);
    }
    const auto dir = prepare(cfg, "quantize", settings);
    const auto fp32 = deploy::export_artifact(model, nn::Precision::fp32);
    const auto fp16 = deploy::quantize_fp16(model);
    deploy::save_artifact(fp32, dir / "fp32");
    deploy::save_artifact(fp16, dir / "fp16");
    save_trained_model(model, dir / "model");
    const deploy::SizeReport sizes{fs::file_size(dir / "fp32" / "model.blob"), fs::file_size(dir / "fp16" / "model.blob")};
    write_json(dir / "sizes.json", to_json(sizes));
    std::cout << "fp32 " << sizes.fp32_bytes << " bytes, fp16 " << sizes.fp16_bytes << " bytes, ratio " << sizes.ratio()
              << "\n";
    if (test) {
        const auto e32 = deploy::evaluate_artifact(deploy::load_artifact(dir / "fp32"), *test);
        const auto e16 = deploy::evaluate_artifact(deploy::load_artifact(dir / "fp16"), *test);
        int changed = 0;
        for (std::size_t i = 0; i < e32.predicted.size(); ++i) changed += e32.predicted[i] != e16.predicted[i];
        write_json(dir / "evaluation.json", {{"fold", q.fold},
                                             {"fp32", to_json(e32.metrics)},
                                             {"fp16", to_json(e16.metrics)},
                                             {"accuracy_delta", e16.metrics.accuracy - e32.metrics.accuracy},
                                             {"changed_predictions", changed},
                                             {"test_records", test->size()}});
        std::cout << "held-out accuracy fp32 " << e32.metrics.accuracy << ", fp16 " << e16.metrics.accuracy << "\n";
    }
    std::cout << "output: " << dir.string() << "\n";
    return 0;
}

int cmd_bench(const cli::PipelineConfig& cfg, const std::vector<std::string>& artifacts, const deploy::BenchmarkOptions& b) {
    if (artifacts.empty()) throw ConfigError("invalid configuration:\n  artifact: at least one artifact directory is required");
    require_paths(artifacts, "artifact");
    if (b.n_runs < 1 || b.threads < 1 || b.warmup < 0)
        throw ConfigError("invalid configuration:\n  runs/threads must be >= 1, warmup >= 0");
    json settings{{"runs", b.n_runs}, {"threads", b.threads}, {"warmup", b.warmup}, {"artifacts", json::array()}};
    for (const auto& a : artifacts) settings["artifacts"].push_back(deploy::load_artifact(a).digest().substr(0, 16));
    const auto dir = prepare(cfg, "bench", settings);
    json out = json::array();
    std::string table = "| Task | Model | Quantized | Mean (s) | Std (s) |\n|---|---|---|---|---|\n";
    for (const auto& a : artifacts) {
        const auto r = deploy::benchmark_inference(deploy::load_artifact(a), b);
        out.push_back(to_json(r));
        std::ostringstream row;
        row << std::fixed << std::setprecision(4) << "| " << r.task << " | " << r.model << " | "
            << (r.quantized ? "yes" : "no") << " | " << r.mean << " | " << r.std << " |\n";
        table += row.str();
    }
    write_json(dir / "benchmark.json", out);
    write_text_file((dir / "benchmark.md").string(), table);
    std::cout << table << "output: " << dir.string() << "\n";
    return 0;
}

int cmd_xai(const cli::PipelineConfig& cfg, const std::string& artifact, const std::vector<std::string>& images,
            const std::string& crop_text, double alpha, const std::string& colormap, int target) {
    if (artifact.empty()) throw ConfigError("invalid configuration:\n  artifact: required");
    if (images.empty()) throw ConfigError("invalid configuration:\n  image: at least one image is required");
    require_paths({artifact}, "artifact");
    require_paths(images, "image");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("invalid configuration:\n  alpha: must lie in [0,1]");
    const auto cm = xai::parse_colormap(colormap);
    const auto crop_rect = parse_crop(crop_text);
    const auto a = deploy::load_artifact(artifact);
    const auto model = deploy::load_model(a);
    json settings{{"artifact", a.digest().substr(0, 16)}, {"alpha", alpha}, {"colormap", colormap},
                  {"crop", crop_text}, {"target", target}, {"images", json::array()}};
    for (const auto& p : images) settings["images"].push_back(sha256_hex(read_file_bytes(p)).substr(0, 16));
    const auto dir = prepare(cfg, "xai", settings);
    json index = json::array();
    for (const auto& p : images) {
        const auto decoded = decode_image(read_file_bytes(p));
        auto pc = model.backbone->preprocess_config();
        pc.crop = crop_rect;
        const auto input = preprocess_image(decoded, pc);
        const int cls = target >= 0 ? target : argmax(predict(model, input));
        const auto cam = xai::grad_cam(model, input, cls);
        const ImageTensor base = crop_rect ? crop(decoded, *crop_rect) : decoded;
        const auto stem = fs::path(p).stem().string();
        write_file_bytes((dir / (stem + "_heatmap.png")).string(), xai::encode_heatmap(cam.heatmap));
        write_file_bytes((dir / (stem + "_overlay.png")).string(), encode_image(xai::overlay(base, cam.heatmap, alpha, cm)));
        index.push_back({{"image", p},
                         {"target_class", cls},
                         {"target_label", class_names(model.task)[static_cast<std::size_t>(cls)]},
                         {"probabilities", cam.probabilities},
                         {"layer", cam.layer}});
        std::cout << stem << ": " << class_names(model.task)[static_cast<std::size_t>(cls)] << " (layer " << cam.layer << ")\n";
    }
    write_json(dir / "index.json", index);
    std::cout << "output: " << dir.string() << "\n";
    return 0;
}

int cmd_embed(const cli::PipelineConfig& cfg, int dims) {
    check(cfg, {"manifest", "backbones", "backbone_dir"});
    if (dims < 1) throw ConfigError("invalid configuration:\n  dims: must be >= 1");
    const auto manifest = load_manifest(cfg.manifest);
    json settings{{"manifest_version", manifest.version}, {"backbones", cfg.backbones}, {"dims", dims}};
    const auto dir = prepare(cfg, "embed", settings);
    for (const auto& name : cfg.backbones) {
        const auto backbone = load_backbone(parse_backbone(name), cfg.backbone_dir);
        std::vector<std::string> ids;
        std::vector<Tensor> inputs;
        for (const auto& r : manifest.records) {
            ids.push_back(r.id);
            inputs.push_back(preprocess_image(read_file_bytes(manifest.resolve(r).string()), backbone->preprocess_config()));
        }
        const auto emb = extract_embeddings(*backbone, ids, inputs);
        const auto pca = pca_project(emb.values, dims);
        json points = json::array();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            std::vector<double> c(static_cast<std::size_t>(dims));
            for (int d = 0; d < dims; ++d) c[static_cast<std::size_t>(d)] = pca.coordinates(static_cast<Eigen::Index>(i), d);
            points.push_back({{"id", ids[i]}, {"label", to_string(manifest.records[i].label)}, {"coordinates", c}});
        }
        write_json(dir / (std::string(to_string(backbone->id)) + "_pca.json"),
                   {{"backbone", to_string(backbone->id)},
                    {"feature_dim", backbone->feature_dim()},
                    {"explained_variance", pca.explained_variance},
                    {"explained_variance_ratio", pca.explained_variance_ratio},
                    {"points", points}});
        std::ofstream csv(dir / (std::string(to_string(backbone->id)) + "_embeddings.csv"));
        csv << "id,label";
        for (Eigen::Index c = 0; c < emb.values.cols(); ++c) csv << ",f" << c;
        csv << "\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            csv << ids[i] << ',' << to_string(manifest.records[i].label);
            for (Eigen::Index c = 0; c < emb.values.cols(); ++c) csv << ',' << emb.values(static_cast<Eigen::Index>(i), c);
            csv << "\n";
        }
        std::cout << to_string(backbone->id) << ": explained variance ratio";
        for (double v : pca.explained_variance_ratio) std::cout << " " << v;
        std::cout << "\n";
    }
    std::cout << "output: " << dir.string() << "\n";
    return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const cli::PipelineConfig& cfg, const std::string& models_dir) {
    check(cfg, {"port"});
    if (models_dir.empty()) throw ConfigError("invalid configuration:\n  models: required");
    require_paths({models_dir}, "models");
    service::Catalog catalog;
    catalog.replace(service::load_catalog(models_dir));
    if (catalog.snapshot()->empty()) throw ConfigError("invalid configuration:\n  models: no model.blob found under " + models_dir);
    httplib::Server svr;
    service::install_routes(svr, catalog);
    g_server = &svr;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    for (const auto& m : *catalog.snapshot()) std::cout << "model " << m->id << " (" << to_string(m->precision) << ")\n";
    std::cout << "listening on http://" << cfg.host << ":" << cfg.port << std::endl;
    if (!svr.listen(cfg.host, cfg.port)) {
        std::cerr << "error: cannot listen on " << cfg.host << ":" << cfg.port << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skin-lesion screening pipeline: data checks, cross-validation, statistics, explanations, deployment."};
    app.set_config("--config", "", "TOML/INI file with option values; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    cli::PipelineConfig cfg;
    app.add_option("--output,-o", cfg.output, "Output root; each run writes <output>/<command>-<digest>/")
        ->capture_default_str();
    app.add_option("--seed", cfg.seed, "Seed for folds, search and training")->capture_default_str();
    app.add_option("--jobs,-j", cfg.jobs, "Worker threads")->capture_default_str();

    auto add_manifest = [&](CLI::App* s) { s->add_option("--manifest,-m", cfg.manifest, "Dataset manifest CSV"); };
    auto add_backbones = [&](CLI::App* s) {
        s->add_option("--backbone,-b", cfg.backbones, "Backbone name(s)")->capture_default_str();
        s->add_option("--backbone-dir", cfg.backbone_dir, "Directory with <Backbone>.bbn weight files")->capture_default_str();
    };
    auto add_training = [&](CLI::App* s, CvExtras& x) {
        s->add_option("--task,-t", cfg.task, "binary or multiclass")->capture_default_str();
        s->add_flag("--augment,!--no-augment", cfg.augment, "Train-time augmentation");
        s->add_option("--k", cfg.k, "Number of folds")->capture_default_str();
        s->add_option("--R", cfg.hyperband_R, "Hyperband maximum resource (epochs)")->capture_default_str();
        s->add_option("--eta", cfg.hyperband_eta, "Hyperband reduction factor")->capture_default_str();
        s->add_option("--final-epochs", cfg.final_epochs, "Epoch budget when retraining the selected config")
            ->capture_default_str();
        s->add_option("--batch-size", x.batch_size, "Mini-batch size")->capture_default_str();
        s->add_option("--patience", x.patience, "Early-stopping patience (epochs)")->capture_default_str();
        s->add_option("--dense", x.dense, "Restrict dense-unit choices (subset of 256..4096)");
        s->add_option("--n-layers", x.n_layers, "Restrict head depth choices (subset of 1..3)");
    };

    auto* validate = app.add_subcommand("validate", "Check manifest files, decodability, duplicates and balance");
    add_manifest(validate);

    auto* folds = app.add_subcommand("folds", "Write the stratified fold plan");
    add_manifest(folds);
    folds->add_option("--k", cfg.k, "Number of folds")->capture_default_str();

    CvExtras cvx;
    auto* cv = app.add_subcommand("cv", "Cross-validate backbones with Hyperband head search");
    add_manifest(cv);
    add_backbones(cv);
    add_training(cv, cvx);

    std::vector<std::string> reports, aug_pairs, trials;
    auto* st = app.add_subcommand("stats", "Compare CV reports (ANOVA-RM, Tukey HSD, augmentation tests)");
    st->add_option("--report,-r", reports, "CV report.json files (same fold plan)");
    st->add_option("--aug-pair", aug_pairs, "NOAUG.json,AUG.json pair for the augmentation test");

    std::string artifact, crop_text, colormap = "inferno";
    std::vector<std::string> images;
    double alpha = 0.5;
    int target = -1;
    auto* xai_cmd = app.add_subcommand("xai", "Export Grad-CAM heatmaps and overlays");
    xai_cmd->add_option("--artifact,-a", artifact, "Model artifact directory (model.blob + meta)");
    xai_cmd->add_option("--image,-i", images, "Input image(s)");
    xai_cmd->add_option("--crop", crop_text, "Crop rectangle x,y,w,h in source pixels");
    xai_cmd->add_option("--alpha", alpha, "Overlay opacity in [0,1]")->capture_default_str();
    xai_cmd->add_option("--colormap", colormap, "inferno, turbo or jet")->capture_default_str();
    xai_cmd->add_option("--class", target, "Target class code (default: predicted class)");

    QuantizeExtras qx;
    auto* quant = app.add_subcommand("quantize", "Train (or load) a model and write fp32/fp16 artifacts");
    quant->add_option("--model-dir", qx.model_dir, "Saved trained model (metadata.json + head.bin)");
    quant->add_option("--cv-report", qx.cv_report, "Take the fold's selected config from this CV report");
    quant->add_option("--fold", qx.fold, "Held-out fold for training and evaluation")->capture_default_str();
    add_manifest(quant);
    add_backbones(quant);
    add_training(quant, qx.cv);

    std::vector<std::string> bench_artifacts;
    deploy::BenchmarkOptions bopt;
    auto* bench = app.add_subcommand("bench", "Time single-image inference on synthetic input");
    bench->add_option("--artifact,-a", bench_artifacts, "Model artifact directory(ies)");
    bench->add_option("--runs", bopt.n_runs, "Timed runs")->capture_default_str();
    bench->add_option("--warmup", bopt.warmup, "Untimed warmup runs")->capture_default_str();
    bench->add_option("--threads", bopt.threads, "Intra-op threads")->capture_default_str();

    int dims = 3;
    auto* embed = app.add_subcommand("embed", "Extract backbone embeddings and their PCA projection");
    add_manifest(embed);
    add_backbones(embed);
    embed->add_option("--dims", dims, "PCA dimensions")->capture_default_str();

    std::string models_dir;
    auto* serve = app.add_subcommand("serve", "Serve the prediction API");
    serve->add_option("--models", models_dir, "Directory of artifact directories");
    serve->add_option("--host", cfg.host, "Bind address")->capture_default_str();
    serve->add_option("--port", cfg.port, "Port")->capture_default_str();

    auto* report = app.add_subcommand("report", "Tables, confusion matrices and search-exploration plot data");
    report->add_option("--report,-r", reports, "CV report.json files");
    report->add_option("--trials", trials, "Trial logs (.jsonl); default: trials/ next to each report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*validate) return cmd_validate(cfg);
        if (*folds) return cmd_folds(cfg);
        if (*cv) return cmd_cv(cfg, cvx);
        if (*st) return cmd_stats(cfg, reports, aug_pairs);
        if (*xai_cmd) return cmd_xai(cfg, artifact, images, crop_text, alpha, colormap, target);
        if (*quant) return cmd_quantize(cfg, qx);
        if (*bench) return cmd_bench(cfg, bench_artifacts, bopt);
        if (*embed) return cmd_embed(cfg, dims);
        if (*serve) return cmd_serve(cfg, models_dir);
        if (*report) return cmd_report(cfg, reports, trials);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
