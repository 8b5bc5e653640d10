#pragma once

#include <atomic>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/data/folds.hpp"
#include "mpox/data/manifest.hpp"
#include "mpox/data/preprocess.hpp"
#include "mpox/eval/metrics.hpp"
#include "mpox/hpo/hyperband.hpp"
#include "mpox/model/model.hpp"

namespace mpox {

/// Decode every manifest image and resize it to the backbone input. Pixels stay
/// in [0, 255]; normalisation happens after augmentation.
inline ImageSet load_images(const DatasetManifest& manifest, const Backbone& backbone) {
    PreprocessConfig p = backbone.preprocess_config();
    p.value_range = ValueRange::raw255;
    ImageSet set;
    for (const auto& r : manifest.records) {
        const auto bytes = read_file_bytes(manifest.resolve(r).string());
        set.add(r.id, preprocess_image(bytes, p), r.target);
    }
    return set;
}

struct CVOptions {
    TaskKind task = TaskKind::binary;
    bool augment = false;
    HyperbandConfig hyperband;
    SearchSpace space;          ///< `augmentation` is overwritten from `augment`
    int k = 10;
    std::uint64_t seed = 42;
    int final_epochs = 50;      ///< budget for retraining the selected config
    int batch_size = 32;
    int patience = 10;
    int jobs = 1;               ///< folds run concurrently
};

struct FoldResult {
    int fold = 0;
    MetricSet metrics;
    ConfusionMatrix confusion;
    TrialConfig best_config;
    double best_val_score = 0.0;
    int best_trial = -1;
    long hpo_epochs = 0;
    int failed_trials = 0;
    std::vector<TrialRecord> trials;
    std::vector<std::string> test_ids;
    std::vector<int> truth;
    std::vector<int> predicted;
    TrainingHistory final_history;
    std::uint64_t seed = 0;
};

struct CVReport {
    TaskKind task = TaskKind::binary;
    std::string backbone;
    bool augmentation = false;
    int k = 0;
    std::uint64_t seed = 0;
    HyperbandConfig hyperband;
    std::vector<FoldResult> folds;
    MetricSummary summary;
    ConfusionMatrix pooled;
    bool isolation_verified = false;

    std::vector<double> fold_accuracies() const {
        std::vector<double> v;
        for (const auto& f : folds) v.push_back(f.metrics.accuracy);
        return v;
    }
};

inline nlohmann::json to_json(const CVReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"metrics", to_json(f.metrics)},
                         {"confusion", to_json(f.confusion)},
                         {"best_config", to_json(f.best_config)},
                         {"best_val_score", f.best_val_score},
                         {"best_trial", f.best_trial},
                         {"hpo_epochs", f.hpo_epochs},
                         {"trials", f.trials.size()},
                         {"failed_trials", f.failed_trials},
                         {"final_history", to_json(f.final_history)},
                         {"seed", f.seed}});
    }
    nlohmann::json columns;
    for (const char* m : {"accuracy", "sensitivity", "specificity", "f1"}) {
        const auto mean = to_json(r.summary.mean), sd = to_json(r.summary.std);
        columns[m] = {{"mean", mean[m]}, {"std", sd[m]}};
    }
    return {{"task", to_string(r.task)},
            {"backbone", r.backbone},
            {"augmentation", r.augmentation},
            {"k", r.k},
            {"seed", r.seed},
            {"hyperband", {{"R", r.hyperband.R}, {"eta", r.hyperband.eta}, {"seed", r.hyperband.seed}}},
            {"metrics", columns},
            {"mean", to_json(r.summary.mean)},
            {"std", to_json(r.summary.std)},
            {"pooled_confusion", to_json(r.pooled)},
            {"isolation_verified", r.isolation_verified},
            {"folds", folds}};
}

/// Read back the parts of a report the stats module needs.
inline CVReport cv_report_from_json(const nlohmann::json& j) {
    CVReport r;
    try {
        r.task = parse_task(j.at("task").get<std::string>());
        r.backbone = j.at("backbone").get<std::string>();
        r.augmentation = j.at("augmentation").get<bool>();
        r.k = j.at("k").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        std::vector<MetricSet> ms;
        for (const auto& f : j.at("folds")) {
            FoldResult fr;
            fr.fold = f.at("fold").get<int>();
            const auto& m = f.at("metrics");
            fr.metrics.accuracy = m.at("accuracy").get<double>();
            fr.metrics.sensitivity = m.at("sensitivity").get<double>();
            fr.metrics.specificity = m.at("specificity").get<double>();
            fr.metrics.precision = m.at("precision").get<double>();
            fr.metrics.f1 = m.at("f1").get<double>();
            fr.best_config = trial_config_from_json(f.at("best_config"));
            if (f.contains("confusion")) fr.confusion = confusion_from_json(f.at("confusion"));
            ms.push_back(fr.metrics);
            r.folds.push_back(std::move(fr));
        }
        if (!ms.empty()) r.summary = aggregate(ms);
        if (j.contains("pooled_confusion")) r.pooled = confusion_from_json(j.at("pooled_confusion"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed CV report: ") + e.what());
    }
    return r;
}

/// Run one held-out fold: Hyperband on its train/val split, retrain the winner
/// on train (early stopping on val), evaluate once on the held-out records.
inline FoldResult run_fold(const FoldPlan& plan, int fold, const ImageSet& images, std::shared_ptr<const Backbone> backbone,
                           const CVOptions& opt, EmbeddingCache& cache, AccessLog& log) {
    FoldResult fr;
    fr.fold = fold;
    fr.seed = derive_seed(opt.seed, {0xF0, static_cast<std::uint64_t>(fold)});
    const ImageSet train_set = images.select(plan.train_ids(fold));
    const ImageSet val_set = images.select(plan.val_ids(fold));
    const std::string ctx = "fold" + std::to_string(fold);

    SearchSpace space = opt.space;
    space.augmentation = opt.augment;
    HyperbandConfig hb = opt.hyperband;
    hb.seed = derive_seed(fr.seed, {0x4B});
    const Objective objective = [&](const TrialConfig& cfg, int epochs, std::uint64_t seed) {
        TrainOptions t;
        t.max_epochs = epochs;
        t.batch_size = opt.batch_size;
        t.patience = opt.patience;
        t.augment = cfg.augment;
        t.seed = seed;
        t.context = ctx + "/hpo";
        const auto m = train(build_model(backbone, cfg.head, opt.task, seed), train_set, val_set, t, cache, &log);
        return m.history.best_val_accuracy;
    };
    const auto hpo = run_hyperband(space, objective, hb);
    fr.trials = hpo.trials;
    fr.hpo_epochs = hpo.total_epochs;
    for (const auto& t : hpo.trials) fr.failed_trials += t.failed ? 1 : 0;
    if (fr.failed_trials == static_cast<int>(hpo.trials.size())) {
        fail(ErrorCode::runtime, "fold " + std::to_string(fold) + ": every Hyperband trial failed (first error: " +
                                     hpo.trials.front().error + ")");
    }
    fr.best_config = hpo.best;
    fr.best_val_score = hpo.best_score;
    fr.best_trial = hpo.best_trial;

    TrainOptions final_opt;
    final_opt.max_epochs = opt.final_epochs;
    final_opt.batch_size = opt.batch_size;
    final_opt.patience = opt.patience;
    final_opt.augment = hpo.best.augment;
    final_opt.seed = derive_seed(fr.seed, {0xF1A1});
    final_opt.context = ctx + "/final";
    auto model = train(build_model(backbone, hpo.best.head, opt.task, final_opt.seed), train_set, val_set, final_opt, cache, &log);
    model.fold = fold;
    fr.final_history = model.history;

    const ImageSet test_set = images.select(plan.test_ids(fold));
    const auto probs = predict_set(model, test_set, cache, &log, ctx + "/test");
    fr.test_ids = test_set.ids;
    fr.truth = test_set.targets;
    for (const auto& p : probs) fr.predicted.push_back(argmax(p));
    fr.confusion = confusion(fr.truth, fr.predicted, class_count(opt.task));
    fr.metrics = compute_metrics(fr.confusion, opt.task);
    return fr;
}

struct FoldModel {
    TrainedModel model;
    ImageSet test;
};

/// Train a fixed configuration on fold f's dev split (early stopping on its
/// validation part) and return it with the held-out records.
inline FoldModel train_fold_model(const FoldPlan& plan, int fold, const ImageSet& images,
                                  std::shared_ptr<const Backbone> backbone, const TrialConfig& config,
                                  const CVOptions& opt, EmbeddingCache& cache, AccessLog* log = nullptr) {
    const ImageSet train_set = images.select(plan.train_ids(fold));
    const ImageSet val_set = images.select(plan.val_ids(fold));
    TrainOptions t;
    t.max_epochs = opt.final_epochs;
    t.batch_size = opt.batch_size;
    t.patience = opt.patience;
    t.augment = config.augment;
    t.seed = derive_seed(derive_seed(opt.seed, {0xF0, static_cast<std::uint64_t>(fold)}), {0xF1A1});
    t.context = "fold" + std::to_string(fold) + "/final";
    FoldModel out{train(build_model(std::move(backbone), config.head, opt.task, t.seed), train_set, val_set, t, cache, log),
                  images.select(plan.test_ids(fold))};
    out.model.fold = fold;
    return out;
}

/// Check that fold f's selection and training never read its held-out records
/// and that only training records were augmented.
inline void verify_isolation(const FoldPlan& plan, int fold, const AccessLog& log) {
    const std::string ctx = "fold" + std::to_string(fold);
    const auto test = plan.test_ids(fold);
    const std::set<std::string> test_set(test.begin(), test.end());
    const auto train = plan.train_ids(fold);
    const std::set<std::string> train_set(train.begin(), train.end());
    for (const char* phase : {"/hpo", "/final"}) {
        for (const auto& id : log.ids(ctx + phase))
            require(!test_set.count(id), ErrorCode::runtime,
                    "held-out record " + id + " was read during " + ctx + phase);
        for (const auto& id : log.ids(ctx + phase, AccessKind::augment))
            require(train_set.count(id) > 0, ErrorCode::runtime, "non-training record " + id + " was augmented in " + ctx);
    }
}

inline CVReport run_cross_validation(const DatasetManifest& manifest, const ImageSet& images,
                                     std::shared_ptr<const Backbone> backbone, const CVOptions& opt,
                                     AccessLog* access_log = nullptr, EmbeddingCache* shared_cache = nullptr) {
    require(backbone != nullptr, ErrorCode::not_found, "backbone weights artifact unavailable");
    require(manifest.task == opt.task, ErrorCode::invalid_argument, "manifest task does not match the requested task");
    const FoldPlan plan = make_stratified_folds(manifest, opt.k, opt.seed);
    AccessLog local_log;
    AccessLog& log = access_log ? *access_log : local_log;
    EmbeddingCache local_cache;
    EmbeddingCache& cache = shared_cache ? *shared_cache : local_cache;

    CVReport report;
    report.task = opt.task;
    report.backbone = to_string(backbone->id);
    report.augmentation = opt.augment;
    report.k = opt.k;
    report.seed = opt.seed;
    report.hyperband = opt.hyperband;
    report.folds.resize(static_cast<std::size_t>(opt.k));

    std::vector<std::string> errors(static_cast<std::size_t>(opt.k));
    auto work = [&](int f) {
        try {
            report.folds[static_cast<std::size_t>(f)] = run_fold(plan, f, images, backbone, opt, cache, log);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(f)] = e.what();
        }
    };
    const int jobs = std::max(1, std::min(opt.jobs, opt.k));
    if (jobs == 1) {
        for (int f = 0; f < opt.k; ++f) work(f);
    } else {
        std::atomic<int> cursor{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w)
            pool.emplace_back([&] {
                for (int f; (f = cursor.fetch_add(1)) < opt.k;) work(f);
            });
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) fail(ErrorCode::runtime, e);

    for (int f = 0; f < opt.k; ++f) verify_isolation(plan, f, log);
    report.isolation_verified = true;

    std::vector<MetricSet> ms;
    report.pooled = ConfusionMatrix(class_count(opt.task));
    for (const auto& f : report.folds) {
        ms.push_back(f.metrics);
        report.pooled += f.confusion;
    }
    report.summary = aggregate(ms);
    return report;
}

}  // namespace mpox
