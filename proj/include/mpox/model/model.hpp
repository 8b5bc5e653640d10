#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/augment/augment.hpp"
#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/data/labels.hpp"
#include "mpox/model/backbone.hpp"
#include "mpox/model/head.hpp"
#include "mpox/nn/container.hpp"

namespace mpox {

/// Images resized to the backbone input, pixel values in [0, 255], with
/// their task-specific target codes.
struct ImageSet {
    std::vector<std::string> ids;
    std::vector<ImageTensor> images;
    std::vector<int> targets;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }

    void add(std::string id, ImageTensor image, int target) {
        ids.push_back(std::move(id));
        images.push_back(std::move(image));
        targets.push_back(target);
    }

    ImageSet subset(const std::vector<std::size_t>& idx) const {
        ImageSet out;
        for (auto i : idx) out.add(ids.at(i), images.at(i), targets.at(i));
        return out;
    }

    ImageSet select(const std::vector<std::string>& wanted) const {
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;
        std::vector<std::size_t> idx;
        for (const auto& id : wanted) {
            auto it = pos.find(id);
            require(it != pos.end(), ErrorCode::not_found, "image " + id + " not loaded");
            idx.push_back(it->second);
        }
        return subset(idx);
    }
};

enum class AccessKind { read, augment };

/// Append-only record of which image ids were read in which context. Used to
/// prove that held-out data never reaches model selection or training.
class AccessLog {
public:
    struct Entry {
        std::string context;
        std::string id;
        AccessKind kind;
    };

    void record(const std::string& context, const std::string& id, AccessKind kind) {
        std::lock_guard lock(mu_);
        entries_.push_back({context, id, kind});
    }

    std::vector<Entry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    std::set<std::string> ids(const std::string& context_prefix, std::optional<AccessKind> kind = std::nullopt) const {
        std::lock_guard lock(mu_);
        std::set<std::string> out;
        for (const auto& e : entries_)
            if (e.context.rfind(context_prefix, 0) == 0 && (!kind || e.kind == *kind)) out.insert(e.id);
        return out;
    }

private:
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
};

/// Un-augmented embeddings keyed by (backbone digest, image id).
class EmbeddingCache {
public:
    std::vector<float> get(const Backbone& backbone, const std::string& id, const ImageTensor& image) {
        const std::string key = backbone.digest + "/" + id;
        {
            std::lock_guard lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        auto e = backbone.embed(normalize(image, backbone.value_range()));
        std::lock_guard lock(mu_);
        return cache_.emplace(key, std::move(e)).first->second;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return cache_.size();
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<float>> cache_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
    bool early_stopped = false;
    std::string monitor = "val_accuracy";
};

inline nlohmann::json to_json(const TrainingHistory& h) {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : h.epochs)
        ep.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}});
    return {{"epochs", ep}, {"best_epoch", h.best_epoch}, {"best_val_accuracy", h.best_val_accuracy},
            {"early_stopped", h.early_stopped}, {"monitor", h.monitor}};
}

inline TrainingHistory training_history_from_json(const nlohmann::json& j) {
    TrainingHistory h;
    for (const auto& e : j.at("epochs"))
        h.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("train_accuracy").get<double>(),
                            e.at("val_loss").get<double>(), e.at("val_accuracy").get<double>()});
    h.best_epoch = j.at("best_epoch").get<int>();
    h.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    h.early_stopped = j.value("early_stopped", false);
    h.monitor = j.value("monitor", std::string("val_accuracy"));
    return h;
}

/// Frozen backbone + trained head.
struct TrainedModel {
    std::shared_ptr<const Backbone> backbone;
    Head head;
    HeadConfig config;
    TaskKind task = TaskKind::multiclass;
    TrainingHistory history;
    int fold = -1;
    std::uint64_t seed = 0;

    int classes() const { return class_count(task); }
    std::size_t trainable_params() const { return head.parameter_count(); }
};

inline TrainedModel build_model(std::shared_ptr<const Backbone> backbone, const HeadConfig& config, TaskKind task,
                                std::uint64_t seed) {
    require(backbone != nullptr, ErrorCode::not_found, "backbone weights artifact unavailable");
    config.validate();
    Rng rng(derive_seed(seed, {0x4EAD}));
    TrainedModel m;
    m.head = Head(backbone->feature_dim(), config.hidden_units(), config.hidden_dropout(), class_count(task), rng);
    m.backbone = std::move(backbone);
    m.config = config;
    m.task = task;
    m.seed = seed;
    return m;
}

struct TrainOptions {
    int max_epochs = 50;
    int batch_size = 32;
    int patience = 10;
    std::optional<AugmentConfig> augment;
    std::uint64_t seed = 0;
    std::string context = "train";
};

namespace detail {

inline MatrixF stack_rows(const std::vector<std::vector<float>>& rows, int dim) {
    MatrixF x(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(static_cast<int>(rows[r].size()) == dim, ErrorCode::invalid_argument, "embedding dimension mismatch");
        std::copy(rows[r].begin(), rows[r].end(), x.row(static_cast<Eigen::Index>(r)).data());
    }
    return x;
}

inline std::vector<std::vector<float>> embed_set(const Backbone& backbone, const ImageSet& set, EmbeddingCache& cache,
                                                 AccessLog* log, const std::string& context) {
    std::vector<std::vector<float>> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (log) log->record(context, set.ids[i], AccessKind::read);
        out.push_back(cache.get(backbone, set.ids[i], set.images[i]));
    }
    return out;
}

inline std::pair<double, double> evaluate_embeddings(const Head& head, const MatrixF& x, const std::vector<int>& targets) {
    if (targets.empty()) return {0.0, 0.0};
    const auto probs = Head::softmax(head.logits(x));
    double loss = 0.0;
    int correct = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const auto& p = probs[r];
        loss += -std::log(std::max(p[static_cast<std::size_t>(targets[r])], 1e-12));
        if (std::max_element(p.begin(), p.end()) - p.begin() == targets[r]) ++correct;
    }
    return {loss / static_cast<double>(targets.size()), static_cast<double>(correct) / static_cast<double>(targets.size())};
}

}  // namespace detail

/// Fit the head on `train` with early stopping on `val` accuracy. The backbone
/// is never modified. The returned model holds the best epoch's weights. When
/// `val` is empty, training accuracy is monitored instead.
inline TrainedModel train(TrainedModel model, const ImageSet& train_set, const ImageSet& val_set,
                          const TrainOptions& opt, EmbeddingCache& cache, AccessLog* log = nullptr) {
    require(!train_set.empty(), ErrorCode::invalid_argument, "empty training set");
    require(opt.max_epochs >= 1 && opt.batch_size >= 1, ErrorCode::invalid_argument, "max_epochs and batch_size must be >= 1");
    {
        const std::set<std::string> t(train_set.ids.begin(), train_set.ids.end());
        for (const auto& id : val_set.ids)
            require(!t.count(id), ErrorCode::invalid_argument, "image " + id + " is in both train and validation sets");
    }
    if (opt.augment) opt.augment->validate();
    const Backbone& bb = *model.backbone;
    const int dim = bb.feature_dim();

    const MatrixF x_val = detail::stack_rows(detail::embed_set(bb, val_set, cache, log, opt.context + "/val"), dim);
    MatrixF x_train;
    if (!opt.augment) x_train = detail::stack_rows(detail::embed_set(bb, train_set, cache, log, opt.context + "/train"), dim);

    AdamState adam = model.head.make_optimizer(model.config.learning_rate);
    TrainingHistory& hist = model.history;
    hist = TrainingHistory{};
    hist.monitor = val_set.empty() ? "train_accuracy" : "val_accuracy";
    Head best = model.head;
    double best_score = -1.0;
    int since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        if (opt.augment) {
            std::vector<std::vector<float>> rows;
            rows.reserve(train_set.size());
            for (std::size_t i = 0; i < train_set.size(); ++i) {
                if (log) log->record(opt.context + "/train", train_set.ids[i], AccessKind::augment);
                Rng rng(derive_seed(opt.seed, {0xA06, static_cast<std::uint64_t>(epoch), i}));
                const ImageTensor aug = augment(train_set.images[i], *opt.augment, rng);
                rows.push_back(bb.embed(normalize(aug, bb.value_range())));
            }
            x_train = detail::stack_rows(rows, dim);
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(opt.seed, {0x5F1E, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        Rng dropout_rng(derive_seed(opt.seed, {0xD209, static_cast<std::uint64_t>(epoch)}));

        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
            MatrixF xb(static_cast<Eigen::Index>(end - start), dim);
            std::vector<int> tb;
            for (std::size_t k = start; k < end; ++k) {
                xb.row(static_cast<Eigen::Index>(k - start)) = x_train.row(static_cast<Eigen::Index>(order[k]));
                tb.push_back(train_set.targets[order[k]]);
            }
            const auto [loss, ok] = model.head.train_step(xb, tb, adam, dropout_rng);
            if (!std::isfinite(loss)) fail(ErrorCode::runtime, "non-finite training loss at epoch " + std::to_string(epoch + 1));
            loss_sum += loss * static_cast<double>(end - start);
            correct += ok;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
        std::tie(rec.val_loss, rec.val_accuracy) = detail::evaluate_embeddings(model.head, x_val, val_set.targets);
        if (val_set.empty()) {
            std::tie(rec.val_loss, rec.val_accuracy) = detail::evaluate_embeddings(model.head, x_train, train_set.targets);
        }
        hist.epochs.push_back(rec);
        if (rec.val_accuracy > best_score) {
            best_score = rec.val_accuracy;
            best = model.head;
            hist.best_epoch = rec.epoch;
            hist.best_val_accuracy = rec.val_accuracy;
            since_best = 0;
        } else if (++since_best >= opt.patience) {
            hist.early_stopped = true;
            break;
        }
    }
    model.head = std::move(best);
    model.seed = opt.seed;
    return model;
}

inline std::vector<double> predict_embedding(const TrainedModel& model, const std::vector<float>& embedding) {
    return Head::softmax(model.head.logits(detail::stack_rows({embedding}, model.head.input_dim())))[0];
}

/// Class probabilities for one normalised input tensor.
inline std::vector<double> predict(const TrainedModel& model, const Tensor& normalized) {
    require(normalized.shape() == model.backbone->input_shape(), ErrorCode::invalid_argument,
            "input shape " + normalized.shape().str() + " does not match " + model.backbone->input_shape().str());
    return predict_embedding(model, model.backbone->embed(normalized));
}

inline int argmax(const std::vector<double>& p) {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Probabilities for every image of a set (un-augmented, cached embeddings).
inline std::vector<std::vector<double>> predict_set(const TrainedModel& model, const ImageSet& set, EmbeddingCache& cache,
                                                    AccessLog* log = nullptr, const std::string& context = "predict") {
    if (set.empty()) return {};
    const auto rows = detail::embed_set(*model.backbone, set, cache, log, context);
    return Head::softmax(model.head.logits(detail::stack_rows(rows, model.head.input_dim())));
}

struct EmbeddingMatrix {
    std::vector<std::string> ids;
    Eigen::MatrixXd values;  ///< one row per image
};

inline EmbeddingMatrix extract_embeddings(const Backbone& backbone, const std::vector<std::string>& ids,
                                          const std::vector<Tensor>& normalized) {
    require(ids.size() == normalized.size(), ErrorCode::invalid_argument, "one id per image");
    EmbeddingMatrix m;
    m.ids = ids;
    m.values.resize(static_cast<Eigen::Index>(ids.size()), backbone.feature_dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(normalized[i].shape() == backbone.input_shape(), ErrorCode::invalid_argument,
                "image " + ids[i] + " has shape " + normalized[i].shape().str());
        const auto e = backbone.embed(normalized[i]);
        for (std::size_t c = 0; c < e.size(); ++c) m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = e[c];
    }
    return m;
}

inline EmbeddingMatrix extract_embeddings(const TrainedModel& model, const std::vector<std::string>& ids,
                                          const std::vector<Tensor>& normalized) {
    return extract_embeddings(*model.backbone, ids, normalized);
}

// --- serialisation ---------------------------------------------------------

inline void put_head(nn::Container& c, const Head& head, nn::Precision precision) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& L : head.layers()) {
        const std::vector<float> w(L.weight.data(), L.weight.data() + L.weight.size());
        const std::vector<float> b(L.bias.data(), L.bias.data() + L.bias.size());
        layers.push_back({{"kernel", c.put(w, {static_cast<int>(L.weight.rows()), static_cast<int>(L.weight.cols())}, precision)},
                          {"bias", c.put(b, {static_cast<int>(L.bias.size())}, precision)}});
    }
    c.header["head"] = {{"layers", layers}, {"dropout", head.dropout()}};
}

inline Head get_head(const nn::Container& c) {
    try {
        const auto& h = c.header.at("head");
        std::vector<DenseLayer> layers;
        for (const auto& L : h.at("layers")) {
            std::vector<int> ks, bs;
            auto w = c.get(L.at("kernel"), &ks);
            auto b = c.get(L.at("bias"), &bs);
            require(ks.size() == 2 && bs.size() == 1 && bs[0] == ks[1], ErrorCode::parse, "malformed head layer");
            DenseLayer d;
            d.weight = Eigen::Map<MatrixF>(w.data(), ks[0], ks[1]);
            d.bias = Eigen::Map<RowVectorF>(b.data(), bs[0]);
            layers.push_back(std::move(d));
        }
        return Head(std::move(layers), h.at("dropout").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed head: ") + e.what());
    }
}

inline nlohmann::json model_metadata(const TrainedModel& m) {
    return {{"backbone", to_string(m.backbone->id)},
            {"backbone_digest", m.backbone->digest},
            {"feature_dim", m.backbone->feature_dim()},
            {"head_config", to_json(m.config)},
            {"task", to_string(m.task)},
            {"class_names", class_names(m.task)},
            {"history", to_json(m.history)},
            {"fold", m.fold},
            {"seed", m.seed},
            {"trainable_params", m.trainable_params()}};
}

inline void apply_metadata(TrainedModel& m, const nlohmann::json& meta) {
    try {
        m.config = head_config_from_json(meta.at("head_config"));
        m.task = parse_task(meta.at("task").get<std::string>());
        m.history = training_history_from_json(meta.at("history"));
        m.fold = meta.at("fold").get<int>();
        m.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed model metadata: ") + e.what());
    }
}

/// Directory form: `metadata.json` + `head.bin`. The backbone is referenced by
/// id and digest and loaded from `backbone_dir` on reload.
inline void save_trained_model(const TrainedModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nn::Container c;
    put_head(c, m.head, nn::Precision::fp32);
    write_file_bytes((dir / "head.bin").string(), c.serialize());
    write_text_file((dir / "metadata.json").string(), model_metadata(m).dump(2) + "\n");
}

inline TrainedModel load_trained_model(const std::filesystem::path& dir, std::shared_ptr<const Backbone> backbone) {
    const auto meta = nlohmann::json::parse(read_text_file((dir / "metadata.json").string()));
    require(backbone != nullptr, ErrorCode::not_found, "backbone weights artifact unavailable");
    require(meta.at("backbone").get<std::string>() == to_string(backbone->id), ErrorCode::invalid_argument,
            "model was trained on " + meta.at("backbone").get<std::string>());
    require(meta.at("backbone_digest").get<std::string>() == backbone->digest, ErrorCode::invalid_argument,
            "backbone weights differ from the ones the model was trained with");
    TrainedModel m;
    m.backbone = std::move(backbone);
    apply_metadata(m, meta);
    m.head = get_head(nn::Container::load((dir / "head.bin").string()));
    return m;
}

inline TrainedModel load_trained_model(const std::filesystem::path& dir, const std::filesystem::path& backbone_dir) {
    const auto meta = nlohmann::json::parse(read_text_file((dir / "metadata.json").string()));
    const auto id = parse_backbone(meta.at("backbone").get<std::string>());
    return load_trained_model(dir, load_backbone(id, backbone_dir));
}

}  // namespace mpox
