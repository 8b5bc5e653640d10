#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"

namespace mpox {

inline constexpr std::array<int, 5> kDenseChoices{256, 512, 1024, 2048, 4096};
inline constexpr int kMaxHeadLayers = 3;
inline constexpr double kMinLearningRate = 1e-6;
inline constexpr double kMaxLearningRate = 1e-3;
inline constexpr double kMaxDropout = 0.5;

/// Classification head hyperparameters. Slots beyond n_layers hold 0.
struct HeadConfig {
    int n_layers = 1;
    std::array<int, kMaxHeadLayers> dense{256, 0, 0};
    std::array<double, kMaxHeadLayers> dropout{0.0, 0.0, 0.0};
    double learning_rate = 1e-3;

    void validate() const {
        require(n_layers >= 1 && n_layers <= kMaxHeadLayers, ErrorCode::invalid_argument, "n_layers must be 1, 2 or 3");
        for (int i = 0; i < kMaxHeadLayers; ++i) {
            const auto k = static_cast<std::size_t>(i);
            if (i < n_layers) {
                require(std::find(kDenseChoices.begin(), kDenseChoices.end(), dense[k]) != kDenseChoices.end(),
                        ErrorCode::invalid_argument, "dense_" + std::to_string(i + 1) + " must be one of 256..4096");
                require(dropout[k] >= 0.0 && dropout[k] <= kMaxDropout, ErrorCode::invalid_argument,
                        "dropout_" + std::to_string(i + 1) + " outside [0, 0.5]");
            } else {
                require(dense[k] == 0 && dropout[k] == 0.0, ErrorCode::invalid_argument,
                        "inactive head slot " + std::to_string(i + 1) + " must be 0");
            }
        }
        require(learning_rate >= kMinLearningRate && learning_rate <= kMaxLearningRate, ErrorCode::invalid_argument,
                "learning_rate outside [1e-6, 1e-3]");
    }

    std::vector<int> hidden_units() const { return {dense.begin(), dense.begin() + n_layers}; }
    std::vector<double> hidden_dropout() const { return {dropout.begin(), dropout.begin() + n_layers}; }

    /// Trainable parameter count of the head on a feature vector of size f.
    std::size_t trainable_params(int f, int classes) const {
        std::size_t n = 0;
        int in = f;
        for (int u : hidden_units()) {
            n += static_cast<std::size_t>(in + 1) * static_cast<std::size_t>(u);
            in = u;
        }
        return n + static_cast<std::size_t>(in + 1) * static_cast<std::size_t>(classes);
    }

    bool operator==(const HeadConfig&) const = default;
};

inline nlohmann::json to_json(const HeadConfig& h) {
    return {{"n_layers", h.n_layers},
            {"dense_1", h.dense[0]}, {"dense_2", h.dense[1]}, {"dense_3", h.dense[2]},
            {"dropout_1", h.dropout[0]}, {"dropout_2", h.dropout[1]}, {"dropout_3", h.dropout[2]},
            {"learning_rate", h.learning_rate}};
}

inline HeadConfig head_config_from_json(const nlohmann::json& j) {
    HeadConfig h;
    try {
        h.n_layers = j.at("n_layers").get<int>();
        for (int i = 0; i < kMaxHeadLayers; ++i) {
            h.dense[static_cast<std::size_t>(i)] = j.value("dense_" + std::to_string(i + 1), 0);
            h.dropout[static_cast<std::size_t>(i)] = j.value("dropout_" + std::to_string(i + 1), 0.0);
        }
        h.learning_rate = j.at("learning_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed head config: ") + e.what());
    }
    h.validate();
    return h;
}

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVectorF = Eigen::RowVectorXf;

struct DenseLayer {
    MatrixF weight;  ///< in x out
    RowVectorF bias;  ///< out
};

/// Adam state (Keras defaults: beta1 0.9, beta2 0.999, epsilon 1e-7).
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-7;
    long step = 0;
    std::vector<MatrixF> m_w, v_w;
    std::vector<RowVectorF> m_b, v_b;
};

/// Dense ReLU layers with inverted dropout, followed by a softmax output layer.
class Head {
public:
    Head() = default;

    Head(int input_dim, const std::vector<int>& hidden, const std::vector<double>& dropout, int classes, Rng& rng)
        : dropout_(dropout) {
        require(hidden.size() == dropout.size(), ErrorCode::invalid_argument, "one dropout rate per hidden layer");
        require(input_dim > 0 && classes >= 2, ErrorCode::invalid_argument, "head needs features and >= 2 classes");
        int in = input_dim;
        std::vector<int> sizes = hidden;
        sizes.push_back(classes);
        for (int out : sizes) {
            DenseLayer L;
            const float limit = static_cast<float>(std::sqrt(6.0 / (in + out)));
            L.weight.resize(in, out);
            for (Eigen::Index i = 0; i < L.weight.size(); ++i)
                L.weight.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
            L.bias = RowVectorF::Zero(out);
            layers_.push_back(std::move(L));
            in = out;
        }
    }

    Head(std::vector<DenseLayer> layers, std::vector<double> dropout) : layers_(std::move(layers)), dropout_(std::move(dropout)) {
        require(!layers_.empty() && dropout_.size() + 1 == layers_.size(), ErrorCode::invalid_argument,
                "head needs one dropout rate per hidden layer");
        for (std::size_t i = 1; i < layers_.size(); ++i)
            require(layers_[i].weight.rows() == layers_[i - 1].weight.cols(), ErrorCode::invalid_argument,
                    "head layer sizes do not chain");
    }

    int input_dim() const { return static_cast<int>(layers_.front().weight.rows()); }
    int classes() const { return static_cast<int>(layers_.back().weight.cols()); }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<double>& dropout() const { return dropout_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& L : layers_) n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
        return n;
    }

    MatrixF logits(const MatrixF& x) const {
        require(x.cols() == input_dim(), ErrorCode::invalid_argument, "feature dimension mismatch");
        MatrixF h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            MatrixF z = h * layers_[i].weight;
            z.rowwise() += layers_[i].bias;
            if (i + 1 < layers_.size()) z = z.cwiseMax(0.0f);
            h = std::move(z);
        }
        return h;
    }

    /// Row-wise softmax, evaluated in double precision.
    static std::vector<std::vector<double>> softmax(const MatrixF& logits) {
        std::vector<std::vector<double>> out(static_cast<std::size_t>(logits.rows()));
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            const double mx = logits.row(r).maxCoeff();
            auto& p = out[static_cast<std::size_t>(r)];
            p.resize(static_cast<std::size_t>(logits.cols()));
            double sum = 0.0;
            for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits(r, c)) - mx);
            for (auto& v : p) v /= sum;
        }
        return out;
    }

    std::vector<std::vector<double>> probabilities(const MatrixF& x) const { return softmax(logits(x)); }

    /// d logit[target] / d x for a single feature row (inference mode).
    RowVectorF logit_gradient(const RowVectorF& x, int target) const {
        require(target >= 0 && target < classes(), ErrorCode::invalid_argument, "target class out of range");
        std::vector<RowVectorF> pre;
        RowVectorF h = x;
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
            RowVectorF z = h * layers_[i].weight + layers_[i].bias;
            pre.push_back(z);
            h = z.cwiseMax(0.0f);
        }
        RowVectorF g = layers_.back().weight.col(target).transpose();
        for (std::size_t i = layers_.size() - 1; i-- > 0;) {
            for (Eigen::Index k = 0; k < g.size(); ++k)
                if (pre[i](k) <= 0.0f) g(k) = 0.0f;
            g = g * layers_[i].weight.transpose();
        }
        return g;
    }

    AdamState make_optimizer(double learning_rate) const {
        AdamState s;
        s.learning_rate = learning_rate;
        for (const auto& L : layers_) {
            s.m_w.push_back(MatrixF::Zero(L.weight.rows(), L.weight.cols()));
            s.v_w.push_back(MatrixF::Zero(L.weight.rows(), L.weight.cols()));
            s.m_b.push_back(RowVectorF::Zero(L.bias.size()));
            s.v_b.push_back(RowVectorF::Zero(L.bias.size()));
        }
        return s;
    }

    /// One Adam step on a mini-batch with categorical cross-entropy.
    /// Returns {mean loss, correct predictions} measured on the training pass.
    std::pair<double, int> train_step(const MatrixF& x, const std::vector<int>& targets, AdamState& opt, Rng& rng) {
        const auto B = x.rows();
        require(static_cast<std::size_t>(B) == targets.size() && B > 0, ErrorCode::invalid_argument, "batch/target mismatch");
        std::vector<MatrixF> acts{x};
        std::vector<MatrixF> masks;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            MatrixF z = acts.back() * layers_[i].weight;
            z.rowwise() += layers_[i].bias;
            if (i + 1 < layers_.size()) {
                MatrixF mask = (z.array() > 0.0f).cast<float>().matrix();
                const double p = dropout_[i];
                if (p > 0.0) {
                    const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
                    for (Eigen::Index k = 0; k < mask.size(); ++k)
                        mask.data()[k] *= rng.uniform01() < p ? 0.0f : keep_scale;
                }
                z = z.cwiseProduct(mask);
                masks.push_back(std::move(mask));
            }
            acts.push_back(std::move(z));
        }
        const MatrixF& logit = acts.back();
        MatrixF grad(B, classes());
        double loss = 0.0;
        int correct = 0;
        for (Eigen::Index r = 0; r < B; ++r) {
            const double mx = logit.row(r).maxCoeff();
            double sum = 0.0;
            for (Eigen::Index c = 0; c < logit.cols(); ++c) sum += std::exp(static_cast<double>(logit(r, c)) - mx);
            const int t = targets[static_cast<std::size_t>(r)];
            require(t >= 0 && t < classes(), ErrorCode::invalid_argument, "target code out of range");
            loss += -(static_cast<double>(logit(r, t)) - mx - std::log(sum));
            Eigen::Index arg;
            logit.row(r).maxCoeff(&arg);
            if (arg == t) ++correct;
            for (Eigen::Index c = 0; c < logit.cols(); ++c) {
                const double p = std::exp(static_cast<double>(logit(r, c)) - mx) / sum;
                grad(r, c) = static_cast<float>((p - (c == t ? 1.0 : 0.0)) / static_cast<double>(B));
            }
        }
        ++opt.step;
        const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
        const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
        const float alpha = static_cast<float>(opt.learning_rate * std::sqrt(c2) / c1);
        const float eps = static_cast<float>(opt.epsilon);
        auto adam = [&](auto& param, const auto& g, auto& m, auto& v) {
            m = static_cast<float>(opt.beta1) * m + static_cast<float>(1.0 - opt.beta1) * g;
            v = static_cast<float>(opt.beta2) * v + static_cast<float>(1.0 - opt.beta2) * g.cwiseProduct(g);
            param.array() -= alpha * m.array() / (v.array().sqrt() + eps);
        };
        for (std::size_t i = layers_.size(); i-- > 0;) {
            const MatrixF gw = acts[i].transpose() * grad;
            const RowVectorF gb = grad.colwise().sum();
            if (i > 0) {
                grad = (grad * layers_[i].weight.transpose()).cwiseProduct(masks[i - 1]);
            }
            adam(layers_[i].weight, gw, opt.m_w[i], opt.v_w[i]);
            adam(layers_[i].bias, gb, opt.m_b[i], opt.v_b[i]);
        }
        return {loss / static_cast<double>(B), correct};
    }

private:
    std::vector<DenseLayer> layers_;
    std::vector<double> dropout_;
};

}  // namespace mpox
