#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/augment/augment.hpp"
#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/model/head.hpp"

namespace mpox {

/// One point of the joint head + learning-rate (+ augmentation) space.
struct TrialConfig {
    HeadConfig head;
    std::optional<AugmentConfig> augment;

    bool operator==(const TrialConfig&) const = default;
};

inline nlohmann::json to_json(const TrialConfig& t) {
    nlohmann::json j = to_json(t.head);
    if (t.augment)
        j.update(to_json(*t.augment));
    return j;
}

inline TrialConfig trial_config_from_json(const nlohmann::json& j) {
    TrialConfig t;
    t.head = head_config_from_json(j);
    if (j.contains("rotation")) t.augment = augment_config_from_json(j);
    return t;
}

struct SearchSpace {
    double lr_min = kMinLearningRate;
    double lr_max = kMaxLearningRate;
    double dropout_min = 0.0;
    double dropout_max = kMaxDropout;
    std::vector<int> n_layers{1, 2, 3};
    std::vector<int> dense{kDenseChoices.begin(), kDenseChoices.end()};
    bool augmentation = false;
    double augment_min = 0.0;
    double augment_max = 0.5;
    std::vector<int> flip_types{0, 1, 2};

    void validate() const {
        require(lr_min > 0.0 && lr_min <= lr_max && lr_min >= kMinLearningRate && lr_max <= kMaxLearningRate,
                ErrorCode::invalid_argument, "learning-rate range must lie within [1e-6, 1e-3]");
        require(dropout_min >= 0.0 && dropout_min <= dropout_max && dropout_max <= kMaxDropout, ErrorCode::invalid_argument,
                "dropout range must lie within [0, 0.5]");
        require(!n_layers.empty() && !dense.empty(), ErrorCode::invalid_argument, "empty discrete dimension");
        for (int n : n_layers)
            require(n >= 1 && n <= kMaxHeadLayers, ErrorCode::invalid_argument, "n_layers choices must be 1..3");
        for (int d : dense)
            require(std::find(kDenseChoices.begin(), kDenseChoices.end(), d) != kDenseChoices.end(),
                    ErrorCode::invalid_argument, "dense choices must come from {256,...,4096}");
        if (augmentation) {
            require(augment_min >= 0.0 && augment_min <= augment_max && augment_max <= 0.5, ErrorCode::invalid_argument,
                    "augmentation range must lie within [0, 0.5]");
            require(!flip_types.empty(), ErrorCode::invalid_argument, "empty flip_type dimension");
            for (int f : flip_types) require(f >= 0 && f <= 2, ErrorCode::invalid_argument, "flip_type choices must be 0..2");
        }
    }
};

namespace detail {
template <class T>
T pick(const std::vector<T>& choices, Rng& rng) {
    return choices[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(choices.size()) - 1))];
}
inline double uniform_or_point(double lo, double hi, Rng& rng) { return lo == hi ? lo : rng.uniform(lo, hi); }
}  // namespace detail

/// Uniform draw per dimension; the learning rate is log-uniform. Every slot is
/// drawn (so the random stream advances identically), then inactive slots are
/// zeroed.
inline TrialConfig sample_config(const SearchSpace& space, Rng& rng) {
    TrialConfig t;
    t.head.n_layers = detail::pick(space.n_layers, rng);
    for (int i = 0; i < kMaxHeadLayers; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const int units = detail::pick(space.dense, rng);
        const double drop = detail::uniform_or_point(space.dropout_min, space.dropout_max, rng);
        t.head.dense[k] = i < t.head.n_layers ? units : 0;
        t.head.dropout[k] = i < t.head.n_layers ? drop : 0.0;
    }
    t.head.learning_rate = space.lr_min == space.lr_max
                               ? space.lr_min
                               : std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
    t.head.learning_rate = std::clamp(t.head.learning_rate, space.lr_min, space.lr_max);
    if (space.augmentation) {
        AugmentConfig a;
        a.rotation = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.zoom = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.contrast = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.brightness = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.tr_width = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.tr_height = detail::uniform_or_point(space.augment_min, space.augment_max, rng);
        a.flip_type = static_cast<FlipType>(detail::pick(space.flip_types, rng));
        t.augment = a;
    }
    return t;
}

}  // namespace mpox
