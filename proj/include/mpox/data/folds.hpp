#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/data/manifest.hpp"

namespace mpox {

enum class DevRole { train, val };

/// Stratified assignment of records to k folds plus, for every held-out fold,
/// a stratified 75/25 train/validation split of the remaining records.
struct FoldPlan {
    int k = 0;
    std::uint64_t seed = 0;
    std::map<std::string, int> assignment;
    std::vector<std::map<std::string, DevRole>> dev_split;  ///< indexed by held-out fold

    std::vector<std::string> test_ids(int fold) const {
        std::vector<std::string> out;
        for (const auto& [id, f] : assignment)
            if (f == fold) out.push_back(id);
        return out;
    }
    std::vector<std::string> dev_ids(int fold, DevRole role) const {
        std::vector<std::string> out;
        for (const auto& [id, r] : dev_split.at(static_cast<std::size_t>(fold)))
            if (r == role) out.push_back(id);
        return out;
    }
    std::vector<std::string> train_ids(int fold) const { return dev_ids(fold, DevRole::train); }
    std::vector<std::string> val_ids(int fold) const { return dev_ids(fold, DevRole::val); }

    bool operator==(const FoldPlan&) const = default;
};

namespace detail {

template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace detail

/// Per source class: sort ids, shuffle with the seed, deal round-robin into
/// folds. The dev split of each held-out fold deals the per-class remainder
/// 3 train : 1 val after a fold-specific shuffle. Strata are the four source
/// labels, so binary and multiclass runs share identical partitions.
inline FoldPlan make_stratified_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
    require(k >= 2, ErrorCode::invalid_argument, "k must be at least 2");
    std::map<int, std::vector<std::string>> strata;
    for (const auto& r : manifest.records) strata[static_cast<int>(r.label)].push_back(r.id);
    for (const auto& [label, ids] : strata)
        require(static_cast<int>(ids.size()) >= k, ErrorCode::invalid_argument,
                std::string("class ") + to_string(static_cast<ClassLabel>(label)) + " has " +
                    std::to_string(ids.size()) + " records, fewer than k=" + std::to_string(k));

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.dev_split.resize(static_cast<std::size_t>(k));
    std::map<int, std::vector<std::string>> shuffled;
    int offset = 0;
    for (auto& [label, ids] : strata) {
        std::sort(ids.begin(), ids.end());
        detail::seeded_shuffle(ids, derive_seed(seed, {0xF01D, static_cast<std::uint64_t>(label)}));
        for (std::size_t i = 0; i < ids.size(); ++i)
            plan.assignment[ids[i]] = static_cast<int>((i + static_cast<std::size_t>(offset)) % static_cast<std::size_t>(k));
        offset = static_cast<int>((offset + ids.size()) % static_cast<std::size_t>(k));
        shuffled[label] = ids;
    }
    for (int f = 0; f < k; ++f) {
        for (const auto& [label, ids] : shuffled) {
            std::vector<std::string> dev;
            for (const auto& id : ids)
                if (plan.assignment.at(id) != f) dev.push_back(id);
            detail::seeded_shuffle(dev, derive_seed(seed, {0xDE5, static_cast<std::uint64_t>(f),
                                                           static_cast<std::uint64_t>(label)}));
            for (std::size_t i = 0; i < dev.size(); ++i)
                plan.dev_split[static_cast<std::size_t>(f)][dev[i]] = (i % 4 == 3) ? DevRole::val : DevRole::train;
        }
    }
    return plan;
}

inline nlohmann::json to_json(const FoldPlan& plan) {
    nlohmann::json j;
    j["k"] = plan.k;
    j["seed"] = plan.seed;
    nlohmann::json records = nlohmann::json::array();
    for (const auto& [id, fold] : plan.assignment) {
        nlohmann::json roles = nlohmann::json::array();
        for (int f = 0; f < plan.k; ++f) {
            if (f == fold) {
                roles.push_back("test");
            } else {
                roles.push_back(plan.dev_split[static_cast<std::size_t>(f)].at(id) == DevRole::train ? "train" : "val");
            }
        }
        records.push_back({{"id", id}, {"fold", fold}, {"dev_role", roles}});
    }
    j["records"] = records;
    return j;
}

inline FoldPlan fold_plan_from_json(const nlohmann::json& j) {
    FoldPlan plan;
    try {
        plan.k = j.at("k").get<int>();
        plan.seed = j.at("seed").get<std::uint64_t>();
        require(plan.k >= 2, ErrorCode::parse, "fold plan k must be >= 2");
        plan.dev_split.resize(static_cast<std::size_t>(plan.k));
        for (const auto& r : j.at("records")) {
            const auto id = r.at("id").get<std::string>();
            const int fold = r.at("fold").get<int>();
            require(fold >= 0 && fold < plan.k, ErrorCode::parse, "fold index out of range for " + id);
            plan.assignment[id] = fold;
            const auto& roles = r.at("dev_role");
            require(roles.size() == static_cast<std::size_t>(plan.k), ErrorCode::parse, "dev_role length != k for " + id);
            for (int f = 0; f < plan.k; ++f) {
                const auto role = roles[static_cast<std::size_t>(f)].get<std::string>();
                if (f == fold) {
                    require(role == "test", ErrorCode::parse, "record " + id + " must be 'test' in its own fold");
                } else if (role == "train" || role == "val") {
                    plan.dev_split[static_cast<std::size_t>(f)][id] = role == "train" ? DevRole::train : DevRole::val;
                } else {
                    fail(ErrorCode::parse, "bad dev_role '" + role + "' for " + id);
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("malformed fold plan: ") + e.what());
    }
    return plan;
}

}  // namespace mpox
