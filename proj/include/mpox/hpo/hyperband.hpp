#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/hpo/search_space.hpp"

namespace mpox {

struct Rung {
    long n = 0;       ///< configurations evaluated at this rung
    double r = 0.0;   ///< resource per configuration (R * eta^(i-s))
    int epochs = 0;   ///< integer resource actually granted: max(1, round(r))

    bool operator==(const Rung&) const = default;
};

struct Bracket {
    int s = 0;
    std::vector<Rung> rungs;
};

struct HyperbandConfig {
    long R = 27;
    long eta = 3;
    std::uint64_t seed = 0;

    void validate() const {
        require(R >= 1, ErrorCode::invalid_argument, "Hyperband R must be >= 1");
        require(eta >= 2, ErrorCode::invalid_argument, "Hyperband eta must be >= 2");
    }
};

namespace detail {
inline long ipow(long base, int e) {
    long v = 1;
    for (int i = 0; i < e; ++i) v *= base;
    return v;
}
}  // namespace detail

/// Bracket/rung table. Integer arithmetic throughout so that e.g.
/// ceil(4/3 * 9) is exactly 12.
inline std::vector<Bracket> hyperband_schedule(long R, long eta) {
    HyperbandConfig{R, eta, 0}.validate();
    int s_max = 0;
    while (detail::ipow(eta, s_max + 1) <= R) ++s_max;
    std::vector<Bracket> out;
    for (int s = s_max; s >= 0; --s) {
        const long num = static_cast<long>(s_max + 1) * detail::ipow(eta, s);
        const long n = (num + s) / (s + 1);
        Bracket b;
        b.s = s;
        for (int i = 0; i <= s; ++i) {
            Rung r;
            r.n = n / detail::ipow(eta, i);
            r.r = static_cast<double>(R) / static_cast<double>(detail::ipow(eta, s - i));
            r.epochs = std::max(1, static_cast<int>(std::lround(r.r)));
            b.rungs.push_back(r);
        }
        out.push_back(std::move(b));
    }
    return out;
}

struct TrialRecord {
    int trial_id = 0;
    int config_id = 0;  ///< index of the sampled configuration (stable across rungs)
    int bracket = 0;    ///< s
    int rung = 0;
    int resource = 0;   ///< epochs granted
    double score = 0.0;
    bool failed = false;
    std::string error;
    TrialConfig config;
};

inline nlohmann::json to_json(const TrialRecord& t) {
    nlohmann::json j{{"trial_id", t.trial_id}, {"config_id", t.config_id}, {"bracket", t.bracket}, {"rung", t.rung},
                     {"resource", t.resource},  {"score", t.score},         {"failed", t.failed}};
    if (t.failed) j["error"] = t.error;
    const auto cfg = to_json(t.config);
    for (const auto& [k, v] : cfg.items()) j[k] = v;
    return j;
}

inline TrialRecord trial_record_from_json(const nlohmann::json& j) {
    TrialRecord t;
    t.trial_id = j.at("trial_id").get<int>();
    t.config_id = j.value("config_id", t.trial_id);
    t.bracket = j.at("bracket").get<int>();
    t.rung = j.at("rung").get<int>();
    t.resource = j.at("resource").get<int>();
    t.score = j.at("score").get<double>();
    t.failed = j.value("failed", false);
    t.error = j.value("error", std::string());
    t.config = trial_config_from_json(j);
    return t;
}

/// One JSON object per line.
inline void write_trial_log(const std::vector<TrialRecord>& trials, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
    for (const auto& t : trials) out << to_json(t).dump() << "\n";
}

inline std::vector<TrialRecord> read_trial_log(std::istream& in) {
    std::vector<TrialRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(trial_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::parse, "trial log line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

/// Objective: (config, epochs, seed) -> score in [0, 1]. The seed is fixed per
/// sampled configuration, so a promoted configuration retrains from scratch
/// with the same randomness and a larger budget.
using Objective = std::function<double(const TrialConfig&, int epochs, std::uint64_t seed)>;

struct HyperbandResult {
    TrialConfig best;
    double best_score = 0.0;
    int best_trial = -1;
    std::vector<TrialRecord> trials;
    long total_epochs = 0;
};

/// Best record by score, ties to the lowest trial id.
inline const TrialRecord& best_trial(const std::vector<TrialRecord>& trials) {
    require(!trials.empty(), ErrorCode::invalid_argument, "empty trial log");
    const TrialRecord* best = &trials.front();
    for (const auto& t : trials)
        if (t.score > best->score || (t.score == best->score && t.trial_id < best->trial_id)) best = &t;
    return *best;
}

inline HyperbandResult run_hyperband(const SearchSpace& space, const Objective& objective, const HyperbandConfig& hb,
                                     int jobs = 1) {
    space.validate();
    hb.validate();
    require(jobs >= 1, ErrorCode::invalid_argument, "jobs must be >= 1");
    HyperbandResult result;
    int next_trial = 0;
    int next_config = 0;
    for (const auto& bracket : hyperband_schedule(hb.R, hb.eta)) {
        Rng rng(derive_seed(hb.seed, {0xB2AC, static_cast<std::uint64_t>(bracket.s)}));
        struct Live {
            int config_id;
            TrialConfig config;
            std::uint64_t seed;
        };
        std::vector<Live> live;
        for (long c = 0; c < bracket.rungs.front().n; ++c) {
            const int id = next_config++;
            live.push_back({id, sample_config(space, rng), derive_seed(hb.seed, {0x7121, static_cast<std::uint64_t>(id)})});
        }
        for (std::size_t i = 0; i < bracket.rungs.size(); ++i) {
            const Rung& rung = bracket.rungs[i];
            std::vector<TrialRecord> recs(live.size());
            for (std::size_t k = 0; k < live.size(); ++k) {
                auto& r = recs[k];
                r.trial_id = next_trial++;
                r.config_id = live[k].config_id;
                r.bracket = bracket.s;
                r.rung = static_cast<int>(i);
                r.resource = rung.epochs;
                r.config = live[k].config;
            }
            auto evaluate = [&](std::size_t k) {
                auto& r = recs[k];
                try {
                    const double s = objective(r.config, r.resource, live[k].seed);
                    require(std::isfinite(s) && s >= 0.0 && s <= 1.0, ErrorCode::runtime,
                            "objective returned a score outside [0, 1]");
                    r.score = s;
                } catch (const std::exception& e) {
                    r.score = 0.0;
                    r.failed = true;
                    r.error = e.what();
                }
            };
            if (jobs == 1 || live.size() == 1) {
                for (std::size_t k = 0; k < live.size(); ++k) evaluate(k);
            } else {
                std::atomic<std::size_t> cursor{0};
                std::vector<std::thread> pool;
                for (int w = 0; w < std::min<int>(jobs, static_cast<int>(live.size())); ++w)
                    pool.emplace_back([&] {
                        for (std::size_t k; (k = cursor.fetch_add(1)) < live.size();) evaluate(k);
                    });
                for (auto& t : pool) t.join();
            }
            for (const auto& r : recs) {
                result.total_epochs += r.resource;
                result.trials.push_back(r);
            }
            if (i + 1 == bracket.rungs.size()) break;
            std::vector<std::size_t> order(live.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (recs[a].score != recs[b].score) return recs[a].score > recs[b].score;
                return recs[a].trial_id < recs[b].trial_id;
            });
            const auto keep = static_cast<std::size_t>(bracket.rungs[i + 1].n);
            std::vector<Live> promoted;
            for (std::size_t k = 0; k < std::min(keep, order.size()); ++k) promoted.push_back(live[order[k]]);
            std::sort(promoted.begin(), promoted.end(), [](const Live& a, const Live& b) { return a.config_id < b.config_id; });
            live = std::move(promoted);
        }
    }
    const auto& best = best_trial(result.trials);
    result.best = best.config;
    result.best_score = best.score;
    result.best_trial = best.trial_id;
    return result;
}

}  // namespace mpox
