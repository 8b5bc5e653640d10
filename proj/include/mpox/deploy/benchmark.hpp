#pragma once

#include <sys/file.h>
#include <sys/utsname.h>
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/core/rng.hpp"
#include "mpox/deploy/artifact.hpp"

namespace mpox::deploy {

struct BenchmarkOptions {
    int n_runs = 50;
    int warmup = 5;
    int threads = 4;
    std::uint64_t seed = 7;
    std::string lock_path = (std::filesystem::temp_directory_path() / "mpox-benchmark.lock").string();
};

struct BenchmarkReport {
    std::string model;
    std::string task;
    bool quantized = false;
    int n_runs = 0;
    int warmup_runs = 0;
    int threads_requested = 0;
    int threads_effective = 0;
    Shape3 input{};
    std::vector<double> timings;  ///< seconds, one per timed run
    double mean = 0.0;
    double std = 0.0;  ///< sample std; 0 with degenerate set when n_runs == 1
    bool degenerate = false;
    double total_wall = 0.0;
    nlohmann::json host;
};

inline nlohmann::json host_descriptor() {
    nlohmann::json h;
    utsname u{};
    if (uname(&u) == 0) {
        h["system"] = u.sysname;
        h["release"] = u.release;
        h["machine"] = u.machine;
    }
    std::ifstream cpu("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpu, line))
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos) h["cpu"] = line.substr(pos + 2);
            break;
        }
    h["hardware_threads"] = std::thread::hardware_concurrency();
    return h;
}

/// Exclusive advisory lock so that concurrent benchmarks do not disturb each other.
class BenchmarkLock {
public:
    explicit BenchmarkLock(const std::string& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        require(fd_ >= 0, ErrorCode::io, "cannot open benchmark lock " + path);
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            fail(ErrorCode::io, "cannot lock " + path);
        }
    }
    ~BenchmarkLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    BenchmarkLock(const BenchmarkLock&) = delete;
    BenchmarkLock& operator=(const BenchmarkLock&) = delete;

private:
    int fd_ = -1;
};

inline void summarize(BenchmarkReport& r) {
    const double n = static_cast<double>(r.timings.size());
    r.mean = std::accumulate(r.timings.begin(), r.timings.end(), 0.0) / n;
    if (r.timings.size() < 2) {
        r.std = 0.0;
        r.degenerate = true;
        return;
    }
    double ss = 0.0;
    for (double t : r.timings) ss += (t - r.mean) * (t - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
}

/// Single-image inference (backbone + head) on a synthetic input, timed
/// `n_runs` times after `warmup` untimed runs.
inline BenchmarkReport benchmark_model(const TrainedModel& model, const BenchmarkOptions& opt, bool quantized) {
    require(opt.n_runs >= 1, ErrorCode::invalid_argument, "n_runs must be >= 1");
    require(opt.warmup >= 0, ErrorCode::invalid_argument, "warmup must be >= 0");
    require(opt.threads >= 1, ErrorCode::invalid_argument, "threads must be >= 1");
    BenchmarkLock lock(opt.lock_path);
    Eigen::setNbThreads(opt.threads);

    BenchmarkReport r;
    r.model = model.backbone->graph.backbone_name();
    r.task = to_string(model.task);
    r.quantized = quantized;
    r.n_runs = opt.n_runs;
    r.warmup_runs = opt.warmup;
    r.threads_requested = opt.threads;
    r.threads_effective = Eigen::nbThreads();
    r.input = model.backbone->input_shape();
    r.host = host_descriptor();

    Tensor input(r.input);
    Rng rng(opt.seed);
    for (auto& v : input.values()) v = static_cast<float>(rng.uniform(0.0, 255.0));
    input = normalize(input, model.backbone->value_range());

    volatile double sink = 0.0;
    for (int i = 0; i < opt.warmup; ++i) sink = sink + predict(model, input)[0];
    r.timings.reserve(static_cast<std::size_t>(opt.n_runs));
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    for (int i = 0; i < opt.n_runs; ++i) {
        const auto t0 = clock::now();
        sink = sink + predict(model, input)[0];
        r.timings.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    r.total_wall = std::chrono::duration<double>(clock::now() - start).count();
    summarize(r);
    return r;
}

inline BenchmarkReport benchmark_inference(const ModelArtifact& a, const BenchmarkOptions& opt = {}) {
    return benchmark_model(load_model(a), opt, a.precision == nn::Precision::fp16);
}

inline nlohmann::json to_json(const BenchmarkReport& r) {
    return {{"model", r.model},
            {"task", r.task},
            {"quantized", r.quantized},
            {"n_runs", r.n_runs},
            {"warmup_runs", r.warmup_runs},
            {"threads_requested", r.threads_requested},
            {"threads_effective", r.threads_effective},
            {"input", {{"kind", "synthetic"}, {"shape", {r.input.h, r.input.w, r.input.c}}}},
            {"mean_s", r.mean},
            {"std_s", r.std},
            {"degenerate", r.degenerate},
            {"total_wall_s", r.total_wall},
            {"timings_s", r.timings},
            {"host", r.host}};
}

}  // namespace mpox::deploy
