#include <gtest/gtest.h>

#include "mpox/deploy/benchmark.hpp"
#include "support.hpp"

using namespace mpox;
using namespace mpox::deploy;

namespace {

TrainedModel small_model(std::uint64_t seed = 3) {
    HeadConfig cfg;
    cfg.n_layers = 2;
    cfg.dense = {256, 512, 0};
    cfg.dropout = {0.1, 0.1, 0.0};
    return build_model(mpoxtest::tiny_backbone(32), cfg, TaskKind::multiclass, seed);
}

}  // namespace

TEST(Artifact, ByteAccountingHalvesThePayload) {
    const auto m = small_model();
    const auto a32 = export_artifact(m, nn::Precision::fp32);
    const auto a16 = quantize_fp16(m);
    const auto c32 = nn::Container::parse(a32.blob), c16 = nn::Container::parse(a16.blob);
    EXPECT_EQ(c32.payload.size(), 2 * c16.payload.size());
    const auto params = a32.provenance.at("parameters").get<std::size_t>();
    EXPECT_GE(c32.payload.size(), 4 * params);
    // header bytes are the only thing that is not halved
    const std::size_t header32 = a32.byte_size() - c32.payload.size(), header16 = a16.byte_size() - c16.payload.size();
    const auto sr = size_report(m);
    EXPECT_EQ(sr.fp32_bytes, a32.byte_size());
    EXPECT_EQ(sr.fp16_bytes, a16.byte_size());
    EXPECT_DOUBLE_EQ(sr.ratio(), static_cast<double>(c32.payload.size() + header32) / static_cast<double>(c32.payload.size() / 2 + header16));
    EXPECT_LT(sr.ratio(), 2.0);
    EXPECT_EQ(a16.provenance.at("quantized_from"), a32.digest());
}

TEST(Artifact, Fp16WeightsStayWithinHalfPrecisionRounding) {
    const auto m = small_model();
    const auto q = load_model(quantize_fp16(m));
    const auto& w = m.head.layers()[0].weight;
    const auto& wq = q.head.layers()[0].weight;
    ASSERT_EQ(w.rows(), wq.rows());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const float v = w.data()[i];
        // fp16 has an 11-bit significand: relative error <= 2^-11 in the normal range
        EXPECT_LE(std::abs(wq.data()[i] - v), std::abs(v) * std::ldexp(1.0f, -11) + 6e-8f) << i;
    }
    const auto img = mpoxtest::colour_images(1, 1, 32, 9).images[0];
    const auto range = m.backbone->value_range();
    const auto p = predict(m, normalize(img, range)), pq = predict(q, normalize(img, range));
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], pq[k], 1e-2);
}

TEST(Artifact, SaveLoadChecksDigest) {
    mpoxtest::TempDir dir;
    const auto a = quantize_fp16(small_model());
    save_artifact(a, dir.path());
    const auto back = load_artifact(dir.path());
    EXPECT_EQ(back.blob, a.blob);
    EXPECT_EQ(back.precision, nn::Precision::fp16);
    EXPECT_EQ(back.provenance.at("task"), "multiclass");
    auto blob = read_file_bytes((dir / "model.blob").string());
    blob.back() ^= 0xFF;
    write_file_bytes((dir / "model.blob").string(), blob);
    EXPECT_THROW(load_artifact(dir.path()), Error);
    EXPECT_THROW(load_artifact(dir / "missing"), Error);
    ModelArtifact junk;
    junk.blob = {1, 2, 3};
    EXPECT_THROW(load_model(junk), Error);
}

TEST(Artifact, EvaluationMatchesDirectPrediction) {
    const auto m = small_model();
    const auto data = mpoxtest::colour_images(3, 4, 32, 5);
    const auto ev = evaluate_artifact(export_artifact(m, nn::Precision::fp32), data);
    ASSERT_EQ(ev.predicted.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        EXPECT_EQ(ev.predicted[i], argmax(predict(m, normalize(data.images[i], m.backbone->value_range()))));
    EXPECT_EQ(ev.confusion.total(), static_cast<long>(data.size()));
    EXPECT_THROW(evaluate_model(m, ImageSet{}), Error);
}

TEST(Benchmark, ReportIsInternallyConsistent) {
    mpoxtest::TempDir dir;
    BenchmarkOptions opt;
    opt.lock_path = (dir / "lock").string();
    opt.threads = 1;
    const auto r = benchmark_inference(quantize_fp16(small_model()), opt);
    ASSERT_EQ(r.timings.size(), 50u);
    EXPECT_EQ(r.n_runs, 50);
    EXPECT_EQ(r.warmup_runs, 5);
    EXPECT_TRUE(r.quantized);
    double sum = 0;
    for (double t : r.timings) {
        EXPECT_GT(t, 0.0);
        sum += t;
    }
    const double mean = sum / 50.0;
    double ss = 0;
    for (double t : r.timings) ss += (t - mean) * (t - mean);
    EXPECT_NEAR(r.mean, mean, 1e-12);
    EXPECT_NEAR(r.std, std::sqrt(ss / 49.0), 1e-12);
    EXPECT_GE(r.total_wall, sum);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("input").at("kind"), "synthetic");
    EXPECT_TRUE(j.contains("host"));
}

TEST(Benchmark, SingleRunIsDegenerateAndBadOptionsThrow) {
    mpoxtest::TempDir dir;
    BenchmarkOptions opt;
    opt.lock_path = (dir / "lock").string();
    opt.n_runs = 1;
    opt.warmup = 0;
    const auto m = small_model();
    const auto r = benchmark_model(m, opt, false);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.std, 0.0);
    opt.n_runs = 0;
    EXPECT_THROW(benchmark_model(m, opt, false), Error);
    opt.n_runs = 1;
    opt.threads = 0;
    EXPECT_THROW(benchmark_model(m, opt, false), Error);
}
