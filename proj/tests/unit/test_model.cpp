#include <gtest/gtest.h>

#include "mpox/model/model.hpp"
#include "mpox/model/pca.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mpox;

namespace {

Head single_layer_head(int in, int classes, std::uint64_t seed) {
    Rng rng(seed);
    DenseLayer L;
    L.weight.resize(in, classes);
    for (Eigen::Index i = 0; i < L.weight.size(); ++i) L.weight.data()[i] = static_cast<float>(rng.uniform(-1, 1));
    L.bias = RowVectorF::Zero(classes);
    for (Eigen::Index i = 0; i < classes; ++i) L.bias(i) = static_cast<float>(rng.uniform(-0.5, 0.5));
    return Head({L}, {});
}

}  // namespace

TEST(Head, LogitGradientMatchesFiniteDifferences) {
    Rng rng(3);
    Head head(6, {8, 5}, {0.0, 0.0}, 4, rng);
    RowVectorF x(6);
    for (int i = 0; i < 6; ++i) x(i) = static_cast<float>(rng.uniform(-1, 1));
    for (int target = 0; target < 4; ++target) {
        const RowVectorF g = head.logit_gradient(x, target);
        for (int i = 0; i < 6; ++i) {
            const float eps = 1e-2f;
            MatrixF xp = x, xm = x;
            xp(0, i) += eps;
            xm(0, i) -= eps;
            const double fd = (head.logits(xp)(0, target) - head.logits(xm)(0, target)) / (2.0 * eps);
            EXPECT_NEAR(g(i), fd, 2e-3) << "target " << target << " dim " << i;
        }
    }
}

TEST(Head, AdamFirstStepMatchesHandComputation) {
    Head head = single_layer_head(3, 2, 5);
    const Head before = head;
    MatrixF x(2, 3);
    x << 0.5f, -1.0f, 2.0f, 1.5f, 0.25f, -0.75f;
    const std::vector<int> t{0, 1};
    AdamState opt = head.make_optimizer(1e-3);
    Rng rng(0);
    head.train_step(x, t, opt, rng);

    // softmax cross-entropy gradient averaged over the batch
    const MatrixF logits = before.logits(x);
    const auto p = Head::softmax(logits);
    Eigen::MatrixXd gz(2, 2);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) gz(r, c) = (p[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - (c == t[static_cast<std::size_t>(r)])) / 2.0;
    const Eigen::MatrixXd gw = x.cast<double>().transpose() * gz;
    // step 1: m = (1-b1) g, v = (1-b2) g^2, lr_t = lr sqrt(1-b2)/(1-b1)
    const double b1 = 0.9, b2 = 0.999, lr = 1e-3, eps = 1e-7;
    const double lr_t = lr * std::sqrt(1 - b2) / (1 - b1);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 2; ++c) {
            const double g = gw(i, c);
            const double m = (1 - b1) * g, v = (1 - b2) * g * g;
            const double want = before.layers()[0].weight(i, c) - lr_t * m / (std::sqrt(v) + eps);
            EXPECT_NEAR(head.layers()[0].weight(i, c), want, 1e-6);
        }
    EXPECT_EQ(opt.step, 1);
}

TEST(Head, ConfigValidation) {
    HeadConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.dense[0] = 300;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.dense[0] = 256;
    cfg.dense[1] = 512;  // inactive slot must be 0
    EXPECT_THROW(cfg.validate(), Error);
    cfg.n_layers = 2;
    EXPECT_NO_THROW(cfg.validate());
    cfg.learning_rate = 1e-2;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.learning_rate = 1e-4;
    EXPECT_EQ(head_config_from_json(to_json(cfg)), cfg);
    EXPECT_EQ(cfg.trainable_params(576, 2), static_cast<std::size_t>(577 * 256 + 257 * 512 + 513 * 2));
}

TEST(Training, LearnsSeparableColoursAndIsDeterministic) {
    const auto bb = mpoxtest::tiny_backbone(24);
    const auto data = mpoxtest::colour_images(12, 4, 24, 1);
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < data.size(); ++i) (i % 4 == 3 ? va : tr).push_back(i);
    HeadConfig cfg;
    cfg.learning_rate = 1e-3;
    TrainOptions opt;
    opt.max_epochs = 60;
    opt.batch_size = 8;
    opt.seed = 4;
    EmbeddingCache cache;
    AccessLog log;
    const auto m1 = train(build_model(bb, cfg, TaskKind::multiclass, 2), data.subset(tr), data.subset(va), opt, cache, &log);
    const auto m2 = train(build_model(bb, cfg, TaskKind::multiclass, 2), data.subset(tr), data.subset(va), opt, cache);
    EXPECT_GE(m1.history.best_val_accuracy, 0.9);
    EXPECT_EQ(m1.history.best_val_accuracy, m2.history.best_val_accuracy);
    EXPECT_TRUE(m1.head.layers()[0].weight.isApprox(m2.head.layers()[0].weight, 0.0f));
    EXPECT_FALSE(log.ids("train/val").empty());
    for (const auto& id : log.ids("train/train")) EXPECT_EQ(log.ids("train/val").count(id), 0u);
}

TEST(Training, OverlappingSplitsAndEmptyTrainRejected) {
    const auto bb = mpoxtest::tiny_backbone(16);
    const auto data = mpoxtest::colour_images(3, 2, 16, 2);
    EmbeddingCache cache;
    const auto m = build_model(bb, HeadConfig{}, TaskKind::binary, 1);
    EXPECT_THROW(train(m, data, data.subset({0}), TrainOptions{}, cache), Error);
    EXPECT_THROW(train(m, ImageSet{}, data, TrainOptions{}, cache), Error);
}

TEST(Training, EmptyValidationMonitorsTrainingAccuracy) {
    const auto bb = mpoxtest::tiny_backbone(16);
    const auto data = mpoxtest::colour_images(6, 2, 16, 3);
    EmbeddingCache cache;
    TrainOptions opt;
    opt.max_epochs = 3;
    const auto m = train(build_model(bb, HeadConfig{}, TaskKind::binary, 1), data, ImageSet{}, opt, cache);
    EXPECT_EQ(m.history.monitor, "train_accuracy");
    EXPECT_EQ(m.history.epochs.size(), 3u);
}

TEST(Model, SaveLoadRoundTrip) {
    mpoxtest::TempDir dir;
    const auto bb = mpoxtest::tiny_backbone(16);
    HeadConfig cfg;
    cfg.n_layers = 2;
    cfg.dense = {512, 256, 0};
    cfg.dropout = {0.2, 0.1, 0.0};
    const auto m = build_model(bb, cfg, TaskKind::multiclass, 9);
    save_trained_model(m, dir.path());
    const auto back = load_trained_model(dir.path(), bb);
    EXPECT_EQ(back.config, m.config);
    EXPECT_EQ(back.task, m.task);
    const auto img = mpoxtest::colour_images(1, 1, 16, 4).images[0];
    EXPECT_EQ(predict(back, normalize(img, bb->value_range())), predict(m, normalize(img, bb->value_range())));
    // a different backbone digest is refused
    EXPECT_THROW(load_trained_model(dir.path(), mpoxtest::tiny_backbone(16, 99)), Error);
}

TEST(Model, MissingBackboneIsReported) {
    mpoxtest::TempDir dir;
    try {
        load_backbone(BackboneId::vgg16, dir.path());
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::not_found);
        EXPECT_NE(std::string(e.what()).find("unavailable"), std::string::npos);
    }
    EXPECT_EQ(parse_backbone("mobilenet_v3_large"), BackboneId::mobilenet_v3_large);
    EXPECT_THROW(parse_backbone("resnet50"), Error);
}

TEST(Pca, KnownSubspaceExplainsAllVariance) {
    Rng rng(12);
    const int n = 200, d = 40;
    Eigen::MatrixXd z(n, 3), basis(3, d);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal(0, 1 + i % 3);
    for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
    Eigen::MatrixXd x = z * basis;
    x.rowwise() += Eigen::RowVectorXd::Constant(d, 5.0);
    const auto r = pca_project(x, 3);
    const double total = r.explained_variance_ratio[0] + r.explained_variance_ratio[1] + r.explained_variance_ratio[2];
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_EQ(r.coordinates.rows(), n);
    EXPECT_EQ(r.coordinates.cols(), 3);
}

TEST(Pca, SmallMatrixMatchesJacobi) {
    Rng rng(13);
    Eigen::MatrixXd x(9, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const auto r = pca_project(x, 3);
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / 8.0;
    Eigen::VectorXd vals;
    Eigen::MatrixXd vecs;
    mpoxtest::jacobi_eigen(cov, vals, vecs);
    std::vector<Eigen::Index> order(5);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals(a) > vals(b); });
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(r.explained_variance[static_cast<std::size_t>(k)], vals(order[static_cast<std::size_t>(k)]), 1e-10);
        Eigen::VectorXd v = vecs.col(order[static_cast<std::size_t>(k)]);
        Eigen::Index at;
        v.cwiseAbs().maxCoeff(&at);
        if (v(at) < 0) v = -v;
        EXPECT_LT((v - r.components.col(k)).cwiseAbs().maxCoeff(), 1e-8);
        const Eigen::VectorXd proj = c * v;
        EXPECT_LT((proj - r.coordinates.col(k)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Pca, RejectsBadInput) {
    EXPECT_THROW(pca_project(Eigen::MatrixXd::Zero(2, 2), 3), Error);
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 4);
    x(0, 0) = std::nan("");
    EXPECT_THROW(pca_project(x, 2), Error);
}
