#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "mpox/data/folds.hpp"
#include "mpox/data/manifest.hpp"
#include "mpox/data/synthetic.hpp"
#include "support.hpp"

using namespace mpox;

namespace {

DatasetManifest balanced_manifest(int per_class) {
    DatasetManifest m;
    for (int c = 0; c < kMulticlassCount; ++c)
        for (int i = 0; i < per_class; ++i) {
            ImageRecord r;
            r.label = static_cast<ClassLabel>(c);
            r.id = std::string(to_string(r.label)) + "_" + std::to_string(i);
            r.path = r.id + ".png";
            r.target = target_code(r.label, TaskKind::multiclass);
            m.records.push_back(r);
        }
    recount(m);
    return m;
}

std::map<ClassLabel, int> per_class(const DatasetManifest& m, const std::vector<std::string>& ids) {
    std::map<ClassLabel, int> out;
    for (const auto& id : ids) ++out[m.find(id).label];
    return out;
}

}  // namespace

TEST(Manifest, ParsesAndCounts) {
    std::istringstream in(
        "id,path,label,source,sha256\n"
        "a,img/a.png,Mpox,web,\n"
        "b,img/b.png,chickenpox,web,ABC\n"
        "c,\"img/c,1.png\",Healthy,clinic,\n"
        "d,img/d.png,ACNE,web,\n");
    const auto m = parse_manifest(in, "/data");
    ASSERT_EQ(m.records.size(), 4u);
    EXPECT_EQ(m.records[2].path, "img/c,1.png");
    EXPECT_EQ(m.records[1].sha256, "abc");
    EXPECT_EQ(m.resolve(m.records[0]), std::filesystem::path("/data/img/a.png"));
    for (auto n : m.class_counts) EXPECT_EQ(n, 1u);
    const auto b = relabel_binary(m);
    EXPECT_EQ(b.task, TaskKind::binary);
    EXPECT_EQ(b.class_counts, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(b.find("a").target, 0);
    EXPECT_EQ(b.find("d").label, ClassLabel::acne);
}

TEST(Manifest, RejectsMalformedInput) {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return parse_manifest(in, ".");
    };
    EXPECT_THROW(parse(""), Error);
    EXPECT_THROW(parse("id,path,label\n"), Error);
    EXPECT_THROW(parse("id,path,label,source,sha256\na,p,Measles,w,\n"), Error);
    EXPECT_THROW(parse("id,path,label,source,sha256\na,p,Mpox,w\n"), Error);
    EXPECT_THROW(parse("id,path,label,source,sha256\na,p,Mpox,w,\na,q,Acne,w,\n"), Error);
}

TEST(Manifest, ValidationReportsEveryProblem) {
    mpoxtest::TempDir dir;
    SyntheticOptions opt;
    opt.per_class = 2;
    opt.size = 24;
    auto m = write_synthetic_dataset(dir.path(), opt);
    EXPECT_TRUE(validate_manifest(m).passed());

    // duplicate content, a missing file, a wrong digest and imbalance
    const auto& first = m.records[0];
    std::filesystem::copy_file(m.resolve(first), dir / "dup.png");
    ImageRecord dup = first;
    dup.id = "dup";
    dup.path = "dup.png";
    dup.sha256.clear();
    ImageRecord missing = first;
    missing.id = "missing";
    missing.path = "nope.png";
    m.records.push_back(dup);
    m.records.push_back(missing);
    m.records[1].sha256 = std::string(64, '0');
    std::ofstream(dir / "bad.png") << "not an image";
    ImageRecord bad = m.records[2];
    bad.id = "bad";
    bad.path = "bad.png";
    bad.sha256.clear();
    m.records.push_back(bad);
    recount(m);

    const auto report = validate_manifest(m);
    EXPECT_FALSE(report.passed());
    EXPECT_FALSE(report.check("file_exists").passed);
    EXPECT_FALSE(report.check("hash_unique").passed);
    EXPECT_FALSE(report.check("hash_matches_manifest").passed);
    EXPECT_FALSE(report.check("decodable").passed);
    EXPECT_FALSE(report.check("class_balance").passed);
    EXPECT_TRUE(to_json(report).contains("checks"));
}

TEST(Manifest, CsvRoundTrip) {
    mpoxtest::TempDir dir;
    SyntheticOptions opt;
    opt.per_class = 1;
    opt.size = 16;
    const auto m = write_synthetic_dataset(dir.path(), opt);
    std::istringstream in(to_csv(m));
    const auto back = parse_manifest(in, m.root);
    ASSERT_EQ(back.records.size(), m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        EXPECT_EQ(back.records[i].id, m.records[i].id);
        EXPECT_EQ(back.records[i].sha256, m.records[i].sha256);
    }
}

TEST(Synthetic, DeterministicUnderSeed) {
    mpoxtest::TempDir a, b;
    SyntheticOptions opt;
    opt.per_class = 2;
    opt.size = 20;
    const auto ma = write_synthetic_dataset(a.path(), opt);
    const auto mb = write_synthetic_dataset(b.path(), opt);
    for (std::size_t i = 0; i < ma.records.size(); ++i) EXPECT_EQ(ma.records[i].sha256, mb.records[i].sha256);
}

TEST(Folds, StratifiedDisjointExhaustive) {
    const auto m = balanced_manifest(100);
    const auto plan = make_stratified_folds(m, 10, 42);
    std::set<std::string> seen;
    for (int f = 0; f < 10; ++f) {
        const auto test = plan.test_ids(f);
        ASSERT_EQ(test.size(), 40u);
        for (const auto& [label, n] : per_class(m, test)) EXPECT_EQ(n, 10) << to_string(label);
        for (const auto& id : test) EXPECT_TRUE(seen.insert(id).second) << id << " in two folds";

        const auto train = plan.train_ids(f), val = plan.val_ids(f);
        // 90 dev records per class dealt 3:1 -> 68 train, 22 val
        EXPECT_EQ(train.size(), 272u);
        EXPECT_EQ(val.size(), 88u);
        for (const auto& [label, n] : per_class(m, val)) EXPECT_EQ(n, 22) << to_string(label);
        for (const auto& [label, n] : per_class(m, train)) EXPECT_EQ(n, 68) << to_string(label);
        std::set<std::string> dev(train.begin(), train.end());
        for (const auto& id : val) EXPECT_TRUE(dev.insert(id).second);
        for (const auto& id : test) EXPECT_FALSE(dev.count(id));
        EXPECT_EQ(dev.size() + test.size(), m.records.size());
    }
    EXPECT_EQ(seen.size(), m.records.size());
}

TEST(Folds, DeterministicAndSeedSensitive) {
    const auto m = balanced_manifest(20);
    EXPECT_EQ(make_stratified_folds(m, 5, 1), make_stratified_folds(m, 5, 1));
    EXPECT_NE(make_stratified_folds(m, 5, 1).assignment, make_stratified_folds(m, 5, 2).assignment);
    // binary relabelling keeps the same partition
    EXPECT_EQ(make_stratified_folds(relabel_binary(m), 5, 1), make_stratified_folds(m, 5, 1));
}

TEST(Folds, JsonRoundTrip) {
    const auto m = balanced_manifest(12);
    const auto plan = make_stratified_folds(m, 4, 9);
    EXPECT_EQ(fold_plan_from_json(to_json(plan)), plan);
    auto j = to_json(plan);
    j["records"][0]["dev_role"][0] = "bogus";
    j["records"][0]["fold"] = 1;
    EXPECT_THROW(fold_plan_from_json(j), Error);
}

TEST(Folds, TooFewRecordsPerClassFails) {
    const auto m = balanced_manifest(3);
    EXPECT_THROW(make_stratified_folds(m, 4, 0), Error);
    EXPECT_THROW(make_stratified_folds(m, 1, 0), Error);
}
