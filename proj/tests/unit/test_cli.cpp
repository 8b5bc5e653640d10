#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>

#include "mpox/data/synthetic.hpp"
#include "support.hpp"

using namespace mpox;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

// stdout and stderr together; the exit status is the process's own
Run run(const std::string& args) {
    const std::string cmd = std::string(MPOX_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), p)) r.out += buf.data();
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::filesystem::path find_file(const std::filesystem::path& root, const std::string& name) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.path().filename() == name) return e.path();
    return {};
}

}  // namespace

TEST(Cli, HelpListsSubcommands) {
    const auto r = run("--help");
    EXPECT_EQ(r.code, 0);
    for (const char* sub : {"validate", "folds", "cv", "stats", "xai", "quantize", "bench", "embed", "serve", "report"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("folds --k notanumber").code, 1);
    // a missing required option is a configuration error
    const auto r = run("validate");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("manifest"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitTwo) {
    mpoxtest::TempDir dir;
    // a path that does not exist is caught as configuration
    EXPECT_EQ(run("validate --manifest " + (dir / "none.csv").string()).code, 1);
    write_text_file((dir / "bad.csv").string(), "not,a,manifest\n1,2\n");
    const auto r = run("validate --manifest " + (dir / "bad.csv").string() + " --output " + dir.path().string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("error"), std::string::npos);
}

TEST(Cli, ValidateAndFoldsAreDeterministic) {
    mpoxtest::TempDir dir;
    SyntheticOptions opt;
    opt.per_class = 12;
    opt.size = 32;
    write_synthetic_dataset((dir / "data").string(), opt);
    const std::string manifest = (dir / "data" / "manifest.csv").string();

    const auto v = run("validate --manifest " + manifest + " --output " + (dir / "out").string());
    EXPECT_EQ(v.code, 0) << v.out;
    EXPECT_NE(v.out.find("ok   hash_unique"), std::string::npos) << v.out;

    const auto a = run("folds --manifest " + manifest + " --seed 5 --output " + (dir / "a").string());
    const auto b = run("folds --manifest " + manifest + " --seed 5 --output " + (dir / "b").string());
    ASSERT_EQ(a.code, 0) << a.out;
    ASSERT_EQ(b.code, 0) << b.out;
    const auto fa = find_file(dir / "a", "folds.json"), fb = find_file(dir / "b", "folds.json");
    ASSERT_FALSE(fa.empty());
    ASSERT_FALSE(fb.empty());
    EXPECT_EQ(read_text_file(fa.string()), read_text_file(fb.string()));
    // same inputs land in the same run directory name
    EXPECT_EQ(fa.parent_path().filename(), fb.parent_path().filename());

    const auto c = run("folds --manifest " + manifest + " --seed 6 --output " + (dir / "c").string());
    ASSERT_EQ(c.code, 0);
    EXPECT_NE(read_text_file(find_file(dir / "c", "folds.json").string()), read_text_file(fa.string()));
}
