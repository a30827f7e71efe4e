#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(BMSDEP_CLI) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::size_t lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("bmsdep_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string config(const char* name = "dependent.ini") const {
        return (fs::path(BMSDEP_SOURCE_DIR) / "configs" / name).string();
    }
    fs::path dir_;
};

} // namespace

TEST_F(Cli, MissingEffectsSectionExitsTwo) {
    std::ofstream(dir_ / "bad.ini") << "[bms]\nrules = 10:1\n";
    const auto r = run("relativities --config " + (dir_ / "bad.ini").string() + " --out " + (dir_ / "o").string());
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_NE(r.output.find("effects"), std::string::npos) << r.output;
}

TEST_F(Cli, UnknownOptionExitsTwo) { EXPECT_EQ(run("relativities --bogus").code, 2); }

TEST_F(Cli, RelativitiesWritesTablesAndManifest) {
    const auto r = run("relativities --config " + config() + " --out " + dir_.string());
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* tag : {"10_1", "10_2", "10_3"}) {
        const auto p = dir_ / ("relativities_" + std::string(tag) + ".csv");
        ASSERT_TRUE(fs::exists(p)) << p;
        EXPECT_EQ(lines(p), 11u);
    }
    const auto m = nlohmann::json::parse(slurp(dir_ / "manifest.json"));
    EXPECT_EQ(m["command"], "relativities");
    EXPECT_TRUE(m.contains("config_hash"));
}

TEST_F(Cli, HmseRejectsWrongLength) {
    const auto r = run("hmse --config " + config() + " --rule 10:1 --r 1,1,1 --out " + dir_.string());
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_NE(r.output.find("expected z = 10"), std::string::npos) << r.output;
}

TEST_F(Cli, HmseAcceptsVector) {
    const auto r = run("hmse --config " + config() + " --rule 10:1 --r 0.3,0.4,0.5,0.6,0.7,0.8,0.9,1,1.1,1.2 --out " +
                       dir_.string());
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir_ / "hmse.csv"));
}

TEST_F(Cli, MomentsHas324Rows) {
    const auto r = run("moments --config " + config() + " --out " + dir_.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(lines(dir_ / "moments.csv"), 325u);
}

TEST_F(Cli, SimulateIsReproducible) {
    const auto a = dir_ / "a", b = dir_ / "b";
    ASSERT_EQ(run("simulate --config " + config() + " --subjects 300 --seed 3 --out " + a.string()).code, 0);
    ASSERT_EQ(run("simulate --config " + config() + " --subjects 300 --seed 3 --out " + b.string()).code, 0);
    EXPECT_EQ(slurp(a / "panel.csv"), slurp(b / "panel.csv"));
    EXPECT_EQ(lines(a / "panel.csv"), 1u + 300u * 5u);
    ASSERT_EQ(run("summarize --panel " + (a / "panel.csv").string() + " --out " + (dir_ / "s").string()).code, 0);
}

TEST_F(Cli, SimulateThenEstimate) {
    const auto sim = dir_ / "sim", est = dir_ / "est";
    ASSERT_EQ(run("simulate --config " + config() + " --subjects 200 --out " + sim.string()).code, 0);
    const auto r = run("estimate --config " + config() + " --panel " + (sim / "panel.csv").string() +
                       " --iterations 2000 --burn-in 1000 --thin 5 --out " + est.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(lines(est / "posterior.csv"), 201u);
    EXPECT_EQ(lines(est / "dic.csv"), 3u);
    EXPECT_TRUE(fs::exists(est / "posterior_summary.csv"));
    EXPECT_TRUE(fs::exists(est / "manifest.json"));
    const auto m = dir_ / "mom";
    ASSERT_EQ(run("moments --config " + config() + " --posterior " + (est / "posterior.csv").string() + " --out " +
                  m.string())
                  .code,
              0);
    EXPECT_TRUE(fs::exists(m / "moments_draws.csv"));
}

TEST_F(Cli, MissingPanelFileExitsTwo) {
    const auto r = run("estimate --config " + config() + " --panel " + (dir_ / "none.csv").string() + " --out " +
                       dir_.string());
    EXPECT_EQ(r.code, 2) << r.output;
}
