#include "catqvi/cli.hpp"

#include "support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

using namespace catqvi;
using catqvi::testing::profile_json;
using catqvi::testing::profile_path;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("catqvi_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string path(const std::string& name) const { return (root_ / name).string(); }

    std::string write(const std::string& name, const std::string& text) const {
        std::ofstream(path(name)) << text;
        return path(name);
    }

    // A desk small enough to solve in milliseconds.
    std::string tiny_config(const std::string& name = "tiny.json") const {
        json raw = profile_json("desk_k1");
        raw["name"] = "tiny";
        raw["economics"]["horizon"] = 0.3;
        raw["economics"]["maturity"] = 0.15;
        raw["model"]["severity"]["n_atoms"] = 5;
        raw["grid"]["x1"] = {{"min", -8.0}, {"max", 6.0}, {"step", 1.0}};
        raw["grid"]["x2"] = {{"min", 0.0}, {"max", 1.5}, {"step", 0.5}};
        raw["grid"]["alpha"] = {{"min", 25.0}, {"max", 27.0}, {"step", 1.0}};
        raw["simulation"]["n_paths"] = 50;
        return write(name, raw.dump(2));
    }

    fs::path root_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_F(Cli, ValidateExitCodes) {
    EXPECT_EQ(run_cli({"validate", "--config", profile_path("florida_gamma")}), kExitOk);
    json bad = profile_json("florida_gamma");
    bad["economics"]["maturity"] = 0.0;
    EXPECT_EQ(run_cli({"validate", "--config", write("bad.json", bad.dump())}), kExitInvalid);
    EXPECT_EQ(run_cli({"validate", "--config", path("missing.json")}), kExitIo);
    EXPECT_EQ(run_cli({"validate", "--config", write("garbage.json", "{ not json")}), kExitInvalid);
    EXPECT_EQ(run_cli({"validate"}), kExitInvalid);
    EXPECT_EQ(run_cli({"no-such-command"}), kExitInvalid);
}

TEST_F(Cli, ValidateWritesEffectiveConfigAndManifest) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"validate", "--config", cfg, "--set", "economics.rho=3", "--out", path("v")}), kExitOk);
    const json eff = read_json(root_ / "v" / "config.effective.json");
    EXPECT_EQ(eff["economics"]["rho"], 3.0);
    const json m = read_json(root_ / "v" / "manifest.json");
    EXPECT_EQ(m["command"], "validate");
    EXPECT_EQ(m["tool_version"], kToolVersion);
    EXPECT_EQ(m["config_sha256"].get<std::string>().size(), 64u);
    EXPECT_NE(m["config_sha256"], m["effective_config_sha256"]);
}

TEST_F(Cli, SolveThenSimulateComposes) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("s")}), kExitOk);
    for (const char* f : {"value.cbqv", "cfl.json", "coverage.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(root_ / "s" / f)) << f;
    }
    EXPECT_GT(read_json(root_ / "s" / "coverage.json")["node_count"].get<std::size_t>(), 0u);

    ASSERT_EQ(run_cli({"simulate", "--config", cfg, "--policy", path("s/value.cbqv"), "--n-paths", "40", "--paths",
                       "2", "--seed", "5", "--out", path("m")}),
              kExitOk);
    const json summary = read_json(root_ / "m" / "summary.json");
    EXPECT_EQ(summary["n_paths"], 40);
    EXPECT_EQ(summary["seed"], 5);
    const auto rows = lines(slurp(root_ / "m" / "final_cash.csv"));
    EXPECT_EQ(rows.front(), "path,final_cash,utility");
    EXPECT_EQ(rows.size(), 41u);
    EXPECT_TRUE(fs::exists(root_ / "m" / "density.csv"));
    EXPECT_TRUE(fs::exists(root_ / "m" / "paths" / "path_000001_events.csv"));
    EXPECT_TRUE(fs::exists(root_ / "m" / "paths" / "path_000001_states.csv"));
    EXPECT_FALSE(fs::exists(root_ / "m" / "paths" / "path_000002_events.csv"));
    EXPECT_EQ(read_json(root_ / "m" / "manifest.json")["seed"], 5);

    ASSERT_EQ(run_cli({"simulate", "--config", cfg, "--policy", path("s/value.cbqv"), "--n-paths", "40", "--seed",
                       "5", "--out", path("m2")}),
              kExitOk);
    EXPECT_EQ(slurp(root_ / "m" / "final_cash.csv"), slurp(root_ / "m2" / "final_cash.csv"));
}

TEST_F(Cli, SimulateNeedsExactlyOnePolicySource) {
    const std::string cfg = tiny_config();
    EXPECT_EQ(run_cli({"simulate", "--config", cfg, "--out", path("a")}), kExitInvalid);
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("s")}), kExitOk);
    EXPECT_EQ(run_cli({"simulate", "--config", cfg, "--no-bonds", "--policy", path("s/value.cbqv"), "--out",
                       path("b")}),
              kExitInvalid);
    EXPECT_EQ(run_cli({"simulate", "--config", cfg, "--no-bonds", "--out", path("c")}), kExitOk);
    EXPECT_EQ(run_cli({"simulate", "--config", cfg, "--policy", path("missing.cbqv"), "--out", path("d")}), kExitIo);
}

TEST_F(Cli, HashMismatchIsRefusedUnlessAllowed) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("s")}), kExitOk);
    const std::vector<std::string> base{"simulate", "--config", cfg, "--set", "economics.H0=0.003", "--policy",
                                        path("s/value.cbqv"), "--n-paths", "5"};
    auto refused = base;
    refused.insert(refused.end(), {"--out", path("a")});
    EXPECT_EQ(run_cli(refused), kExitInvalid);
    auto allowed = base;
    allowed.insert(allowed.end(), {"--allow-hash-mismatch", "--out", path("b")});
    EXPECT_EQ(run_cli(allowed), kExitOk);
}

TEST_F(Cli, RerunGivesIdenticalDump) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("a")}), kExitOk);
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--threads", "2", "--out", path("b")}), kExitOk);
    EXPECT_EQ(slurp(root_ / "a" / "value.cbqv"), slurp(root_ / "b" / "value.cbqv"));
}

TEST_F(Cli, GridOverridesChangeTheWorkspace) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--grid.x1.min", "-10", "--out", path("a")}), kExitOk);
    const json eff = read_json(root_ / "a" / "manifest.json");
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("b")}), kExitOk);
    EXPECT_GT(read_json(root_ / "a" / "coverage.json")["node_count"].get<std::size_t>(),
              read_json(root_ / "b" / "coverage.json")["node_count"].get<std::size_t>());
    EXPECT_NE(eff["effective_config_sha256"], read_json(root_ / "b" / "manifest.json")["effective_config_sha256"]);
}

TEST_F(Cli, OepTable) {
    ASSERT_EQ(run_cli({"oep", "--config", profile_path("florida_gamma"), "--periods", "10,50", "--times", "0,30",
                       "--out", path("o")}),
              kExitOk);
    const auto rows = lines(slurp(root_ / "o" / "oep.csv"));
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], "return_period,t,oep");
    EXPECT_EQ(rows[1].rfind("10,0,1.22", 0), 0u) << rows[1];
    EXPECT_EQ(run_cli({"oep", "--config", profile_path("florida_gamma"), "--periods", "1"}), kExitInvalid);
}

TEST_F(Cli, BayesDemoGammaAndScenario) {
    const std::string cfg = tiny_config();
    const std::string empty = write("none.txt", "# no events\n");
    ASSERT_EQ(run_cli({"bayes-demo", "--config", cfg, "--events", empty, "--out", path("g")}), kExitOk);
    auto rows = lines(slurp(root_ / "g" / "posterior.csv"));
    ASSERT_EQ(rows.front(), "t,event,mean,sd");
    double last = 1e300;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream in(rows[i]);
        std::string t, ev, mean;
        std::getline(in, t, ',');
        std::getline(in, ev, ',');
        std::getline(in, mean, ',');
        EXPECT_LE(std::stod(mean), last);
        last = std::stod(mean);
    }

    const std::string events = write("events.txt", "0.1\n0.2 # second\n");
    ASSERT_EQ(run_cli({"bayes-demo", "--config", cfg, "--events", events, "--out", path("h")}), kExitOk);
    rows = lines(slurp(root_ / "h" / "posterior.csv"));
    EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const std::string& r) { return r.find(",1,") != r.npos; }),
              2);

    EXPECT_EQ(run_cli({"bayes-demo", "--config", cfg, "--events", write("u.txt", "0.2\n0.1\n")}), kExitInvalid);
    EXPECT_EQ(run_cli({"bayes-demo", "--config", cfg, "--events", write("x.txt", "abc\n")}), kExitInvalid);

    ASSERT_EQ(run_cli({"bayes-demo", "--config", profile_path("florida_bernoulli"), "--set", "economics.horizon=2",
                       "--out", path("b")}),
              kExitOk);
    EXPECT_EQ(lines(slurp(root_ / "b" / "posterior.csv")).front(), "t,event,w1,w2,w3");
}

TEST_F(Cli, SectionExport) {
    const std::string cfg = tiny_config();
    ASSERT_EQ(run_cli({"solve", "--config", cfg, "--out", path("s")}), kExitOk);
    ASSERT_EQ(run_cli({"section", "--config", cfg, "--dump", path("s/value.cbqv"), "--axis-a", "x1", "--axis-b",
                       "x2", "--csv", path("sec.csv")}),
              kExitOk);
    const auto rows = lines(slurp(root_ / "sec.csv"));
    EXPECT_EQ(rows.front(), "x1,x2,value,action");
    EXPECT_EQ(rows.size(), 1u + 15u * 4u);
    // Slices without stored values still export the policy.
    ASSERT_EQ(run_cli({"section", "--config", cfg, "--dump", path("s/value.cbqv"), "--slice", "3", "--csv",
                       path("pol.csv")}),
              kExitOk);
    const auto pol = lines(slurp(root_ / "pol.csv"));
    ASSERT_GT(pol.size(), 1u);
    EXPECT_NE(pol[1].find(",,"), std::string::npos) << pol[1];
    EXPECT_EQ(run_cli({"section", "--config", cfg, "--dump", path("s/value.cbqv"), "--slice", "99"}), kExitInvalid);
}

TEST(CliProcess, ExecutableReportsExitCodes) {
    const auto status = [](const std::string& args) {
        const int raw = std::system((std::string(CATQVI_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    EXPECT_EQ(status("--version"), 0);
    EXPECT_EQ(status("validate --config " + profile_path("desk_k2")), 0);
    EXPECT_EQ(status("validate --config /nonexistent.json"), 3);
    EXPECT_EQ(status("validate --config " + profile_path("desk_k2") + " --set economics.horizon=-1"), 1);
}
