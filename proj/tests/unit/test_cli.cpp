#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "commands.hpp"
#include "fixtures.hpp"
#include "http_server.hpp"
#include "vlmpc/calibration.hpp"
#include "vlmpc/memory.hpp"
#include "vlmpc/simulator.hpp"

using namespace vlmpc;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        root_ = fs::temp_directory_path() /
                ("vlmpc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_ / "scenes");
    }
    void TearDown() override { fs::remove_all(root_); }

    void write(const fs::path& p, const std::string& text)
    {
        fs::create_directories(p.parent_path());
        std::ofstream(p) << text;
    }
    std::string read(const fs::path& p)
    {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    void write_scenes(int n, double duration = 12.0)
    {
        for (int i = 0; i < n; ++i) {
            auto s = vlmpc::testing::braking_leader_scenario(ScenarioFeatures::from_index(i % 8), 2.0, duration);
            s.id = "scene-" + std::to_string(i);
            write(root_ / "scenes" / (s.id + ".json"), serialize_scenario(s));
        }
    }
    int run(const cli::RunOptions& o)
    {
        out_.str("");
        err_.str("");
        return cli::cmd_run(o, out_, err_);
    }

    fs::path root_;
    std::ostringstream out_;
    std::ostringstream err_;
};

}  // namespace

TEST_F(CliTest, RunWritesTracesReportsAndRollup)
{
    write_scenes(3);
    cli::RunOptions o;
    o.scenarios = (root_ / "scenes").string();
    o.out = root_ / "out";
    ASSERT_EQ(run(o), cli::kOk) << err_.str();
    for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(fs::exists(root_ / "out" / "traces" / ("scene-" + std::to_string(i) + ".ndjson")));
        EXPECT_TRUE(fs::exists(root_ / "out" / "reports" / ("scene-" + std::to_string(i) + ".json")));
    }
    const auto rollup = nlohmann::json::parse(read(root_ / "out" / "rollup.json"));
    EXPECT_EQ(rollup["overall"]["scenes"], 3);
    EXPECT_EQ(rollup["overall"]["completion"], 1.0);
    EXPECT_TRUE(fs::exists(root_ / "out" / "rollup.csv"));
    EXPECT_FALSE(fs::exists(root_ / "out" / "failures.txt"));
    EXPECT_NE(out_.str().find("3 scenarios, 0 failed"), std::string::npos) << out_.str();
}

TEST_F(CliTest, GlobAndParallelJobsMatchSerial)
{
    write_scenes(4);
    write(root_ / "scenes" / "notes.txt", "not a scene");
    EXPECT_EQ(cli::expand_scenarios((root_ / "scenes" / "scene-[12].json").string()).size(), 2u);
    cli::RunOptions o;
    o.scenarios = (root_ / "scenes" / "*.json").string();
    o.out = root_ / "serial";
    ASSERT_EQ(run(o), cli::kOk);
    o.out = root_ / "parallel";
    o.jobs = 3;
    ASSERT_EQ(run(o), cli::kOk);
    EXPECT_EQ(read(root_ / "serial" / "rollup.json"), read(root_ / "parallel" / "rollup.json"));
    EXPECT_EQ(read(root_ / "serial" / "traces" / "scene-3.ndjson"), read(root_ / "parallel" / "traces" / "scene-3.ndjson"));
}

TEST_F(CliTest, ConfigurationErrorsExitTwo)
{
    write_scenes(1);
    cli::RunOptions o;
    o.scenarios = (root_ / "scenes").string();
    o.out = root_ / "out";
    o.planner = "lm";
    EXPECT_EQ(run(o), cli::kConfigError);
    EXPECT_NE(err_.str().find("lm"), std::string::npos);
    o.planner = "oracle";
    EXPECT_EQ(run(o), cli::kConfigError);
    o.planner = "memory";
    o.scenarios = (root_ / "nowhere" / "*.json").string();
    EXPECT_EQ(run(o), cli::kConfigError);
    o.scenarios = (root_ / "scenes").string();
    o.jobs = 0;
    EXPECT_EQ(run(o), cli::kConfigError);
}

TEST_F(CliTest, BadScenarioIsReportedAndOthersRun)
{
    write_scenes(2);
    write(root_ / "scenes" / "broken.json", R"({"id": "broken", "duration": -3})");
    cli::RunOptions o;
    o.scenarios = (root_ / "scenes").string();
    o.out = root_ / "out";
    EXPECT_EQ(run(o), cli::kScenarioErrors);
    EXPECT_TRUE(fs::exists(root_ / "out" / "traces" / "scene-1.ndjson"));
    EXPECT_NE(read(root_ / "out" / "failures.txt").find("broken.json"), std::string::npos);
}

TEST_F(CliTest, RecordedCassetteReplaysByteIdentically)
{
    write_scenes(2);
    vlmpc::testing::LocalServer server;
    int hits = 0;
    server.server().Post("/v1/complete", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.set_content(hits % 4 == 0 ? R"({"text": "unsure"})" : R"({"text": "Keep a long gap. [10, 1, 1.5, 2, 6, 2.5]"})",
                        "application/json");
    });
    write(root_ / "config.json", R"({"services": {"lm": {"url": ")" + server.url() + R"(", "timeout_s": 5}}})");

    cli::RunOptions o;
    o.scenarios = (root_ / "scenes").string();
    o.planner = "lm";
    o.config = root_ / "config.json";
    o.cassette = root_ / "tape.json";
    o.record = true;
    o.out = root_ / "live";
    ASSERT_EQ(run(o), cli::kOk) << err_.str();
    EXPECT_GT(hits, 0);
    const int live_hits = hits;

    o.record = false;
    o.config.reset();
    o.out = root_ / "replay1";
    ASSERT_EQ(run(o), cli::kOk) << err_.str();
    o.out = root_ / "replay2";
    ASSERT_EQ(run(o), cli::kOk);
    EXPECT_EQ(hits, live_hits);
    for (const char* f : {"traces/scene-0.ndjson", "traces/scene-1.ndjson", "reports/scene-1.json", "rollup.json"}) {
        EXPECT_EQ(read(root_ / "replay1" / f), read(root_ / "replay2" / f)) << f;
    }
    const auto rollup = nlohmann::json::parse(read(root_ / "replay1" / "rollup.json"));
    EXPECT_LT(rollup["overall"]["completion"].get<double>(), 1.0);
}

TEST_F(CliTest, ReportIsIdempotentAndSkipsCorruptTraces)
{
    write_scenes(2);
    cli::RunOptions o;
    o.scenarios = (root_ / "scenes").string();
    o.out = root_ / "out";
    ASSERT_EQ(run(o), cli::kOk);
    write(root_ / "out" / "traces" / "zz-corrupt.ndjson", "{\"type\":\"header\"\n");

    cli::ReportOptions r{root_ / "out" / "traces", root_ / "report"};
    std::ostringstream out1, out2, err;
    EXPECT_EQ(cli::cmd_report(r, out1, err), cli::kOk);
    EXPECT_NE(err.str().find("zz-corrupt"), std::string::npos);
    const std::string first = read(root_ / "report" / "rollup.json");
    EXPECT_EQ(cli::cmd_report(r, out2, err), cli::kOk);
    EXPECT_EQ(out1.str(), out2.str());
    EXPECT_EQ(read(root_ / "report" / "rollup.json"), first);
    EXPECT_EQ(first, read(root_ / "out" / "rollup.json"));
}

TEST_F(CliTest, CalibrateEmptyAndSingleScene)
{
    cli::CalibrateOptions c{root_ / "scenes", root_ / "refs", root_ / "mem" / "memory.json", std::nullopt};
    std::ostringstream out, err;
    EXPECT_NE(cli::cmd_calibrate(c, out, err), cli::kOk);

    const DrivingParams truth{10, 1, 1.5, 2.0, 6.0, 2.0};
    auto scene = vlmpc::testing::calibration_scenario(truth, "cal-0");
    write(root_ / "scenes" / "cal-0.json", serialize_scenario(scene));
    FixedParamsPlanner planner(truth);
    const auto ref = reference_from_trace(run_scenario(scene, planner, SimConfig{}));
    write(root_ / "refs" / "cal-0.csv", reference_csv(ref));
    ASSERT_EQ(cli::cmd_calibrate(c, out, err), cli::kOk) << err.str();
    const auto memory = ReferenceMemory::load(c.out);
    ASSERT_EQ(memory.groups().size(), 1u);
    EXPECT_EQ(memory.groups()[0].mean_params.horizon, 10);
    EXPECT_NE(out.str().find("cal-0"), std::string::npos);
}
