#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv)
{
    using namespace vlmpc::cli;

    CLI::App app{"Two-layer vision-language planner over MPC: batch simulation, calibration and reporting"};
    app.require_subcommand(1);

    RunOptions run;
    std::uint64_t seed = 0;
    std::string config;
    std::string cassette;
    auto* run_cmd = app.add_subcommand("run", "Simulate scenarios and write traces and reports");
    run_cmd->add_option("--scenarios", run.scenarios, "Scenario file, directory or glob")->required();
    run_cmd->add_option("--planner", run.planner, "Upper layer")->check(CLI::IsMember({"memory", "lm"}));
    run_cmd->add_option("--config", config, "Configuration file");
    run_cmd->add_option("--out", run.out, "Output directory")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed, "Random seed");
    run_cmd->add_option("--cassette", cassette, "Recorded service interactions to replay");
    run_cmd->add_flag("--record", run.record, "Call the live services and record them into --cassette");
    run_cmd->add_option("--jobs", run.jobs, "Scenarios simulated in parallel")->check(CLI::PositiveNumber);

    CalibrateOptions cal;
    std::string cal_config;
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit per-scene parameters and build the reference memory");
    cal_cmd->add_option("--scenes", cal.scenes, "Directory of scenario files")->required();
    cal_cmd->add_option("--refs", cal.refs, "Directory of <scenario id>.csv reference trajectories")->required();
    cal_cmd->add_option("--out", cal.out, "Memory file to write")->required();
    cal_cmd->add_option("--config", cal_config, "Configuration file");

    ReportOptions rep;
    std::string rep_out;
    auto* rep_cmd = app.add_subcommand("report", "Recompute metrics and rollup tables from traces");
    rep_cmd->add_option("--traces", rep.traces, "Directory of trace files")->required();
    rep_cmd->add_option("--out", rep_out, "Directory for rollup.csv and rollup.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (*run_cmd) {
        if (*seed_opt) {
            run.seed = seed;
        }
        if (!config.empty()) {
            run.config = config;
        }
        if (!cassette.empty()) {
            run.cassette = cassette;
        }
        return cmd_run(run, std::cout, std::cerr);
    }
    if (*cal_cmd) {
        if (!cal_config.empty()) {
            cal.config = cal_config;
        }
        return cmd_calibrate(cal, std::cout, std::cerr);
    }
    if (!rep_out.empty()) {
        rep.out = rep_out;
    }
    return cmd_report(rep, std::cout, std::cerr);
}
