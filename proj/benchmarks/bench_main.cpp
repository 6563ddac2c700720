#include <benchmark/benchmark.h>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/memory.hpp"
#include "vlmpc/mpc.hpp"
#include "vlmpc/simulator.hpp"

using namespace vlmpc;

namespace {

SceneStatus following_scene()
{
    SceneStatus s;
    s.ego_history.assign(kHistorySteps + 1, VehicleState{0.0, 7.0, 0.3, 0.0});
    s.leader = LeaderObservation{25.0, 6.0, -0.5};
    return s;
}

Scenario braking_scene(double duration)
{
    Scenario s;
    s.id = "bench";
    s.duration = duration;
    s.ego_init = {0.0, 6.0, 0.0, 0.0};
    double x = 25.0, v = 6.0;
    for (int i = 0; i <= static_cast<int>(duration * 10); ++i) {
        const double t = 0.1 * i;
        s.leader_track.push_back({t, x, v});
        const double a = (t >= 8.0 && t < 10.0) ? -2.0 : (t >= 14.0 && t < 18.0 ? 1.0 : 0.0);
        x += v * 0.1 + 0.05 * a * 0.1;
        v += a * 0.1;
    }
    return s;
}

void BM_MpcStep(benchmark::State& state)
{
    DrivingParams p;
    p.horizon = static_cast<int>(state.range(0));
    const auto scene = following_scene();
    const MpcConfig cfg;
    const SpacingPolicy policy;
    for (auto _ : state) {
        benchmark::DoNotOptimize(mpc_step(p, scene, cfg, policy));
    }
}
BENCHMARK(BM_MpcStep)->Arg(9)->Arg(30);

void BM_PlantStep(benchmark::State& state)
{
    const PlantParams plant;
    VehicleState s{0.0, 8.0, 0.2, 0.0};
    for (auto _ : state) {
        s = plant_step(s, 0.5, plant, 0.1);
        s.v = 8.0;
        benchmark::DoNotOptimize(s);
    }
}
BENCHMARK(BM_PlantStep);

void BM_RunScenario(benchmark::State& state)
{
    const auto scenario = braking_scene(30.0);
    FixedParamsPlanner planner(DrivingParams{});
    const SimConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(run_scenario(scenario, planner, cfg));
    }
}
BENCHMARK(BM_RunScenario)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
