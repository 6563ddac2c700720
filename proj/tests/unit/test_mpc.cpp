#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "vlmpc/error.hpp"
#include "vlmpc/memory.hpp"
#include "vlmpc/mpc.hpp"

using namespace vlmpc;

namespace {

SceneStatus scene_at(const VehicleState& ego,
                     std::optional<LeaderObservation> leader = std::nullopt,
                     std::optional<double> stop_line = std::nullopt)
{
    SceneStatus s;
    s.ego_history.assign(kHistorySteps + 1, ego);
    s.leader = leader;
    s.stop_line_gap = stop_line;
    return s;
}

DrivingParams table_row(int cell)
{
    return ReferenceMemory::reference_table().lookup(ScenarioFeatures::from_index(cell));
}

// Stage cost of a control sequence evaluated by forward simulation.
double direct_cost(const DrivingParams& p,
                   const VehicleState& ego,
                   const LeaderReference& leader,
                   const MpcConfig& cfg,
                   const SpacingPolicy& policy,
                   const std::vector<double>& u)
{
    VehicleState s{0.0, ego.v, ego.a, 0.0};
    double cost = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        s = linear_accel_step(s, u[k], cfg.engine_lag, cfg.dt);
        cost += p.speed_weight * std::pow(s.v - p.desired_speed, 2) + p.effort_weight * u[k] * u[k];
        if (leader.present()) {
            const double gap = leader.position_at(static_cast<double>(k + 1) * cfg.dt) - s.x;
            cost += p.headway_weight * std::pow(gap - policy.desired_gap(s.v, p.desired_headway), 2);
        }
    }
    return cost;
}

}  // namespace

TEST(ResolveLeader, StopLineCloserThanVehicle)
{
    const auto ref = resolve_leader(scene_at({}, LeaderObservation{40 + kDefaultVehicleLength, 5, 0}, 30.0));
    EXPECT_EQ(ref.kind, LeaderKind::both);
    EXPECT_DOUBLE_EQ(ref.x_ref, 30.0);
    EXPECT_DOUBLE_EQ(ref.v_ref, 0.0);
}

TEST(ResolveLeader, StopLineOnly)
{
    const auto ref = resolve_leader(scene_at({}, std::nullopt, 25.0));
    EXPECT_EQ(ref.kind, LeaderKind::stop_line);
    EXPECT_DOUBLE_EQ(ref.x_ref, 25.0);
    EXPECT_DOUBLE_EQ(ref.v_ref, 0.0);
}

TEST(ResolveLeader, NothingAhead)
{
    const auto ref = resolve_leader(scene_at({}));
    EXPECT_EQ(ref.kind, LeaderKind::none);
    const auto prob = build_qp(DrivingParams{}, scene_at({}), ref, MpcConfig{}, SpacingPolicy{});
    EXPECT_FALSE(prob.tracks_gap);
}

TEST(BuildQp, TableRowDimensions)
{
    const auto p = table_row(0);
    const auto prob = build_qp(p, scene_at({0, 5, 0, 0}), resolve_leader(scene_at({})), MpcConfig{}, SpacingPolicy{});
    EXPECT_EQ(prob.horizon, 9);
    EXPECT_EQ(prob.qp.num_vars(), 9 + kSlackCount);
}

TEST(BuildQp, ZeroHeadwayWeightMatchesSpeedOnlyProblem)
{
    DrivingParams p = table_row(0);
    p.headway_weight = 0.0;
    const VehicleState ego{0, 4, 0.2, 0};
    const auto with_leader = scene_at(ego, LeaderObservation{20, 3, 0});
    const auto a = solve_qp(build_qp(p, with_leader, resolve_leader(with_leader), MpcConfig{}, SpacingPolicy{}), ego);
    const auto b = solve_qp(build_qp(p, scene_at(ego), resolve_leader(scene_at(ego)), MpcConfig{}, SpacingPolicy{}), ego);
    ASSERT_EQ(a.controls.size(), b.controls.size());
    for (std::size_t k = 0; k < a.controls.size(); ++k) {
        EXPECT_NEAR(a.controls[k], b.controls[k], 1e-9);
    }
}

TEST(BuildQp, ObjectiveEqualsSimulatedCost)
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> v(0, 12), a(-1, 1), gap(8, 60), vl(0, 12), u(-3, 3);
    const MpcConfig cfg;
    const SpacingPolicy policy;
    for (int trial = 0; trial < 50; ++trial) {
        DrivingParams p = table_row(trial % 8);
        p.horizon = 1 + trial % 12;
        const VehicleState ego{0, v(rng), a(rng), 0};
        const auto scene = scene_at(ego, LeaderObservation{gap(rng), vl(rng), 0});
        const auto leader = resolve_leader(scene);
        const auto prob = build_qp(p, scene, leader, cfg, policy);
        std::vector<double> controls(static_cast<std::size_t>(p.horizon));
        Eigen::VectorXd z = Eigen::VectorXd::Zero(prob.qp.num_vars());
        for (int k = 0; k < p.horizon; ++k) {
            controls[static_cast<std::size_t>(k)] = z[k] = u(rng);
        }
        const double expected = direct_cost(p, ego, leader, cfg, policy, controls);
        EXPECT_NEAR(prob.qp.objective(z), expected, 1e-8 * std::max(1.0, expected));
    }
}

TEST(SolveQp, AtSetpointStaysPut)
{
    DrivingParams p = table_row(0);
    p.horizon = 1;
    const auto r = mpc_step(p, scene_at({0, p.desired_speed, 0, 0}), MpcConfig{}, SpacingPolicy{});
    EXPECT_NEAR(r.control, 0.0, 1e-10);
    EXPECT_NEAR(r.solution.cost, 0.0, 1e-10);
}

TEST(SolveQp, SingleStepClosedForm)
{
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> v(0, 12), a(-1, 1), r(0.5, 3);
    const MpcConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        DrivingParams p = table_row(0);
        p.horizon = 1;
        p.effort_weight = r(rng);
        const VehicleState ego{0, v(rng), a(rng), 0};
        const ZohModel m = zoh_discretize(cfg.engine_lag, cfg.dt);
        const double g = m.B[1];
        const double v_free = (m.A * Eigen::Vector3d(0, ego.v, ego.a))[1];
        const double dv = p.desired_speed - v_free;
        double expected = p.speed_weight * dv * g / (p.effort_weight + p.speed_weight * g * g);
        if (expected > cfg.u_max || expected < cfg.u_min) {
            continue;
        }
        const auto res = mpc_step(p, scene_at(ego), cfg, SpacingPolicy{});
        EXPECT_NEAR(res.control, expected, 1e-8);
    }
}

TEST(SolveQp, SpeedLimitOnlySoftlyExceeded)
{
    // A setpoint above the limit pulls against the slack penalty; the
    // excursion stays within the slack and is small.
    DrivingParams p = table_row(0);
    p.desired_speed = 20.0;
    MpcConfig cfg;
    const VehicleState ego{0, cfg.v_max, 0, 0};
    const auto r = mpc_step(p, scene_at(ego), cfg, SpacingPolicy{});
    const double slack = r.solution.slack[kSlackSpeedUpper];
    for (const auto& s : r.solution.predicted) {
        EXPECT_LE(s.v, cfg.v_max + cfg.sigma.speed_upper * slack + 1e-6);
    }
    EXPECT_LT(slack, 0.01);
}

TEST(SolveQp, UnavoidableViolationUsesMinimalSlack)
{
    // Too fast to get under the limit within one step: the slack must equal
    // the excess of the best achievable speed.
    DrivingParams p = table_row(0);
    p.horizon = 1;
    MpcConfig cfg;
    const VehicleState ego{0, cfg.v_max + 2.0, 0, 0};
    const auto r = mpc_step(p, scene_at(ego), cfg, SpacingPolicy{});
    const ZohModel m = zoh_discretize(cfg.engine_lag, cfg.dt);
    const double best_v = (m.A * Eigen::Vector3d(0, ego.v, 0))[1] + m.B[1] * cfg.u_min;
    EXPECT_NEAR(r.solution.predicted[0].v, cfg.v_max + r.solution.slack[kSlackSpeedUpper], 1e-6);
    EXPECT_NEAR(r.solution.slack[kSlackSpeedUpper], best_v - cfg.v_max, 1e-3);
}

TEST(MpcStep, StandstillBehindStoppedLeader)
{
    // With v_d = 0 the standstill is an exact equilibrium of the cost.
    DrivingParams p = table_row(0);
    p.desired_speed = 0.0;
    const SpacingPolicy policy;
    const auto scene = scene_at({0, 0, 0, 0}, LeaderObservation{policy.standstill_gap + kDefaultVehicleLength, 0, 0});
    EXPECT_LT(std::abs(mpc_step(p, scene, MpcConfig{}, policy).control), 0.05);
}

TEST(MpcStep, CruisingAtSetpoint)
{
    const auto p = table_row(0);
    EXPECT_LT(std::abs(mpc_step(p, scene_at({0, p.desired_speed, 0, 0}), MpcConfig{}, SpacingPolicy{}).control), 1e-9);
}

TEST(MpcStep, BrakesForStopLine)
{
    const auto p = table_row(3);
    EXPECT_LT(mpc_step(p, scene_at({0, 8, 0, 0}, std::nullopt, 12.0), MpcConfig{}, SpacingPolicy{}).control, 0.0);
}

TEST(MpcStep, RejectsInvalidParams)
{
    DrivingParams p;
    p.horizon = 0;
    EXPECT_THROW(mpc_step(p, scene_at({}), MpcConfig{}, SpacingPolicy{}), InvalidParams);
}

TEST(DrivingParams, ArrayRoundTrip)
{
    const DrivingParams p = table_row(5);
    const auto a = p.to_array();
    EXPECT_EQ(DrivingParams::from_array(std::span<const double, 6>(a)), p);
    EXPECT_EQ(format_params(table_row(0)), "[9, 1, 1.68, 2.75, 6.44, 2.6]");
}
