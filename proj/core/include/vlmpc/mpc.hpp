#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlmpc/dynamics.hpp"
#include "vlmpc/qp_solver.hpp"
#include "vlmpc/scene.hpp"

namespace vlmpc {

/// The six upper-layer outputs [N, Q, R, Q_h, v_d, h_d].
struct DrivingParams {
    int horizon = 9;               ///< N, prediction steps
    double speed_weight = 1.0;     ///< Q, pinned to 1
    double effort_weight = 1.68;   ///< R
    double headway_weight = 2.75;  ///< Q_h
    double desired_speed = 6.44;   ///< v_d [m/s]
    double desired_headway = 2.60; ///< h_d [s]

    static constexpr int kMinHorizon = 1;
    static constexpr int kMaxHorizon = 30;
    static constexpr double kMaxDesiredSpeed = 30.0;
    static constexpr double kMinHeadway = 0.5;
    static constexpr double kMaxHeadway = 5.0;

    /// Throws InvalidParams describing the first violated range.
    void validate() const;
    bool is_valid() const noexcept;

    std::array<double, 6> to_array() const;
    /// Rounds N to the nearest integer; does not validate.
    static DrivingParams from_array(std::span<const double, 6> values);

    bool operator==(const DrivingParams&) const = default;
};

/// "[N, Q, R, Q_h, v_d, h_d]" with shortest round-trip number formatting.
std::string format_params(const DrivingParams& params);

/// Constant time headway: desired gap = h_d * v + d_0.
struct SpacingPolicy {
    double standstill_gap = 2.0;  ///< d_0 [m]

    double desired_gap(double speed, double headway) const { return headway * speed + standstill_gap; }
};

/// Scale factors of the slack in each softened constraint family.
struct SlackScaling {
    double speed_lower = 1.0;
    double speed_upper = 1.0;
    double accel_lower = 1.0;
    double accel_upper = 1.0;
};

struct MpcConfig {
    double dt = 0.1;           ///< lower-layer step [s]
    double engine_lag = 0.4;   ///< tau_A of the prediction model [s]
    double v_min = 0.0;
    double v_max = 15.0;
    double u_min = -3.5;
    double u_max = 3.0;
    double slack_weight = 1e4; ///< rho
    SlackScaling sigma;

    void validate() const;
};

enum class LeaderKind { none, vehicle, stop_line, both };

/// Constraint object ahead of the ego, in ego-origin coordinates.
struct LeaderReference {
    LeaderKind kind = LeaderKind::none;
    double x_ref = 0.0;   ///< binding position now [m]
    double v_ref = 0.0;   ///< speed of the binding object [m/s]
    double length = kDefaultVehicleLength;
    std::optional<double> vehicle_rear;
    double vehicle_speed = 0.0;
    std::optional<double> stop_line;

    bool present() const { return kind != LeaderKind::none; }
    /// Binding position `ahead` seconds from now; the vehicle is
    /// extrapolated at constant speed, the stop line is static.
    double position_at(double ahead) const;
};

/// Binding reference: min(vehicle rear, stop line) when both exist.
LeaderReference resolve_leader(const SceneStatus& scene, double leader_length = kDefaultVehicleLength);

/// Slack variables, one per constraint family.
inline constexpr int kSlackCount = 4;
enum SlackIndex { kSlackSpeedLower = 0, kSlackSpeedUpper = 1, kSlackAccelLower = 2, kSlackAccelUpper = 3 };

/// Condensed QP over [u_0 .. u_{N-1}, eps]. The cost covers the predicted
/// states after each control (k = 1..N).
struct MpcProblem {
    QpProblem qp;
    int horizon = 0;
    bool tracks_gap = false;
    ZohModel model;
    Eigen::Vector3d initial = Eigen::Vector3d::Zero();  ///< (0, v, a) in ego-origin coordinates
    Eigen::MatrixXd speed_map;      ///< N x N, predicted speed per control
    Eigen::VectorXd speed_free;     ///< N, predicted speed with zero controls
    Eigen::MatrixXd position_map;
    Eigen::VectorXd position_free;
};

/// Throws InvalidParams when params or config are out of range.
MpcProblem build_qp(const DrivingParams& params,
                    const SceneStatus& scene,
                    const LeaderReference& leader,
                    const MpcConfig& config,
                    const SpacingPolicy& policy);

enum class MpcStatus { optimal, max_iter, infeasible_relaxed };

std::string_view to_string(MpcStatus status);

struct MpcSolution {
    std::vector<double> controls;          ///< u_0 .. u_{N-1}
    std::vector<VehicleState> predicted;   ///< states after each control, absolute coordinates
    double cost = 0.0;
    std::array<double, kSlackCount> slack{};
    MpcStatus status = MpcStatus::optimal;
    double kkt_residual = 0.0;
    int iterations = 0;
};

MpcSolution solve_qp(const MpcProblem& problem, const VehicleState& ego);

struct MpcStepResult {
    double control = 0.0;
    MpcSolution solution;
};

/// One receding-horizon step. Throws InvalidParams for bad inputs and
/// SolverError when the relaxed problem has no solution.
MpcStepResult mpc_step(const DrivingParams& params,
                       const SceneStatus& scene,
                       const MpcConfig& config,
                       const SpacingPolicy& policy,
                       double leader_length = kDefaultVehicleLength);

}  // namespace vlmpc
