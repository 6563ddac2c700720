#include "vlmpc/mpc.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "vlmpc/error.hpp"

namespace vlmpc {

void DrivingParams::validate() const
{
    if (horizon < kMinHorizon || horizon > kMaxHorizon) {
        throw InvalidParams(fmt::format("N = {} outside [{}, {}]", horizon, kMinHorizon, kMaxHorizon));
    }
    if (!(speed_weight == 1.0)) {
        throw InvalidParams(fmt::format("Q = {} but must equal 1", speed_weight));
    }
    if (!(effort_weight > 0.0) || !std::isfinite(effort_weight)) {
        throw InvalidParams(fmt::format("R = {} must be positive", effort_weight));
    }
    if (!(headway_weight >= 0.0) || !std::isfinite(headway_weight)) {
        throw InvalidParams(fmt::format("Q_h = {} must be non-negative", headway_weight));
    }
    if (!(desired_speed >= 0.0 && desired_speed <= kMaxDesiredSpeed)) {
        throw InvalidParams(fmt::format("v_d = {} outside [0, {}]", desired_speed, kMaxDesiredSpeed));
    }
    if (!(desired_headway >= kMinHeadway && desired_headway <= kMaxHeadway)) {
        throw InvalidParams(fmt::format("h_d = {} outside [{}, {}]", desired_headway, kMinHeadway, kMaxHeadway));
    }
}

bool DrivingParams::is_valid() const noexcept
{
    try {
        validate();
        return true;
    } catch (const InvalidParams&) {
        return false;
    }
}

std::array<double, 6> DrivingParams::to_array() const
{
    return {static_cast<double>(horizon), speed_weight, effort_weight, headway_weight, desired_speed, desired_headway};
}

DrivingParams DrivingParams::from_array(std::span<const double, 6> v)
{
    DrivingParams p;
    const double n = std::round(v[0]);
    p.horizon = std::isfinite(n) && std::abs(n) < 1e6 ? static_cast<int>(n) : 0;
    p.speed_weight = v[1];
    p.effort_weight = v[2];
    p.headway_weight = v[3];
    p.desired_speed = v[4];
    p.desired_headway = v[5];
    return p;
}

std::string format_params(const DrivingParams& p)
{
    return fmt::format("[{}, {}, {}, {}, {}, {}]", p.horizon, p.speed_weight, p.effort_weight, p.headway_weight,
                       p.desired_speed, p.desired_headway);
}

void MpcConfig::validate() const
{
    if (!(dt > 0.0)) {
        throw InvalidParams("mpc.dt must be positive");
    }
    if (!(engine_lag > 0.0)) {
        throw InvalidParams("mpc.engine_lag must be positive");
    }
    if (!(v_min <= v_max)) {
        throw InvalidParams("mpc.v_min must not exceed mpc.v_max");
    }
    if (!(u_min < 0.0 && 0.0 < u_max)) {
        throw InvalidParams("mpc accel bounds must satisfy u_min < 0 < u_max");
    }
    if (!(slack_weight > 0.0)) {
        throw InvalidParams("mpc.rho must be positive");
    }
    if (sigma.speed_lower < 0.0 || sigma.speed_upper < 0.0 || sigma.accel_lower < 0.0 || sigma.accel_upper < 0.0) {
        throw InvalidParams("slack scaling factors must be non-negative");
    }
}

double LeaderReference::position_at(double ahead) const
{
    switch (kind) {
    case LeaderKind::none: return 0.0;
    case LeaderKind::vehicle: return *vehicle_rear + vehicle_speed * ahead;
    case LeaderKind::stop_line: return *stop_line;
    case LeaderKind::both: return std::min(*vehicle_rear + vehicle_speed * ahead, *stop_line);
    }
    return 0.0;
}

LeaderReference resolve_leader(const SceneStatus& scene, double leader_length)
{
    LeaderReference ref;
    ref.length = leader_length;
    if (scene.leader) {
        ref.vehicle_rear = scene.leader->gap - leader_length;
        ref.vehicle_speed = scene.leader->speed;
    }
    ref.stop_line = scene.stop_line_gap;

    if (ref.vehicle_rear && ref.stop_line) {
        ref.kind = LeaderKind::both;
        if (*ref.stop_line < *ref.vehicle_rear) {
            ref.x_ref = *ref.stop_line;
            ref.v_ref = 0.0;
        } else {
            ref.x_ref = *ref.vehicle_rear;
            ref.v_ref = ref.vehicle_speed;
        }
    } else if (ref.vehicle_rear) {
        ref.kind = LeaderKind::vehicle;
        ref.x_ref = *ref.vehicle_rear;
        ref.v_ref = ref.vehicle_speed;
    } else if (ref.stop_line) {
        ref.kind = LeaderKind::stop_line;
        ref.x_ref = *ref.stop_line;
        ref.v_ref = 0.0;
    }
    return ref;
}

std::string_view to_string(MpcStatus status)
{
    switch (status) {
    case MpcStatus::optimal: return "optimal";
    case MpcStatus::max_iter: return "max_iter";
    case MpcStatus::infeasible_relaxed: return "infeasible_relaxed";
    }
    return "unknown";
}

MpcProblem build_qp(const DrivingParams& params,
                    const SceneStatus& scene,
                    const LeaderReference& leader,
                    const MpcConfig& config,
                    const SpacingPolicy& policy)
{
    params.validate();
    config.validate();
    if (scene.ego_history.empty()) {
        throw InvalidParams("scene has no ego state");
    }

    const int N = params.horizon;
    const Eigen::Index n = N + kSlackCount;
    const VehicleState& ego = scene.ego();

    MpcProblem prob;
    prob.horizon = N;
    prob.tracks_gap = leader.present();
    prob.model = zoh_discretize(config.engine_lag, config.dt);
    prob.initial = Eigen::Vector3d(0.0, ego.v, ego.a);

    // Condense: s_k = A^k s_0 + sum_{j<k} A^{k-1-j} B u_j.
    const Eigen::Matrix3d& A = prob.model.A;
    std::vector<Eigen::Vector3d> impulse(static_cast<std::size_t>(N));  // A^i B
    impulse[0] = prob.model.B;
    for (int i = 1; i < N; ++i) {
        impulse[static_cast<std::size_t>(i)] = A * impulse[static_cast<std::size_t>(i - 1)];
    }
    prob.speed_map = Eigen::MatrixXd::Zero(N, N);
    prob.position_map = Eigen::MatrixXd::Zero(N, N);
    prob.speed_free.resize(N);
    prob.position_free.resize(N);
    Eigen::Vector3d free = prob.initial;
    for (int k = 1; k <= N; ++k) {
        free = A * free;
        prob.speed_free[k - 1] = free[1];
        prob.position_free[k - 1] = free[0];
        for (int j = 0; j < k; ++j) {
            const Eigen::Vector3d& g = impulse[static_cast<std::size_t>(k - 1 - j)];
            prob.speed_map(k - 1, j) = g[1];
            prob.position_map(k - 1, j) = g[0];
        }
    }

    QpProblem& qp = prob.qp;
    qp.hessian = Eigen::MatrixXd::Zero(n, n);
    qp.gradient = Eigen::VectorXd::Zero(n);
    qp.constant = 0.0;

    auto H = qp.hessian.topLeftCorner(N, N);
    auto g = qp.gradient.head(N);

    // Speed tracking.
    const Eigen::VectorXd speed_err = prob.speed_free.array() - params.desired_speed;
    H += 2.0 * params.speed_weight * prob.speed_map.transpose() * prob.speed_map;
    g += 2.0 * params.speed_weight * prob.speed_map.transpose() * speed_err;
    qp.constant += params.speed_weight * speed_err.squaredNorm();

    // Control effort.
    H.diagonal().array() += 2.0 * params.effort_weight;

    // Headway: gap error = x_ref - x - (h_d v + d_0) = e - G u.
    if (prob.tracks_gap) {
        Eigen::VectorXd e(N);
        for (int k = 1; k <= N; ++k) {
            e[k - 1] = leader.position_at(k * config.dt) - policy.standstill_gap - prob.position_free[k - 1]
                       - params.desired_headway * prob.speed_free[k - 1];
        }
        const Eigen::MatrixXd G = prob.position_map + params.desired_headway * prob.speed_map;
        H += 2.0 * params.headway_weight * G.transpose() * G;
        g -= 2.0 * params.headway_weight * G.transpose() * e;
        qp.constant += params.headway_weight * e.squaredNorm();
    }

    // Slack penalty eps' rho eps.
    qp.hessian.bottomRightCorner(kSlackCount, kSlackCount).diagonal().setConstant(2.0 * config.slack_weight);

    // C z <= d.
    const Eigen::Index rows = 4 * N + kSlackCount;
    qp.ineq_matrix = Eigen::MatrixXd::Zero(rows, n);
    qp.ineq_bound = Eigen::VectorXd::Zero(rows);
    Eigen::Index r = 0;
    for (int k = 0; k < N; ++k, ++r) {  // v_k <= v_max + sigma eps
        qp.ineq_matrix.row(r).head(N) = prob.speed_map.row(k);
        qp.ineq_matrix(r, N + kSlackSpeedUpper) = -config.sigma.speed_upper;
        qp.ineq_bound[r] = config.v_max - prob.speed_free[k];
    }
    for (int k = 0; k < N; ++k, ++r) {  // v_k >= v_min - sigma eps
        qp.ineq_matrix.row(r).head(N) = -prob.speed_map.row(k);
        qp.ineq_matrix(r, N + kSlackSpeedLower) = -config.sigma.speed_lower;
        qp.ineq_bound[r] = prob.speed_free[k] - config.v_min;
    }
    for (int k = 0; k < N; ++k, ++r) {  // u_k <= u_max + sigma eps
        qp.ineq_matrix(r, k) = 1.0;
        qp.ineq_matrix(r, N + kSlackAccelUpper) = -config.sigma.accel_upper;
        qp.ineq_bound[r] = config.u_max;
    }
    for (int k = 0; k < N; ++k, ++r) {  // u_k >= u_min - sigma eps
        qp.ineq_matrix(r, k) = -1.0;
        qp.ineq_matrix(r, N + kSlackAccelLower) = -config.sigma.accel_lower;
        qp.ineq_bound[r] = -config.u_min;
    }
    for (int s = 0; s < kSlackCount; ++s, ++r) {  // eps >= 0
        qp.ineq_matrix(r, N + s) = -1.0;
    }
    return prob;
}

MpcSolution solve_qp(const MpcProblem& problem, const VehicleState& ego)
{
    const QpResult res = solve_dense_qp(problem.qp);
    const int N = problem.horizon;

    MpcSolution sol;
    sol.controls.assign(res.z.data(), res.z.data() + N);
    for (int s = 0; s < kSlackCount; ++s) {
        sol.slack[static_cast<std::size_t>(s)] = std::max(0.0, res.z[N + s]);
    }
    sol.cost = res.objective;
    sol.kkt_residual = res.kkt_residual;
    sol.iterations = res.iterations;
    switch (res.status) {
    case QpStatus::optimal: sol.status = MpcStatus::optimal; break;
    case QpStatus::max_iter: sol.status = MpcStatus::max_iter; break;
    case QpStatus::infeasible: sol.status = MpcStatus::infeasible_relaxed; break;
    }

    Eigen::Vector3d s = problem.initial;
    sol.predicted.reserve(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
        s = problem.model.A * s + problem.model.B * sol.controls[static_cast<std::size_t>(k)];
        sol.predicted.push_back({ego.x + s[0], s[1], s[2], ego.t + (k + 1) * (problem.model.A(0, 1))});
    }
    return sol;
}

MpcStepResult mpc_step(const DrivingParams& params,
                       const SceneStatus& scene,
                       const MpcConfig& config,
                       const SpacingPolicy& policy,
                       double leader_length)
{
    const LeaderReference leader = resolve_leader(scene, leader_length);
    const MpcProblem problem = build_qp(params, scene, leader, config, policy);
    MpcStepResult out;
    out.solution = solve_qp(problem, scene.ego());
    if (out.solution.status == MpcStatus::infeasible_relaxed) {
        throw SolverError("MPC problem infeasible even with slack relaxation");
    }
    out.control = out.solution.controls.front();
    return out;
}

}  // namespace vlmpc
