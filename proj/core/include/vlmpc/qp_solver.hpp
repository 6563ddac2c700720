#pragma once

#include <Eigen/Dense>

namespace vlmpc {

/// Dense strictly convex QP:
///   minimize   0.5 z' H z + g' z + c
///   subject to C z <= d
struct QpProblem {
    Eigen::MatrixXd hessian;
    Eigen::VectorXd gradient;
    double constant = 0.0;
    Eigen::MatrixXd ineq_matrix;
    Eigen::VectorXd ineq_bound;

    Eigen::Index num_vars() const { return gradient.size(); }
    Eigen::Index num_constraints() const { return ineq_bound.size(); }
    double objective(const Eigen::VectorXd& z) const;
};

enum class QpStatus { optimal, max_iter, infeasible };

struct QpOptions {
    int max_iterations = 0;  ///< 0 selects 10 * (n + m)
    double feasibility_tol = 1e-10;
};

struct QpResult {
    Eigen::VectorXd z;
    Eigen::VectorXd multipliers;  ///< one per inequality row, >= 0
    double objective = 0.0;
    QpStatus status = QpStatus::optimal;
    int iterations = 0;
    double kkt_residual = 0.0;
};

/// Goldfarb-Idnani dual active-set method. Starts from the unconstrained
/// minimizer and adds violated constraints one at a time, so the common
/// "nothing active" case costs a single Cholesky solve.
QpResult solve_dense_qp(const QpProblem& qp, const QpOptions& options = {});

/// Scaled stationarity residual ||H z + g + C' lambda||_inf / max(1, ||g||, ||H z||, ||C' lambda||).
double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& z, const Eigen::VectorXd& multipliers);

}  // namespace vlmpc
