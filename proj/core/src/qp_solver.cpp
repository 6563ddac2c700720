#include "vlmpc/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vlmpc/error.hpp"

namespace vlmpc {

double QpProblem::objective(const Eigen::VectorXd& z) const
{
    return 0.5 * z.dot(hessian * z) + gradient.dot(z) + constant;
}

double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& z, const Eigen::VectorXd& multipliers)
{
    const Eigen::VectorXd hz = qp.hessian * z;
    Eigen::VectorXd ct_lambda = Eigen::VectorXd::Zero(z.size());
    if (qp.num_constraints() > 0) {
        ct_lambda = qp.ineq_matrix.transpose() * multipliers;
    }
    const double scale = std::max({1.0,
                                   qp.gradient.lpNorm<Eigen::Infinity>(),
                                   hz.lpNorm<Eigen::Infinity>(),
                                   ct_lambda.lpNorm<Eigen::Infinity>()});
    return (hz + qp.gradient + ct_lambda).lpNorm<Eigen::Infinity>() / scale;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpResult finish(const QpProblem& qp,
                Eigen::VectorXd z,
                const std::vector<Eigen::Index>& active,
                const std::vector<double>& lambda,
                QpStatus status,
                int iterations)
{
    QpResult out;
    out.multipliers = Eigen::VectorXd::Zero(qp.num_constraints());
    for (std::size_t k = 0; k < active.size(); ++k) {
        out.multipliers[active[k]] = lambda[k];
    }
    out.objective = qp.objective(z);
    out.kkt_residual = kkt_residual(qp, z, out.multipliers);
    out.z = std::move(z);
    out.status = status;
    out.iterations = iterations;
    return out;
}

}  // namespace

QpResult solve_dense_qp(const QpProblem& qp, const QpOptions& options)
{
    const Eigen::Index n = qp.num_vars();
    const Eigen::Index m = qp.num_constraints();
    if (qp.hessian.rows() != n || qp.hessian.cols() != n || (m > 0 && (qp.ineq_matrix.rows() != m || qp.ineq_matrix.cols() != n))) {
        throw SolverError("QP dimensions are inconsistent");
    }

    const Eigen::LLT<Eigen::MatrixXd> llt(qp.hessian);
    if (llt.info() != Eigen::Success) {
        throw SolverError("QP Hessian is not positive definite");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    const auto lower = L.triangularView<Eigen::Lower>();
    const auto upper = L.transpose().triangularView<Eigen::Upper>();

    const int max_iter = options.max_iterations > 0 ? options.max_iterations : static_cast<int>(10 * (n + m) + 10);

    Eigen::VectorXd row_norm(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        row_norm[i] = std::max(qp.ineq_matrix.row(i).norm(), 1e-300);
    }

    Eigen::VectorXd z = -llt.solve(qp.gradient);
    std::vector<Eigen::Index> active;
    std::vector<double> lambda;
    std::vector<char> is_active(static_cast<std::size_t>(m), 0);
    int iterations = 0;

    for (;;) {
        // Pick the most violated constraint, measured in distance units.
        Eigen::Index p = -1;
        double worst = 0.0;
        const double z_norm = z.lpNorm<Eigen::Infinity>();
        for (Eigen::Index i = 0; i < m; ++i) {
            if (is_active[i]) {
                continue;
            }
            const double slack = qp.ineq_bound[i] - qp.ineq_matrix.row(i).dot(z);
            const double tol = options.feasibility_tol * (1.0 + std::abs(qp.ineq_bound[i]) + row_norm[i] * z_norm);
            if (slack < -tol && slack / row_norm[i] < worst) {
                worst = slack / row_norm[i];
                p = i;
            }
        }
        if (p < 0) {
            return finish(qp, std::move(z), active, lambda, QpStatus::optimal, iterations);
        }

        double lambda_p = 0.0;
        const Eigen::VectorXd normal_p = -qp.ineq_matrix.row(p).transpose();
        for (;;) {
            if (++iterations > max_iter) {
                return finish(qp, std::move(z), active, lambda, QpStatus::max_iter, iterations);
            }
            const Eigen::VectorXd d_vec = lower.solve(normal_p);
            Eigen::VectorXd r;
            Eigen::VectorXd residual = d_vec;
            if (!active.empty()) {
                Eigen::MatrixXd M(n, static_cast<Eigen::Index>(active.size()));
                for (std::size_t k = 0; k < active.size(); ++k) {
                    M.col(static_cast<Eigen::Index>(k)) = lower.solve(Eigen::VectorXd(-qp.ineq_matrix.row(active[k]).transpose()));
                }
                r = M.householderQr().solve(d_vec);
                residual -= M * r;
            }
            const Eigen::VectorXd step = upper.solve(residual);
            const double curvature = residual.squaredNorm();
            const bool primal_step = curvature > 1e-20 * std::max(1.0, d_vec.squaredNorm());

            double t_dual = kInf;
            std::size_t drop = active.size();
            for (std::size_t k = 0; k < active.size(); ++k) {
                const double rk = r[static_cast<Eigen::Index>(k)];
                if (rk > 1e-14) {
                    const double ratio = lambda[k] / rk;
                    if (ratio < t_dual) {
                        t_dual = ratio;
                        drop = k;
                    }
                }
            }
            double t_primal = kInf;
            if (primal_step) {
                const double slack_p = qp.ineq_bound[p] - qp.ineq_matrix.row(p).dot(z);
                t_primal = std::max(0.0, -slack_p / curvature);
            }
            const double t = std::min(t_dual, t_primal);
            if (!std::isfinite(t)) {
                return finish(qp, std::move(z), active, lambda, QpStatus::infeasible, iterations);
            }

            if (primal_step) {
                z += t * step;
            }
            for (std::size_t k = 0; k < active.size(); ++k) {
                lambda[k] -= t * r[static_cast<Eigen::Index>(k)];
            }
            lambda_p += t;

            if (primal_step && t_primal <= t_dual) {
                active.push_back(p);
                lambda.push_back(lambda_p);
                is_active[p] = 1;
                break;
            }
            is_active[active[drop]] = 0;
            active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop));
            lambda.erase(lambda.begin() + static_cast<std::ptrdiff_t>(drop));
        }
    }
}

}  // namespace vlmpc
