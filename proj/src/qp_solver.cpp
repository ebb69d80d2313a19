#include "mmpc/qp_solver.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace mmpc {

namespace {

constexpr double kRegularization = 1e-8;
constexpr int kFarkasInterval = 50;
// Minimum radius (relative to the problem scale) that a Farkas certificate must exclude.
constexpr double kInfeasibleRadius = 1e8;

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

} // namespace

QpProblem::QpProblem(Eigen::MatrixXd H_in, Eigen::VectorXd f_in, Eigen::MatrixXd A_in, Eigen::VectorXd b_in)
    : H(std::move(H_in)), f(std::move(f_in)), A_ineq(std::move(A_in)), b_ineq(std::move(b_in)) {
    const auto d = H.rows();
    if (H.cols() != d) {
        throw DimensionError("QP Hessian must be square");
    }
    if (f.size() != d) {
        throw DimensionError("QP linear term has length " + std::to_string(f.size()) + ", expected " +
                             std::to_string(d));
    }
    if (A_ineq.cols() != d && A_ineq.rows() > 0) {
        throw DimensionError("QP constraint matrix has " + std::to_string(A_ineq.cols()) + " columns, expected " +
                             std::to_string(d));
    }
    if (A_ineq.rows() == 0) {
        A_ineq.resize(0, d);
    }
    if (b_ineq.size() != A_ineq.rows()) {
        throw DimensionError("QP constraint bound has length " + std::to_string(b_ineq.size()) + ", expected " +
                             std::to_string(A_ineq.rows()));
    }
    H = 0.5 * (H + H.transpose()).eval();
}

QpProblem::QpProblem(Eigen::MatrixXd H_in, Eigen::VectorXd f_in)
    : QpProblem(std::move(H_in), std::move(f_in), Eigen::MatrixXd(0, 0), Eigen::VectorXd(0)) {}

QpSolver::QpSolver(const Eigen::MatrixXd& H, const Eigen::MatrixXd& A_ineq, QpOptions options)
    : H_(0.5 * (H + H.transpose())), A_(A_ineq), options_(options) {
    const auto d = H_.rows();
    if (H_.cols() != d || (A_.rows() > 0 && A_.cols() != d)) {
        throw DimensionError("QP solver: Hessian " + std::to_string(H.rows()) + "x" + std::to_string(H.cols()) +
                             " and constraint matrix " + std::to_string(A_ineq.rows()) + "x" +
                             std::to_string(A_ineq.cols()) + " are inconsistent");
    }
    if (A_.rows() == 0) {
        A_.resize(0, d);
    }
    if (!(options_.tol > 0.0) || options_.max_iter < 1) {
        throw ConfigError("QP tolerance must be positive and the iteration cap at least 1");
    }
    if (d > 0) {
        const double level = kRegularization * H_.trace() / static_cast<double>(d);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H_, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < level) {
            eps_ = level > 0.0 ? level : kRegularization;
            H_.diagonal().array() += eps_;
        }
    }
    llt_.compute(H_);
    if (llt_.info() != Eigen::Success) {
        throw NumericalError("QP Hessian is not positive definite after regularization");
    }
    hinv_at_ = llt_.solve(A_.transpose());
    dual_ = A_ * hinv_at_;
}

bool QpSolver::farkas_certificate(const Eigen::VectorXd& lambda, const Eigen::VectorXd& b) const {
    const double top = inf_norm(lambda);
    if (!(top > 0.0)) {
        return false;
    }
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) > 1e-9 * top) {
            support.push_back(i);
        }
    }
    const auto s = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd As(s, A_.cols());
    Eigen::VectorXd ls(s), bs(s);
    for (Eigen::Index k = 0; k < s; ++k) {
        As.row(k) = A_.row(support[static_cast<std::size_t>(k)]);
        ls(k) = lambda(support[static_cast<std::size_t>(k)]);
        bs(k) = b(support[static_cast<std::size_t>(k)]);
    }
    ls /= ls.norm();
    // Component of the dual direction in null(As'): a candidate y >= 0 with A'y = 0, b'y < 0.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(As, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-10);
    const Eigen::VectorXd z = svd.solve(ls);
    const Eigen::VectorXd y = (ls - As * z).cwiseMax(0.0);
    const double gap = bs.dot(y);
    if (!(gap < 0.0)) {
        return false;
    }
    // For any feasible u: (A'y)'u <= b'y < 0, so |u|_inf >= -b'y / |A'y|_1.
    const double residual = (As.transpose() * y).lpNorm<1>();
    const double scale = 1.0 + inf_norm(b) + A_.cwiseAbs().maxCoeff();
    return residual == 0.0 || -gap / residual > kInfeasibleRadius * scale;
}

QpSolution QpSolver::solve(const Eigen::VectorXd& f, const Eigen::VectorXd& b) const {
    const auto d = H_.rows();
    const auto r = A_.rows();
    if (f.size() != d || b.size() != r) {
        throw DimensionError("QP solve: f has length " + std::to_string(f.size()) + " (expected " +
                             std::to_string(d) + "), b has length " + std::to_string(b.size()) + " (expected " +
                             std::to_string(r) + ")");
    }
    const double tol_b = options_.tol * (1.0 + inf_norm(b));
    const Eigen::VectorXd u0 = -llt_.solve(f);

    QpSolution sol;
    sol.regularization = eps_;
    sol.lambda = Eigen::VectorXd::Zero(r);

    // w holds the slack b - A u(lambda), kept current under coordinate updates.
    Eigen::VectorXd w = b - A_ * u0;
    auto finish = [&](QpSolution& out) {
        out.u = u0 - hinv_at_ * out.lambda;
        out.objective = f.dot(out.u) + 0.5 * out.u.dot(H_ * out.u);
        out.active_set.clear();
        for (Eigen::Index i = 0; i < r; ++i) {
            if (out.lambda(i) > 0.0) {
                out.active_set.push_back(static_cast<int>(i));
            }
        }
        out.primal_residual = r ? std::max(0.0, -w.minCoeff()) : 0.0;
        out.complementarity = r ? (out.lambda.array() * w.array()).abs().maxCoeff() : 0.0;
    };

    for (Eigen::Index i = 0; i < r; ++i) {
        if (dual_(i, i) <= 1e-14 * (1.0 + dual_.diagonal().maxCoeff()) && w(i) < -tol_b) {
            throw QpInfeasibleError("QP constraint row " + std::to_string(i) + " is 0'u <= " +
                                    std::to_string(b(i)) + ", which no point satisfies");
        }
    }
    if (r == 0 || w.minCoeff() >= -tol_b) {
        finish(sol);
        return sol;
    }

    for (int sweep = 1; sweep <= options_.max_iter; ++sweep) {
        for (Eigen::Index i = 0; i < r; ++i) {
            const double gii = dual_(i, i);
            if (gii <= 0.0) {
                continue;
            }
            const double updated = std::max(0.0, sol.lambda(i) - w(i) / gii);
            const double delta = updated - sol.lambda(i);
            if (delta != 0.0) {
                sol.lambda(i) = updated;
                w.noalias() += delta * dual_.col(i);
            }
        }
        sol.iterations = sweep;
        const double viol = std::max(0.0, -w.minCoeff());
        const double comp = (sol.lambda.array() * w.array()).abs().maxCoeff();
        if (viol <= tol_b && comp <= options_.tol) {
            finish(sol);
            return sol;
        }
        if (sweep % kFarkasInterval == 0 && farkas_certificate(sol.lambda, b)) {
            throw QpInfeasibleError("QP constraints are infeasible (Farkas certificate after " +
                                    std::to_string(sweep) + " sweeps)");
        }
    }
    if (farkas_certificate(sol.lambda, b)) {
        throw QpInfeasibleError("QP constraints are infeasible");
    }
    finish(sol);
    std::ostringstream msg;
    msg << "QP iteration cap " << options_.max_iter << " reached (primal residual " << sol.primal_residual
        << ", complementarity " << sol.complementarity << ")";
    throw QpIterationLimitError(msg.str(), sol);
}

QpSolution solve_qp(const QpProblem& qp, QpOptions options) {
    return QpSolver(qp.H, qp.A_ineq, options).solve(qp.f, qp.b_ineq);
}

} // namespace mmpc
