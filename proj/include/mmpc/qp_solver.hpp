#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mmpc/error.hpp"

namespace mmpc {

/**
 * @brief min f'u + 1/2 u'Hu  subject to  A u <= b.
 *
 * H is symmetrized on construction.
 */
struct QpProblem {
    QpProblem(Eigen::MatrixXd H, Eigen::VectorXd f, Eigen::MatrixXd A_ineq, Eigen::VectorXd b_ineq);
    // Unconstrained.
    QpProblem(Eigen::MatrixXd H, Eigen::VectorXd f);

    Eigen::MatrixXd H;
    Eigen::VectorXd f;
    Eigen::MatrixXd A_ineq;
    Eigen::VectorXd b_ineq;
};

struct QpOptions {
    double tol = 1e-8;
    int max_iter = 10000;
};

struct QpSolution {
    Eigen::VectorXd u;
    Eigen::VectorXd lambda;
    std::vector<int> active_set;
    double objective = 0.0;
    int iterations = 0;
    double regularization = 0.0;
    double primal_residual = 0.0;
    double complementarity = 0.0;
};

class QpInfeasibleError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class QpIterationLimitError : public NumericalError {
public:
    QpIterationLimitError(const std::string& what, QpSolution best)
        : NumericalError(what), best_(std::move(best)) {}

    [[nodiscard]] const QpSolution& best() const noexcept { return best_; }

private:
    QpSolution best_;
};

/**
 * Hildreth's dual coordinate-ascent method with the Hessian and constraint
 * matrix factored once; solve() only takes the vectors that change between
 * sampling instants.
 *
 * If the smallest eigenvalue of H is below 1e-8 trace(H)/d, eps I with
 * eps = 1e-8 trace(H)/d is added before factoring.
 */
class QpSolver {
public:
    QpSolver(const Eigen::MatrixXd& H, const Eigen::MatrixXd& A_ineq, QpOptions options = {});

    [[nodiscard]] QpSolution solve(const Eigen::VectorXd& f, const Eigen::VectorXd& b) const;

    [[nodiscard]] double regularization() const noexcept { return eps_; }
    [[nodiscard]] Eigen::Index variables() const noexcept { return H_.rows(); }
    [[nodiscard]] Eigen::Index constraints() const noexcept { return A_.rows(); }

private:
    [[nodiscard]] bool farkas_certificate(const Eigen::VectorXd& lambda, const Eigen::VectorXd& b) const;

    Eigen::MatrixXd H_;
    Eigen::MatrixXd A_;
    QpOptions options_;
    double eps_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::MatrixXd hinv_at_; // H^-1 A'
    Eigen::MatrixXd dual_;    // A H^-1 A'
};

[[nodiscard]] QpSolution solve_qp(const QpProblem& qp, QpOptions options = {});

} // namespace mmpc
