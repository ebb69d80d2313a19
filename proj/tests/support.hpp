#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <complex>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mmpc/linear_model.hpp"
#include "mmpc/qp_solver.hpp"
#include "mmpc/signals.hpp"

namespace mmpc::testing {

inline Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd M(r, c);
    for (Eigen::Index i = 0; i < M.size(); ++i) {
        M.data()[i] = g(rng);
    }
    return M;
}

// Random stable (A, B, C, D) with spectral radius drawn from [0.45, 0.9].
inline StateSpaceModel random_stable_system(std::mt19937_64& rng, int n, int m, int p) {
    Eigen::MatrixXd A = gaussian(rng, n, n);
    const double rho = 0.45 + 0.45 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    A *= rho / std::max(spectral_radius(A), 1e-6);
    return StateSpaceModel(A, gaussian(rng, n, m), gaussian(rng, p, n), gaussian(rng, p, m), 1.0);
}

// One independent maximal-length sequence per input (distinct register lengths).
inline Eigen::MatrixXd prbs_inputs(int m, Eigen::Index N, std::uint32_t seed = 1) {
    Eigen::MatrixXd U(N, m);
    for (int j = 0; j < m; ++j) {
        PrbsSpec s;
        s.register_length = 10 + j;
        s.total_length = static_cast<std::size_t>(N);
        s.seed = seed + 4 * static_cast<std::uint32_t>(j);
        U.col(j) = prbs_generate(s);
    }
    return U;
}

// Largest distance between the two spectra under the best pairing (brute force over permutations).
inline double eigenvalue_match_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    if (A.rows() != B.rows()) {
        return std::numeric_limits<double>::infinity();
    }
    const Eigen::VectorXcd a = Eigen::EigenSolver<Eigen::MatrixXd>(A, false).eigenvalues();
    const Eigen::VectorXcd b = Eigen::EigenSolver<Eigen::MatrixXd>(B, false).eigenvalues();
    std::vector<int> perm(static_cast<std::size_t>(a.size()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            worst = std::max(worst, std::abs(a(i) - b(perm[static_cast<std::size_t>(i)])));
        }
        best = std::min(best, worst);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// max_k |h_k - g_k| / max_k |h_k| over the first `terms` Markov parameters.
inline double impulse_relative_error(const StateSpaceModel& truth, const StateSpaceModel& est, std::size_t terms) {
    const auto h = truth.impulse_response(terms);
    const auto g = est.impulse_response(terms);
    double err = 0.0;
    double scale = 0.0;
    for (std::size_t k = 0; k < terms; ++k) {
        err = std::max(err, (h[k] - g[k]).cwiseAbs().maxCoeff());
        scale = std::max(scale, h[k].cwiseAbs().maxCoeff());
    }
    return err / scale;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EnumeratedQp {
    bool feasible = false;
    Eigen::VectorXd u;
    double objective = std::numeric_limits<double>::infinity();
};

// Solves the equality-constrained problem for every subset of rows and keeps the
// feasible KKT point (multipliers >= 0) with the smallest objective.
inline EnumeratedQp enumerate_active_sets(const QpProblem& qp) {
    const Eigen::Index d = qp.H.rows();
    const Eigen::Index r = qp.A_ineq.rows();
    EnumeratedQp best;
    for (unsigned mask = 0; mask < (1u << r); ++mask) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < r; ++i) {
            if (mask & (1u << i)) {
                rows.push_back(i);
            }
        }
        const auto s = static_cast<Eigen::Index>(rows.size());
        if (s > d) {
            continue;
        }
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + s, d + s);
        Eigen::VectorXd rhs(d + s);
        kkt.topLeftCorner(d, d) = qp.H;
        rhs.head(d) = -qp.f;
        for (Eigen::Index k = 0; k < s; ++k) {
            kkt.block(d + k, 0, 1, d) = qp.A_ineq.row(rows[static_cast<std::size_t>(k)]);
            kkt.block(0, d + k, d, 1) = qp.A_ineq.row(rows[static_cast<std::size_t>(k)]).transpose();
            rhs(d + k) = qp.b_ineq(rows[static_cast<std::size_t>(k)]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
        if (lu.rank() < d + s) {
            continue;
        }
        const Eigen::VectorXd sol = lu.solve(rhs);
        const Eigen::VectorXd u = sol.head(d);
        if (s > 0 && sol.tail(s).minCoeff() < -1e-9) {
            continue;
        }
        if (r > 0 && (qp.A_ineq * u - qp.b_ineq).maxCoeff() > 1e-9 * (1.0 + qp.b_ineq.cwiseAbs().maxCoeff())) {
            continue;
        }
        const double obj = qp.f.dot(u) + 0.5 * u.dot(qp.H * u);
        if (obj < best.objective) {
            best = EnumeratedQp{true, u, obj};
        }
    }
    return best;
}

// Strictly convex QP with d variables and r rows, feasible by construction.
inline QpProblem random_feasible_qp(std::mt19937_64& rng, int d, int r) {
    const Eigen::MatrixXd G = gaussian(rng, d, d);
    const Eigen::MatrixXd H = G * G.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd A = gaussian(rng, r, d);
    const Eigen::VectorXd interior = gaussian(rng, d, 1);
    std::uniform_real_distribution<double> slack(0.0, 1.0);
    Eigen::VectorXd b = A * interior;
    for (Eigen::Index i = 0; i < r; ++i) {
        b(i) += slack(rng);
    }
    return QpProblem(H, 3.0 * gaussian(rng, d, 1), A, b);
}

} // namespace mmpc::testing
