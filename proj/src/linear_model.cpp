#include "mmpc/linear_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "mmpc/error.hpp"

namespace mmpc {

namespace {

std::string shape(const Eigen::MatrixXd& M) {
    return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

void expect_shape(const char* what, const Eigen::MatrixXd& M, Eigen::Index rows, Eigen::Index cols) {
    if (M.rows() != rows || M.cols() != cols) {
        throw DimensionError(std::string(what) + " is " + shape(M) + ", expected " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
}

void expect_size(const char* what, const Eigen::VectorXd& v, Eigen::Index size) {
    if (v.size() != size) {
        throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                             std::to_string(size));
    }
}

double sym_norm(const Eigen::MatrixXd& M) {
    if (M.size() == 0) {
        return 0.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

nlohmann::json to_json(const Eigen::MatrixXd& M) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c) {
            row.push_back(M(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* name, Eigen::Index rows, Eigen::Index cols) {
    if (!j.contains(name)) {
        throw ParseError(std::string("model file lacks matrix ") + name);
    }
    const auto& m = j.at(name);
    Eigen::MatrixXd M(rows, cols);
    if (!m.is_array() || static_cast<Eigen::Index>(m.size()) != rows) {
        throw ParseError(std::string("matrix ") + name + " has the wrong number of rows");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = m.at(static_cast<std::size_t>(r));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ParseError(std::string("matrix ") + name + " row " + std::to_string(r + 1) +
                             " has the wrong number of columns");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            M(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    return M;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace

StateSpaceModel::StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D,
                                 Eigen::MatrixXd K, double ts)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), D_(std::move(D)), K_(std::move(K)), ts_(ts) {
    const auto n = A_.rows();
    const auto m = B_.cols();
    const auto p = C_.rows();
    expect_shape("A", A_, n, n);
    expect_shape("B", B_, n, m);
    expect_shape("C", C_, p, n);
    expect_shape("D", D_, p, m);
    expect_shape("K", K_, n, p);
    if (!(ts_ > 0.0)) {
        throw ConfigError("model sampling interval must be positive");
    }
    if (!A_.allFinite() || !B_.allFinite() || !C_.allFinite() || !D_.allFinite() || !K_.allFinite()) {
        throw NumericalError("model matrices contain non-finite entries");
    }
    if (n > 0) {
        const double rho = spectral_radius(A_ - K_ * C_);
        if (rho >= 1.0) {
            std::ostringstream msg;
            msg << "predictor A - KC is not stable (spectral radius " << rho << ")";
            warning_ = msg.str();
        }
    }
}

StateSpaceModel::StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D,
                                 double ts)
    : StateSpaceModel(A, B, C, D, Eigen::MatrixXd::Zero(A.rows(), C.rows()), ts) {}

std::vector<Eigen::MatrixXd> StateSpaceModel::impulse_response(std::size_t terms) const {
    std::vector<Eigen::MatrixXd> h;
    if (terms == 0) {
        return h;
    }
    h.push_back(D_);
    Eigen::MatrixXd AkB = B_;
    for (std::size_t k = 1; k < terms; ++k) {
        h.push_back(C_ * AkB);
        AkB = A_ * AkB;
    }
    return h;
}

double spectral_radius(const Eigen::MatrixXd& M) {
    if (M.size() == 0) {
        return 0.0;
    }
    Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd simulate(const StateSpaceModel& model, const Eigen::MatrixXd& U, const Eigen::VectorXd& x0,
                         const std::optional<Eigen::MatrixXd>& E) {
    const auto N = U.rows();
    if (U.cols() != model.inputs()) {
        throw DimensionError("U has " + std::to_string(U.cols()) + " columns, model has " +
                             std::to_string(model.inputs()) + " inputs");
    }
    expect_size("x0", x0, model.order());
    if (E && (E->rows() != N || E->cols() != model.outputs())) {
        throw DimensionError("E is " + shape(*E) + ", expected " + std::to_string(N) + "x" +
                             std::to_string(model.outputs()));
    }
    Eigen::MatrixXd Y(N, model.outputs());
    Eigen::VectorXd x = x0;
    for (Eigen::Index k = 0; k < N; ++k) {
        const Eigen::VectorXd u = U.row(k).transpose();
        Eigen::VectorXd y = model.C() * x + model.D() * u;
        Eigen::VectorXd xn = model.A() * x + model.B() * u;
        if (E) {
            const Eigen::VectorXd e = E->row(k).transpose();
            y += e;
            xn += model.K() * e;
        }
        Y.row(k) = y.transpose();
        x = std::move(xn);
    }
    return Y;
}

PredictorForm predictor_form(const StateSpaceModel& model) {
    const auto n = model.order();
    const auto m = model.inputs();
    const auto p = model.outputs();
    PredictorForm pf;
    pf.A_K = model.A() - model.K() * model.C();
    pf.B_K.resize(n, m + p);
    pf.B_K.leftCols(m) = model.B() - model.K() * model.D();
    pf.B_K.rightCols(p) = model.K();
    return pf;
}

DareSolution solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C, const Eigen::MatrixXd& Q,
                        const Eigen::MatrixXd& R, const std::optional<Eigen::MatrixXd>& S, int max_iterations,
                        double tolerance) {
    const auto n = A.rows();
    const auto p = C.rows();
    expect_shape("A", A, n, n);
    expect_shape("C", C, p, n);
    expect_shape("Q", Q, n, n);
    expect_shape("R", R, p, p);
    const Eigen::MatrixXd cross = S ? *S : Eigen::MatrixXd::Zero(n, p);
    expect_shape("S", cross, n, p);

    const double r_scale = std::max(1.0, R.cwiseAbs().maxCoeff());
    if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * r_scale) {
        throw ConfigError("R must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> r_llt(R);
    if (r_llt.info() != Eigen::Success) {
        throw ConfigError("R must be positive definite");
    }
    const double q_scale = std::max(1.0, Q.size() ? Q.cwiseAbs().maxCoeff() : 0.0);
    if (Q.size() && (Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * q_scale) {
        throw ConfigError("Q must be symmetric");
    }
    if (Q.size()) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-10 * q_scale) {
            throw ConfigError("Q must be positive semidefinite");
        }
    }

    auto gain = [&](const Eigen::MatrixXd& P) {
        const Eigen::MatrixXd innovation_cov = C * P * C.transpose() + R;
        const Eigen::MatrixXd G = A * P * C.transpose() + cross;
        return Eigen::MatrixXd(innovation_cov.llt().solve(G.transpose()).transpose());
    };

    auto iterate = [&](Eigen::MatrixXd P) {
        DareSolution sol;
        sol.residual = std::numeric_limits<double>::infinity();
        for (int it = 1; it <= max_iterations; ++it) {
            const Eigen::MatrixXd K = gain(P);
            const Eigen::MatrixXd G = A * P * C.transpose() + cross;
            Eigen::MatrixXd next = A * P * A.transpose() + Q - K * G.transpose();
            next = 0.5 * (next + next.transpose());
            sol.residual = sym_norm(next - P) / std::max(1.0, sym_norm(next));
            P = std::move(next);
            sol.iterations = it;
            if (!P.allFinite()) {
                break;
            }
            if (sol.residual < tolerance) {
                break;
            }
        }
        sol.P = std::move(P);
        return sol;
    };

    DareSolution sol = iterate(Q);
    bool stabilizing = sol.P.allFinite() && sol.residual < tolerance && spectral_radius(A - gain(sol.P) * C) < 1.0;
    if (!stabilizing) {
        // A zero-noise start can lock onto a non-stabilizing fixed point; retry from a positive definite one.
        const double scale = std::max(1.0, sym_norm(Q));
        DareSolution retry = iterate(scale * Eigen::MatrixXd::Identity(n, n));
        retry.iterations += sol.iterations;
        sol = std::move(retry);
    }
    if (!sol.P.allFinite() || !(sol.residual < tolerance)) {
        std::ostringstream msg;
        msg << "Riccati iteration did not converge after " << sol.iterations << " iterations (residual "
            << sol.residual << ")";
        throw NumericalError(msg.str());
    }
    sol.K = gain(sol.P);
    const Eigen::MatrixXd innovation_cov = C * sol.P * C.transpose() + R;
    sol.filter_gain = innovation_cov.llt().solve(C * sol.P).transpose();
    return sol;
}

KalmanStep kalman_step(const StateSpaceModel& model, const Eigen::VectorXd& xhat, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& y) {
    expect_size("xhat", xhat, model.order());
    expect_size("u", u, model.inputs());
    expect_size("y", y, model.outputs());
    KalmanStep s;
    s.yhat = model.C() * xhat + model.D() * u;
    s.innovation = y - s.yhat;
    s.xhat_next = model.A() * xhat + model.B() * u + model.K() * s.innovation;
    return s;
}

KalmanFilter::KalmanFilter(StateSpaceModel model)
    : model_(std::move(model)), xhat_(Eigen::VectorXd::Zero(model_.order())) {}

KalmanFilter::KalmanFilter(StateSpaceModel model, Eigen::VectorXd xhat)
    : model_(std::move(model)), xhat_(std::move(xhat)) {
    expect_size("xhat", xhat_, model_.order());
}

KalmanStep KalmanFilter::step(const Eigen::VectorXd& u, const Eigen::VectorXd& y) {
    KalmanStep s = kalman_step(model_, xhat_, u, y);
    xhat_ = s.xhat_next;
    return s;
}

void KalmanFilter::set_state(const Eigen::VectorXd& xhat) {
    expect_size("xhat", xhat, model_.order());
    xhat_ = xhat;
}

Eigen::VectorXd fit_percent(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred) {
    if (y_meas.rows() != y_pred.rows() || y_meas.cols() != y_pred.cols()) {
        throw DimensionError("y_pred is " + shape(y_pred) + ", y_meas is " + shape(y_meas));
    }
    if (y_meas.rows() < 2) {
        throw DimensionError("fit needs at least two samples");
    }
    Eigen::VectorXd fit(y_meas.cols());
    for (Eigen::Index c = 0; c < y_meas.cols(); ++c) {
        const auto col = y_meas.col(c);
        const double denom = (col.array() - col.mean()).matrix().norm();
        if (denom == 0.0) {
            throw NumericalError("fit undefined: measured channel " + std::to_string(c + 1) + " is constant");
        }
        fit(c) = 100.0 * (1.0 - (col - y_pred.col(c)).norm() / denom);
    }
    return fit;
}

Eigen::VectorXd estimate_initial_state(const StateSpaceModel& model, const Eigen::MatrixXd& U,
                                       const Eigen::MatrixXd& Y) {
    const auto N = U.rows();
    const auto n = model.order();
    const auto p = model.outputs();
    expect_shape("Y", Y, N, p);
    const Eigen::MatrixXd Y0 = simulate(model, U, Eigen::VectorXd::Zero(n));
    Eigen::MatrixXd O(N * p, n);
    Eigen::VectorXd rhs(N * p);
    Eigen::MatrixXd CAk = model.C();
    for (Eigen::Index k = 0; k < N; ++k) {
        O.middleRows(k * p, p) = CAk;
        rhs.segment(k * p, p) = (Y.row(k) - Y0.row(k)).transpose();
        CAk = CAk * model.A();
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(O, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-10);
    return svd.solve(rhs);
}

void save_model(const StateSpaceModel& model, const std::filesystem::path& path,
                const std::optional<OperatingPoint>& op) {
    nlohmann::json j;
    j["format"] = "mmpc-state-space";
    j["ts"] = model.ts();
    j["n"] = model.order();
    j["m"] = model.inputs();
    j["p"] = model.outputs();
    j["A"] = to_json(model.A());
    j["B"] = to_json(model.B());
    j["C"] = to_json(model.C());
    j["D"] = to_json(model.D());
    j["K"] = to_json(model.K());
    if (op) {
        j["u_offset"] = vector_json(op->u);
        j["y_offset"] = vector_json(op->y);
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        const auto n = j.at("n").get<Eigen::Index>();
        const auto m = j.at("m").get<Eigen::Index>();
        const auto p = j.at("p").get<Eigen::Index>();
        StateSpaceModel model(matrix_from_json(j, "A", n, n), matrix_from_json(j, "B", n, m),
                              matrix_from_json(j, "C", p, n), matrix_from_json(j, "D", p, m),
                              matrix_from_json(j, "K", n, p), j.at("ts").get<double>());
        std::optional<OperatingPoint> op;
        if (j.contains("u_offset") && j.contains("y_offset")) {
            op = OperatingPoint{vector_from_json(j.at("u_offset")), vector_from_json(j.at("y_offset"))};
            if (op->u.size() != m || op->y.size() != p) {
                throw ParseError("operating point dimensions do not match the model");
            }
        }
        return LoadedModel{std::move(model), std::move(op)};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace mmpc
