#include "mmpc/mpc.hpp"

#include <cmath>
#include <limits>

#include "mmpc/error.hpp"

namespace mmpc {

namespace {

void check_length(const char* what, const Eigen::VectorXd& v, Eigen::Index n) {
    if (v.size() != n) {
        throw ConfigError(std::string("MPC config: ") + what + " has length " + std::to_string(v.size()) +
                          ", expected " + std::to_string(n));
    }
}

bool same_optional(const std::optional<Eigen::VectorXd>& a, const std::optional<Eigen::VectorXd>& b) {
    if (a.has_value() != b.has_value()) {
        return false;
    }
    return !a || (a->size() == b->size() && *a == *b);
}

bool same_optional(const std::optional<Eigen::MatrixXd>& a, const std::optional<Eigen::MatrixXd>& b) {
    if (a.has_value() != b.has_value()) {
        return false;
    }
    return !a || (a->rows() == b->rows() && a->cols() == b->cols() && *a == *b);
}

bool same_vector(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (!(a(i) == b(i))) {
            return false;
        }
    }
    return true;
}

} // namespace

void MpcConfig::validate(Eigen::Index m, Eigen::Index p) const {
    if (control_horizon < 1 || control_horizon > prediction_horizon) {
        throw ConfigError("MPC config: need 1 <= M <= P (M=" + std::to_string(control_horizon) +
                          ", P=" + std::to_string(prediction_horizon) + ")");
    }
    check_length("output_weights", output_weights, p);
    check_length("move_weights", move_weights, m);
    check_length("y_min", y_min, p);
    check_length("y_max", y_max, p);
    if ((output_weights.array() < 0.0).any() || (move_weights.array() < 0.0).any()) {
        throw ConfigError("MPC config: weights must be nonnegative");
    }
    if (output_weight_profile) {
        if (output_weight_profile->rows() != prediction_horizon || output_weight_profile->cols() != p ||
            (output_weight_profile->array() < 0.0).any()) {
            throw ConfigError("MPC config: output weight profile must be a nonnegative P x p matrix");
        }
    }
    if (move_weight_profile) {
        if (move_weight_profile->rows() != control_horizon || move_weight_profile->cols() != m ||
            (move_weight_profile->array() < 0.0).any()) {
            throw ConfigError("MPC config: move weight profile must be a nonnegative M x m matrix");
        }
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        if (!(y_min(i) < y_max(i))) {
            throw ConfigError("MPC config: y_min must be below y_max on output " + std::to_string(i + 1));
        }
    }
    if (u_min) {
        check_length("u_min", *u_min, m);
    }
    if (u_max) {
        check_length("u_max", *u_max, m);
    }
    if (u_min && u_max && ((u_min->array() >= u_max->array()).any())) {
        throw ConfigError("MPC config: u_min must be below u_max");
    }
    if (du_max) {
        check_length("du_max", *du_max, m);
        if ((du_max->array() <= 0.0).any()) {
            throw ConfigError("MPC config: du_max must be positive");
        }
    }
    if (!(ts > 0.0)) {
        throw ConfigError("MPC config: ts must be positive");
    }
    if (!(soft_penalty > 0.0)) {
        throw ConfigError("MPC config: soft_penalty must be positive");
    }
}

bool same_settings(const MpcConfig& a, const MpcConfig& b) {
    return a.prediction_horizon == b.prediction_horizon && a.control_horizon == b.control_horizon &&
           same_vector(a.output_weights, b.output_weights) && same_vector(a.move_weights, b.move_weights) &&
           same_optional(a.output_weight_profile, b.output_weight_profile) &&
           same_optional(a.move_weight_profile, b.move_weight_profile) && same_vector(a.y_min, b.y_min) &&
           same_vector(a.y_max, b.y_max) && same_optional(a.u_min, b.u_min) && same_optional(a.u_max, b.u_max) &&
           same_optional(a.du_max, b.du_max) && a.ts == b.ts && a.soft_penalty == b.soft_penalty &&
           a.qp.tol == b.qp.tol && a.qp.max_iter == b.qp.max_iter;
}

Prediction build_prediction(const StateSpaceModel& model, const MpcConfig& cfg) {
    const Eigen::Index n = model.order();
    const Eigen::Index m = model.inputs();
    const Eigen::Index p = model.outputs();
    const int P = cfg.prediction_horizon;
    const int M = cfg.control_horizon;
    if (M < 1 || M > P) {
        throw DimensionError("build_prediction: need 1 <= M <= P");
    }

    // G[s] = C sum_{q<s} A^q B, the s-step response to a unit input step (G[0] = 0).
    std::vector<Eigen::MatrixXd> G(static_cast<std::size_t>(P) + 1, Eigen::MatrixXd::Zero(p, m));
    Prediction pred;
    pred.Phi.resize(P * p, n);
    Eigen::MatrixXd Ak = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd sum_AqB = Eigen::MatrixXd::Zero(n, m);
    for (int s = 1; s <= P; ++s) {
        sum_AqB += Ak * model.B();
        Ak = Ak * model.A();
        G[static_cast<std::size_t>(s)] = model.C() * sum_AqB;
        pred.Phi.middleRows((s - 1) * p, p) = model.C() * Ak;
    }

    pred.Psi.resize(P * p, m);
    pred.Theta = Eigen::MatrixXd::Zero(P * p, M * m);
    for (int i = 1; i <= P; ++i) {
        pred.Psi.middleRows((i - 1) * p, p) = G[static_cast<std::size_t>(i)] + model.D();
        for (int l = 0; l < M && l <= i; ++l) {
            pred.Theta.block((i - 1) * p, l * m, p, m) = G[static_cast<std::size_t>(i - l)] + model.D();
        }
    }
    return pred;
}

const char* to_string(StepStatus s) {
    switch (s) {
        case StepStatus::Optimal: return "optimal";
        case StepStatus::SoftFallback: return "soft-fallback";
        case StepStatus::Hold: return "hold";
    }
    return "unknown";
}

MpcController::MpcController(StateSpaceModel model, MpcConfig cfg, OperatingPoint op)
    : MpcController(model, std::move(cfg), op, op.u) {}

MpcController::MpcController(StateSpaceModel model, MpcConfig cfg, OperatingPoint op, Eigen::VectorXd u_initial)
    : cfg_(std::move(cfg)), op_(std::move(op)), filter_(std::move(model)), u_prev_(std::move(u_initial)) {
    const auto& mdl = filter_.model();
    const Eigen::Index m = mdl.inputs();
    const Eigen::Index p = mdl.outputs();
    cfg_.validate(m, p);
    if (op_.u.size() != m || op_.y.size() != p) {
        throw DimensionError("MPC operating point does not match the model dimensions");
    }
    if (u_prev_.size() != m) {
        throw DimensionError("initial input has length " + std::to_string(u_prev_.size()) + ", expected " +
                             std::to_string(m));
    }
    innovation_ = Eigen::VectorXd::Zero(p);
    const int P = cfg_.prediction_horizon;
    const int M = cfg_.control_horizon;
    pred_ = build_prediction(mdl, cfg_);

    q_diag_.resize(P * p);
    for (int i = 0; i < P; ++i) {
        q_diag_.segment(i * p, p) =
            cfg_.output_weight_profile ? Eigen::VectorXd(cfg_.output_weight_profile->row(i).transpose())
                                       : cfg_.output_weights;
    }
    r_diag_.resize(M * m);
    for (int j = 0; j < M; ++j) {
        r_diag_.segment(j * m, m) =
            cfg_.move_weight_profile ? Eigen::VectorXd(cfg_.move_weight_profile->row(j).transpose())
                                     : cfg_.move_weights;
    }
    hessian_ = 2.0 * (pred_.Theta.transpose() * q_diag_.asDiagonal() * pred_.Theta);
    hessian_.diagonal() += 2.0 * r_diag_;

    cumulative_ = Eigen::MatrixXd::Zero(M * m, M * m);
    for (int j = 0; j < M; ++j) {
        for (int l = 0; l <= j; ++l) {
            cumulative_.block(j * m, l * m, m, m).setIdentity();
        }
    }

    std::vector<Eigen::RowVectorXd> a_rows;
    for (int i = 0; i < P; ++i) {
        for (Eigen::Index c = 0; c < p; ++c) {
            const Eigen::Index idx = i * p + c;
            if (std::isfinite(cfg_.y_max(c))) {
                rows_.push_back({RowKind::Output, idx, 1.0, cfg_.y_max(c) - op_.y(c)});
                a_rows.push_back(pred_.Theta.row(idx));
            }
            if (std::isfinite(cfg_.y_min(c))) {
                rows_.push_back({RowKind::Output, idx, -1.0, cfg_.y_min(c) - op_.y(c)});
                a_rows.push_back(-pred_.Theta.row(idx));
            }
        }
    }
    for (int j = 0; j < M; ++j) {
        for (Eigen::Index c = 0; c < m; ++c) {
            const Eigen::Index idx = j * m + c;
            if (cfg_.u_max && std::isfinite((*cfg_.u_max)(c))) {
                rows_.push_back({RowKind::Input, idx, 1.0, (*cfg_.u_max)(c) - op_.u(c)});
                a_rows.push_back(cumulative_.row(idx));
            }
            if (cfg_.u_min && std::isfinite((*cfg_.u_min)(c))) {
                rows_.push_back({RowKind::Input, idx, -1.0, (*cfg_.u_min)(c) - op_.u(c)});
                a_rows.push_back(-cumulative_.row(idx));
            }
            if (cfg_.du_max && std::isfinite((*cfg_.du_max)(c))) {
                Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(M * m);
                e(idx) = 1.0;
                rows_.push_back({RowKind::Move, idx, 1.0, (*cfg_.du_max)(c)});
                a_rows.push_back(e);
                rows_.push_back({RowKind::Move, idx, -1.0, (*cfg_.du_max)(c)});
                a_rows.push_back(-e);
            }
        }
    }
    A_con_.resize(static_cast<Eigen::Index>(a_rows.size()), M * m);
    for (std::size_t r = 0; r < a_rows.size(); ++r) {
        A_con_.row(static_cast<Eigen::Index>(r)) = a_rows[r];
    }
    hard_ = std::make_shared<const QpSolver>(hessian_, A_con_, cfg_.qp);
}

Eigen::VectorXd MpcController::expand_reference(const Eigen::VectorXd& ref) const {
    const Eigen::Index p = model().outputs();
    const int P = cfg_.prediction_horizon;
    Eigen::VectorXd out(P * p);
    if (ref.size() == p) {
        for (int i = 0; i < P; ++i) {
            out.segment(i * p, p) = ref - op_.y;
        }
    } else if (ref.size() == P * p) {
        for (int i = 0; i < P; ++i) {
            out.segment(i * p, p) = ref.segment(i * p, p) - op_.y;
        }
    } else {
        throw DimensionError("reference has length " + std::to_string(ref.size()) + ", expected " +
                             std::to_string(p) + " or " + std::to_string(P * p));
    }
    return out;
}

Eigen::VectorXd MpcController::constraint_bounds(const Eigen::VectorXd& free_response) const {
    const Eigen::VectorXd u_dev = u_prev_ - op_.u;
    const Eigen::Index m = model().inputs();
    Eigen::VectorXd b(static_cast<Eigen::Index>(rows_.size()));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        const Row& row = rows_[r];
        double value = 0.0;
        switch (row.kind) {
            case RowKind::Output: value = row.sign * (row.limit - free_response(row.index)); break;
            case RowKind::Input: value = row.sign * (row.limit - u_dev(row.index % m)); break;
            case RowKind::Move: value = row.limit; break;
        }
        b(static_cast<Eigen::Index>(r)) = value;
    }
    return b;
}

QpProblem MpcController::assemble_qp(const Eigen::VectorXd& xhat, const Eigen::VectorXd& ref_dev) const {
    if (xhat.size() != model().order()) {
        throw DimensionError("state estimate has length " + std::to_string(xhat.size()) + ", expected " +
                             std::to_string(model().order()));
    }
    if (ref_dev.size() != pred_.Phi.rows()) {
        throw DimensionError("reference has length " + std::to_string(ref_dev.size()) + ", expected " +
                             std::to_string(pred_.Phi.rows()));
    }
    const Eigen::VectorXd free_response = pred_.Phi * xhat + pred_.Psi * (u_prev_ - op_.u);
    Eigen::VectorXd f = 2.0 * pred_.Theta.transpose() * (q_diag_.asDiagonal() * (free_response - ref_dev));
    return QpProblem(hessian_, std::move(f), A_con_, constraint_bounds(free_response));
}

double MpcController::cost(const Eigen::VectorXd& dU, const Eigen::VectorXd& free_response,
                           const Eigen::VectorXd& ref_dev) const {
    const Eigen::VectorXd err = free_response + pred_.Theta * dU - ref_dev;
    return err.dot(q_diag_.asDiagonal() * err) + dU.dot(r_diag_.asDiagonal() * dU);
}

const QpSolver& MpcController::soft_solver() const {
    if (!soft_) {
        const Eigen::Index d = hessian_.rows();
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d + 1, d + 1);
        H.topLeftCorner(d, d) = hessian_;
        const double scale = d > 0 ? hessian_.trace() / static_cast<double>(d) : 1.0;
        H(d, d) = 2.0 * cfg_.soft_penalty * (scale > 0.0 ? scale : 1.0);
        const Eigen::Index r = A_con_.rows();
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(r + 1, d + 1);
        A.topLeftCorner(r, d) = A_con_;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            if (rows_[i].kind == RowKind::Output) {
                A(static_cast<Eigen::Index>(i), d) = -1.0;
            }
        }
        A(r, d) = -1.0;
        soft_ = std::make_shared<const QpSolver>(H, A, cfg_.qp);
    }
    return *soft_;
}

void MpcController::observe(const Eigen::VectorXd& y) {
    if (y.size() != model().outputs()) {
        throw DimensionError("measurement has length " + std::to_string(y.size()) + ", expected " +
                             std::to_string(model().outputs()));
    }
    const KalmanStep s = filter_.step(u_prev_ - op_.u, y - op_.y);
    innovation_ = s.innovation;
}

MpcPlan MpcController::plan(const Eigen::VectorXd& ref) const {
    const Eigen::Index m = model().inputs();
    const Eigen::Index d = hessian_.rows();
    const Eigen::VectorXd ref_dev = expand_reference(ref);
    const Eigen::VectorXd free_response = pred_.Phi * filter_.state() + pred_.Psi * (u_prev_ - op_.u);
    const Eigen::VectorXd f = 2.0 * pred_.Theta.transpose() * (q_diag_.asDiagonal() * (free_response - ref_dev));
    const Eigen::VectorXd b = constraint_bounds(free_response);

    MpcPlan plan;
    bool solved = false;
    try {
        QpSolution sol = hard_->solve(f, b);
        plan.dU = sol.u;
        plan.active_constraints = sol.active_set;
        plan.qp_iterations = sol.iterations;
        plan.status = StepStatus::Optimal;
        solved = true;
    } catch (const QpIterationLimitError& e) {
        plan.warnings.push_back(e.what());
    } catch (const QpInfeasibleError& e) {
        plan.warnings.push_back(e.what());
    }

    if (!solved) {
        // Stage 1: smallest uniform relaxation of the output bounds, with the slack weighted
        // against the tracking Hessian. Stage 2: best tracking inside the relaxed bounds.
        try {
            Eigen::VectorXd f_soft = Eigen::VectorXd::Zero(d + 1);
            f_soft.head(d) = f;
            Eigen::VectorXd b_soft(b.size() + 1);
            b_soft << b, 0.0;
            QpSolution sol = soft_solver().solve(f_soft, b_soft);
            plan.dU = sol.u.head(d);
            plan.slack = std::max(sol.u(d), 0.0);
            plan.active_constraints = sol.active_set;
            plan.qp_iterations = sol.iterations;
            solved = true;

            Eigen::VectorXd b_relaxed = b;
            const double relax = plan.slack + 1e-9 * (1.0 + plan.slack);
            for (std::size_t r = 0; r < rows_.size(); ++r) {
                if (rows_[r].kind == RowKind::Output) {
                    b_relaxed(static_cast<Eigen::Index>(r)) += relax;
                }
            }
            try {
                QpSolution refined = hard_->solve(f, b_relaxed);
                plan.dU = refined.u;
                plan.active_constraints = refined.active_set;
                plan.qp_iterations += refined.iterations;
            } catch (const NumericalError& e) {
                plan.warnings.push_back(std::string("relaxed re-solve failed, keeping the slack solution: ") +
                                        e.what());
            }
            plan.status = StepStatus::SoftFallback;
            plan.warnings.push_back("output constraints softened (slack " + std::to_string(plan.slack) + ")");
        } catch (const NumericalError& e) {
            plan.warnings.push_back(std::string("soft fallback failed: ") + e.what());
        }
    }

    if (!solved) {
        plan.dU = Eigen::VectorXd::Zero(d);
        plan.status = StepStatus::Hold;
        plan.warnings.push_back("holding previous input");
    }

    plan.du = plan.dU.head(m);
    plan.u = u_prev_ + plan.du;
    plan.cost = cost(plan.dU, free_response, ref_dev);
    Eigen::VectorXd y_pred = free_response + pred_.Theta * plan.dU;
    for (int i = 0; i < cfg_.prediction_horizon; ++i) {
        y_pred.segment(i * op_.y.size(), op_.y.size()) += op_.y;
    }
    plan.y_pred = std::move(y_pred);
    return plan;
}

void MpcController::apply(const Eigen::VectorXd& u) {
    if (u.size() != model().inputs()) {
        throw DimensionError("applied input has length " + std::to_string(u.size()) + ", expected " +
                             std::to_string(model().inputs()));
    }
    u_prev_ = u;
}

MpcPlan MpcController::control_step(const Eigen::VectorXd& y, const Eigen::VectorXd& ref) {
    observe(y);
    MpcPlan p = plan(ref);
    apply(p.u);
    return p;
}

} // namespace mmpc
