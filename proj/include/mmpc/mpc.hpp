#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmpc/linear_model.hpp"
#include "mmpc/qp_solver.hpp"

namespace mmpc {

struct MpcConfig {
    int prediction_horizon = 10; // P, steps
    int control_horizon = 5;     // M, steps
    Eigen::VectorXd output_weights; // p
    Eigen::VectorXd move_weights;   // m
    // Optional per-step weights: P x p and M x m. Override the constant vectors when set.
    std::optional<Eigen::MatrixXd> output_weight_profile;
    std::optional<Eigen::MatrixXd> move_weight_profile;
    // Absolute output bounds; +-infinity disables a side.
    Eigen::VectorXd y_min;
    Eigen::VectorXd y_max;
    std::optional<Eigen::VectorXd> u_min;
    std::optional<Eigen::VectorXd> u_max;
    std::optional<Eigen::VectorXd> du_max;
    double ts = 1.0;
    // Slack weight, relative to the mean diagonal of the tracking Hessian, for the
    // first stage of the fallback when the hard problem is infeasible.
    double soft_penalty = 1.0;
    QpOptions qp;

    // Throws ConfigError naming the first violated requirement.
    void validate(Eigen::Index m, Eigen::Index p) const;
};

[[nodiscard]] bool same_settings(const MpcConfig& a, const MpcConfig& b);

/**
 * Stacked prediction over steps 1..P:
 *   Yhat = Phi x + Psi u_prev + Theta dU,
 * with u(k+i) = u_prev + sum_{j<=min(i,M-1)} du_j.
 */
struct Prediction {
    Eigen::MatrixXd Phi;   // P p x n
    Eigen::MatrixXd Psi;   // P p x m
    Eigen::MatrixXd Theta; // P p x M m
};

[[nodiscard]] Prediction build_prediction(const StateSpaceModel& model, const MpcConfig& cfg);

enum class StepStatus {
    Optimal,      // hard-constrained QP solved
    SoftFallback, // output bounds relaxed by a penalized slack
    Hold,         // no usable solution; previous input held
};

[[nodiscard]] const char* to_string(StepStatus s);

struct MpcPlan {
    Eigen::VectorXd u;          // input to apply now
    Eigen::VectorXd du;         // first move
    Eigen::VectorXd dU;         // full move sequence (M m)
    Eigen::VectorXd y_pred;     // absolute predicted outputs over the horizon (P p)
    double cost = 0.0;          // objective evaluated at the optimum (tracking + move terms)
    std::vector<int> active_constraints;
    StepStatus status = StepStatus::Optimal;
    double slack = 0.0;
    int qp_iterations = 0;
    std::vector<std::string> warnings;
};

/**
 * Single-model receding-horizon controller in velocity form.
 *
 * The model works in deviation coordinates around `op`; every vector crossing
 * this interface is absolute. The measured output passed to observe() belongs
 * to the interval over which u_prev was applied, so a step is
 * observe(y) -> plan(ref) -> apply(u).
 */
class MpcController {
public:
    MpcController(StateSpaceModel model, MpcConfig cfg, OperatingPoint op);
    MpcController(StateSpaceModel model, MpcConfig cfg, OperatingPoint op, Eigen::VectorXd u_initial);

    // Kalman update with (u_prev, y).
    void observe(const Eigen::VectorXd& y);

    // ref: P p absolute reference trajectory, or a single p-vector extended constantly.
    [[nodiscard]] MpcPlan plan(const Eigen::VectorXd& ref) const;

    void apply(const Eigen::VectorXd& u);

    // observe + plan + apply(plan.u).
    MpcPlan control_step(const Eigen::VectorXd& y, const Eigen::VectorXd& ref);

    // QP for the current estimate; exposed for inspection and tests.
    [[nodiscard]] QpProblem assemble_qp(const Eigen::VectorXd& xhat, const Eigen::VectorXd& ref_dev) const;

    [[nodiscard]] const StateSpaceModel& model() const noexcept { return filter_.model(); }
    [[nodiscard]] const MpcConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const OperatingPoint& operating_point() const noexcept { return op_; }
    [[nodiscard]] const Prediction& prediction() const noexcept { return pred_; }
    [[nodiscard]] const Eigen::VectorXd& state() const noexcept { return filter_.state(); }
    void set_state(const Eigen::VectorXd& xhat) { filter_.set_state(xhat); }
    [[nodiscard]] const Eigen::VectorXd& u_prev() const noexcept { return u_prev_; }
    [[nodiscard]] const Eigen::VectorXd& last_innovation() const noexcept { return innovation_; }

private:
    enum class RowKind { Output, Input, Move };
    struct Row {
        RowKind kind;
        Eigen::Index index; // predicted-output index or move index
        double sign;        // +1 upper bound, -1 lower bound
        double limit;       // bound in deviation coordinates
    };

    [[nodiscard]] Eigen::VectorXd expand_reference(const Eigen::VectorXd& ref) const;
    [[nodiscard]] Eigen::VectorXd constraint_bounds(const Eigen::VectorXd& free_response) const;
    [[nodiscard]] double cost(const Eigen::VectorXd& dU, const Eigen::VectorXd& free_response,
                              const Eigen::VectorXd& ref_dev) const;
    [[nodiscard]] const QpSolver& soft_solver() const;

    MpcConfig cfg_;
    OperatingPoint op_;
    KalmanFilter filter_;
    Eigen::VectorXd u_prev_;
    Eigen::VectorXd innovation_;
    Prediction pred_;
    Eigen::VectorXd q_diag_; // P p
    Eigen::VectorXd r_diag_; // M m
    Eigen::MatrixXd hessian_;
    Eigen::MatrixXd cumulative_; // M m x M m, maps dU to u offsets from u_prev
    Eigen::MatrixXd A_con_;
    std::vector<Row> rows_;
    std::shared_ptr<const QpSolver> hard_;
    mutable std::shared_ptr<const QpSolver> soft_;
};

} // namespace mmpc
