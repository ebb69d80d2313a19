#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace mmpc {

/**
 * @brief Discrete-time innovation-form model.
 *
 *   x(k+1) = A x(k) + B u(k) + K e(k)
 *   y(k)   = C x(k) + D u(k) + e(k)
 *
 * Immutable after construction. Shapes are checked on construction; an
 * unstable predictor (A - KC) is reported by stability_warning() rather than
 * rejected.
 */
class StateSpaceModel {
public:
    StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D,
                    Eigen::MatrixXd K, double ts);

    // K = 0.
    StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D, double ts);

    [[nodiscard]] const Eigen::MatrixXd& A() const noexcept { return A_; }
    [[nodiscard]] const Eigen::MatrixXd& B() const noexcept { return B_; }
    [[nodiscard]] const Eigen::MatrixXd& C() const noexcept { return C_; }
    [[nodiscard]] const Eigen::MatrixXd& D() const noexcept { return D_; }
    [[nodiscard]] const Eigen::MatrixXd& K() const noexcept { return K_; }
    [[nodiscard]] double ts() const noexcept { return ts_; }

    [[nodiscard]] Eigen::Index order() const noexcept { return A_.rows(); }
    [[nodiscard]] Eigen::Index inputs() const noexcept { return B_.cols(); }
    [[nodiscard]] Eigen::Index outputs() const noexcept { return C_.rows(); }

    // Set when the spectral radius of A - KC is >= 1.
    [[nodiscard]] const std::optional<std::string>& stability_warning() const noexcept { return warning_; }

    // Markov parameters {D, CB, CAB, ...}; entry k is p x m.
    [[nodiscard]] std::vector<Eigen::MatrixXd> impulse_response(std::size_t terms) const;

private:
    Eigen::MatrixXd A_, B_, C_, D_, K_;
    double ts_;
    std::optional<std::string> warning_;
};

// Absolute values corresponding to zero deviation in a model's coordinates.
struct OperatingPoint {
    Eigen::VectorXd u;
    Eigen::VectorXd y;
};

[[nodiscard]] double spectral_radius(const Eigen::MatrixXd& M);

/**
 * Runs the innovation-form recursion over the rows of U. With E omitted the
 * innovations are zero. Returns N x p outputs.
 */
[[nodiscard]] Eigen::MatrixXd simulate(const StateSpaceModel& model, const Eigen::MatrixXd& U,
                                       const Eigen::VectorXd& x0,
                                       const std::optional<Eigen::MatrixXd>& E = std::nullopt);

struct PredictorForm {
    Eigen::MatrixXd A_K; // A - KC
    Eigen::MatrixXd B_K; // [B - KD, K]
};

[[nodiscard]] PredictorForm predictor_form(const StateSpaceModel& model);

struct DareSolution {
    Eigen::MatrixXd P;           // steady-state prediction error covariance
    Eigen::MatrixXd K;           // predictor gain (A P C' + S)(C P C' + R)^-1
    Eigen::MatrixXd filter_gain; // measurement-update gain P C' (C P C' + R)^-1
    int iterations = 0;
    double residual = 0.0;
};

/**
 * Steady-state Kalman predictor via fixed-point iteration of
 *   P = A P A' + Q - (A P C' + S)(C P C' + R)^-1 (A P C' + S)'.
 * Q and R are the state- and output-noise covariances, S their cross-covariance.
 */
[[nodiscard]] DareSolution solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C, const Eigen::MatrixXd& Q,
                                      const Eigen::MatrixXd& R,
                                      const std::optional<Eigen::MatrixXd>& S = std::nullopt,
                                      int max_iterations = 10000, double tolerance = 1e-12);

struct KalmanStep {
    Eigen::VectorXd xhat_next;
    Eigen::VectorXd innovation;
    Eigen::VectorXd yhat;
};

// Steady-state Kalman predictor driven by a model's own K. Single owner.
class KalmanFilter {
public:
    explicit KalmanFilter(StateSpaceModel model);
    KalmanFilter(StateSpaceModel model, Eigen::VectorXd xhat);

    KalmanStep step(const Eigen::VectorXd& u, const Eigen::VectorXd& y);

    [[nodiscard]] const Eigen::VectorXd& state() const noexcept { return xhat_; }
    void set_state(const Eigen::VectorXd& xhat);
    [[nodiscard]] const StateSpaceModel& model() const noexcept { return model_; }

private:
    StateSpaceModel model_;
    Eigen::VectorXd xhat_;
};

// Pure function form of KalmanFilter::step.
[[nodiscard]] KalmanStep kalman_step(const StateSpaceModel& model, const Eigen::VectorXd& xhat,
                                     const Eigen::VectorXd& u, const Eigen::VectorXd& y);

// Per-channel 100 * (1 - |y - yhat| / |y - mean(y)|); may be negative.
[[nodiscard]] Eigen::VectorXd fit_percent(const Eigen::MatrixXd& y_meas, const Eigen::MatrixXd& y_pred);

// Least-squares initial state for a deterministic simulation of U against Y.
[[nodiscard]] Eigen::VectorXd estimate_initial_state(const StateSpaceModel& model, const Eigen::MatrixXd& U,
                                                     const Eigen::MatrixXd& Y);

// JSON model file: ts, dims and row-major A, B, C, D, K, plus an optional operating point.
void save_model(const StateSpaceModel& model, const std::filesystem::path& path,
                const std::optional<OperatingPoint>& op = std::nullopt);

struct LoadedModel {
    StateSpaceModel model;
    std::optional<OperatingPoint> operating_point;
};

[[nodiscard]] LoadedModel load_model(const std::filesystem::path& path);

} // namespace mmpc
