#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmpc/linear_model.hpp"
#include "mmpc/signals.hpp"

namespace mmpc {

struct N4sidConfig {
    int future_horizon = 10; // f: block rows of U_f, Y_f
    int past_horizon = 10;   // p: block rows of Z_p
    // Either a fixed order, or AIC over [order_min, order_max].
    std::optional<int> order;
    int order_min = 1;
    int order_max = 8;
    bool estimate_feedthrough = true;
    // Used only when no operating point is passed to estimate_n4sid.
    bool remove_mean = false;
};

struct AicEntry {
    int order = 0;
    double score = 0.0;
    double log_det = 0.0;
    int parameters = 0;
    bool skipped = false;
    std::string note;
};

struct IdentificationReport {
    StateSpaceModel model;
    OperatingPoint operating_point{};
    Eigen::VectorXd singular_values{};
    int numerical_rank = 0;
    int chosen_order = 0;
    std::vector<AicEntry> aic{};
    Eigen::VectorXd fit_train{};
    std::optional<Eigen::VectorXd> fit_valid{};
    Eigen::Index train_samples = 0;
    Eigen::Index valid_samples = 0;
    // |Gamma_top A - Gamma_bottom| / |Gamma| with the identified A.
    double shift_invariance_residual = 0.0;
    // Normalized cross-correlation of training innovations with future inputs (open-loop check).
    double open_loop_correlation = 0.0;
    int future_horizon = 0;
    int past_horizon = 0;
    std::vector<std::string> diagnostics{};
};

/**
 * Block-Hankel layout: block (i, j) is data row start_row + i + j, as a column
 * of data.cols() entries. Result is (block_rows * c) x cols.
 */
[[nodiscard]] Eigen::MatrixXd block_hankel(const Eigen::MatrixXd& data, Eigen::Index start_row,
                                           Eigen::Index block_rows, Eigen::Index cols);

/**
 * Z_p coefficient block of the joint least-squares regression of Y_f on
 * [Z_p; U_f]. Equals Y_f P Z_p' (Z_p P Z_p')^-1 with P the projector onto the
 * orthogonal complement of the rows of U_f. Throws NumericalError when U_f
 * has a condition number above 1e12.
 */
[[nodiscard]] Eigen::MatrixXd project_hfp(const Eigen::MatrixXd& Y_f, const Eigen::MatrixXd& Z_p,
                                          const Eigen::MatrixXd& U_f);

/**
 * Argmin of N log det(Sigma_n) + 2 k(n). Entries whose covariance is not
 * positive definite are skipped; ties go to the smaller order. Fills
 * `table` when given.
 */
[[nodiscard]] int aic_order_select(const std::vector<int>& orders, const std::vector<Eigen::MatrixXd>& covariances,
                                   const std::vector<int>& n_params, Eigen::Index N,
                                   std::vector<AicEntry>* table = nullptr);

// Free-parameter count used by the AIC: n(m+p) + n p + p m.
[[nodiscard]] int n4sid_parameter_count(int n, int m, int p);

/**
 * N4SID estimate from training data. When `op` is given it is subtracted from
 * the data first and stored in the report; otherwise `remove_mean` decides.
 * With `valid`, the report also carries validation fits.
 */
[[nodiscard]] IdentificationReport estimate_n4sid(const Dataset& train, const N4sidConfig& cfg,
                                                  const std::optional<OperatingPoint>& op = std::nullopt,
                                                  const Dataset* valid = nullptr);

// Simulation fit on a dataset, with the initial state fitted by least squares.
[[nodiscard]] Eigen::VectorXd simulation_fit(const StateSpaceModel& model, const OperatingPoint& op,
                                             const Dataset& d);

// One-step-ahead predictor residuals (N x p) in deviation coordinates, from x0 = 0.
[[nodiscard]] Eigen::MatrixXd prediction_residuals(const StateSpaceModel& model, const Eigen::MatrixXd& U,
                                                   const Eigen::MatrixXd& Y);

void write_report(const IdentificationReport& report, const std::filesystem::path& path);

} // namespace mmpc
