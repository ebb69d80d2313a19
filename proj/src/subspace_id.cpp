#include "mmpc/subspace_id.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

#include "mmpc/error.hpp"

namespace mmpc {

namespace {

// Relative pivot threshold separating signal from round-off in the least-squares steps.
constexpr double kLstsqThreshold = 1e-10;
// Singular values of H_fp Z_p below this fraction of the largest are treated as zero.
constexpr double kRankTolerance = 1e-8;
constexpr double kMaxInputCondition = 1e12;

// Solves coef * regressor ~= target in the least-squares sense (minimum norm when rank deficient).
Eigen::MatrixXd lstsq_right(const Eigen::MatrixXd& target, const Eigen::MatrixXd& regressor) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(regressor.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(kLstsqThreshold);
    return svd.solve(target.transpose()).transpose();
}

// Same, with regressor rows equilibrated so the threshold does not depend on channel units.
Eigen::MatrixXd lstsq_right_scaled(const Eigen::MatrixXd& target, const Eigen::MatrixXd& regressor) {
    Eigen::VectorXd scale = regressor.rowwise().norm();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (scale(i) == 0.0) {
            scale(i) = 1.0;
        }
    }
    const Eigen::MatrixXd scaled = scale.cwiseInverse().asDiagonal() * regressor;
    return lstsq_right(target, scaled) * scale.cwiseInverse().asDiagonal();
}

Eigen::MatrixXd subtract_row(const Eigen::MatrixXd& M, const Eigen::VectorXd& v) {
    return M.rowwise() - v.transpose();
}

std::string vec_str(const Eigen::VectorXd& v, int precision = 6) {
    std::ostringstream os;
    os.precision(precision);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        os << (i ? " " : "") << v(i);
    }
    return os.str();
}

struct Decomposition {
    Eigen::MatrixXd U;
    Eigen::VectorXd s;
    Eigen::MatrixXd V;
};

struct Recovered {
    StateSpaceModel model;
    double shift_residual;
};

// Recovers the order-n model from the SVD of H_fp Z_p and the aligned data blocks.
Recovered recover_model(const Decomposition& dec, int n, const Eigen::MatrixXd& Yk, const Eigen::MatrixXd& Uk,
                        int ny, int f, bool feedthrough, double ts) {
    const Eigen::Index J = Yk.cols();
    const Eigen::Index nu = Uk.rows();
    const Eigen::VectorXd root = dec.s.head(n).cwiseSqrt();
    const Eigen::MatrixXd gamma = dec.U.leftCols(n) * root.asDiagonal();
    const Eigen::MatrixXd X = root.asDiagonal() * dec.V.leftCols(n).transpose();

    // y_k on (x_k, u_k): C, D and the innovation sequence.
    Eigen::MatrixXd C(ny, n);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(ny, nu);
    if (feedthrough) {
        Eigen::MatrixXd reg(n + nu, J);
        reg << X, Uk;
        const Eigen::MatrixXd CD = lstsq_right(Yk, reg);
        C = CD.leftCols(n);
        D = CD.rightCols(nu);
    } else {
        C = lstsq_right(Yk, X);
    }
    const Eigen::MatrixXd E = Yk - C * X - D * Uk;

    // x_{k+1} on (x_k, u_k, e_k). Same fit as regressing on (x_k, u_k, y_k): the e block
    // coefficient is K, and A, B come out already converted from the predictor form.
    Eigen::MatrixXd reg(n + nu + ny, J - 1);
    reg << X.leftCols(J - 1), Uk.leftCols(J - 1), E.leftCols(J - 1);
    const Eigen::MatrixXd ABK = lstsq_right(X.rightCols(J - 1), reg);
    Eigen::MatrixXd A = ABK.leftCols(n);
    Eigen::MatrixXd B = ABK.middleCols(n, nu);
    Eigen::MatrixXd K = ABK.rightCols(ny);

    const Eigen::Index shifted = static_cast<Eigen::Index>(f - 1) * ny;
    double shift_residual = 0.0;
    if (shifted > 0) {
        shift_residual =
            (gamma.topRows(shifted) * A - gamma.bottomRows(shifted)).norm() / std::max(gamma.norm(), 1e-300);
    }
    return Recovered{StateSpaceModel(std::move(A), std::move(B), std::move(C), std::move(D), std::move(K), ts),
                     shift_residual};
}

} // namespace

Eigen::MatrixXd block_hankel(const Eigen::MatrixXd& data, Eigen::Index start_row, Eigen::Index block_rows,
                             Eigen::Index cols) {
    if (start_row < 0 || block_rows < 1 || cols < 1) {
        throw DimensionError("block_hankel: start_row must be >= 0, block_rows and cols >= 1");
    }
    const Eigen::Index needed = start_row + block_rows + cols - 1;
    if (needed > data.rows()) {
        throw DimensionError("block_hankel: needs " + std::to_string(needed) + " samples, " +
                             std::to_string(data.rows()) + " available");
    }
    const Eigen::Index c = data.cols();
    Eigen::MatrixXd H(block_rows * c, cols);
    for (Eigen::Index i = 0; i < block_rows; ++i) {
        H.middleRows(i * c, c) = data.middleRows(start_row + i, cols).transpose();
    }
    return H;
}

Eigen::MatrixXd project_hfp(const Eigen::MatrixXd& Y_f, const Eigen::MatrixXd& Z_p, const Eigen::MatrixXd& U_f) {
    const Eigen::Index J = Z_p.cols();
    if (Y_f.cols() != J || U_f.cols() != J) {
        throw DimensionError("project_hfp: Y_f, Z_p and U_f must have the same number of columns (" +
                             std::to_string(Y_f.cols()) + ", " + std::to_string(J) + ", " +
                             std::to_string(U_f.cols()) + ")");
    }
    const Eigen::Index rz = Z_p.rows();
    const Eigen::Index ru = U_f.rows();
    if (rz + ru > J) {
        throw DimensionError("project_hfp: " + std::to_string(rz + ru) + " regressor rows but only " +
                             std::to_string(J) + " columns");
    }
    if (ru > 0) {
        const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(U_f.transpose()).singularValues();
        const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
        if (!(cond <= kMaxInputCondition)) {
            std::ostringstream msg;
            msg << "future input block is rank deficient (condition number " << cond
                << "); use a richer excitation signal (longer PRBS register, distinct sequences per input)";
            throw NumericalError(msg.str());
        }
    }

    Eigen::MatrixXd reg(rz + ru, J);
    reg << Z_p, U_f;
    return lstsq_right_scaled(Y_f, reg).leftCols(rz);
}

int n4sid_parameter_count(int n, int m, int p) { return n * (m + p) + n * p + p * m; }

int aic_order_select(const std::vector<int>& orders, const std::vector<Eigen::MatrixXd>& covariances,
                     const std::vector<int>& n_params, Eigen::Index N, std::vector<AicEntry>* table) {
    if (orders.empty()) {
        throw ConfigError("AIC order selection needs at least one candidate");
    }
    if (covariances.size() != orders.size() || n_params.size() != orders.size()) {
        throw DimensionError("AIC inputs: orders, covariances and parameter counts differ in length");
    }
    int best = -1;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < orders.size(); ++i) {
        AicEntry entry;
        entry.order = orders[i];
        entry.parameters = n_params[i];
        Eigen::LLT<Eigen::MatrixXd> llt(covariances[i]);
        if (covariances[i].size() == 0 || llt.info() != Eigen::Success || !covariances[i].allFinite()) {
            entry.skipped = true;
            entry.note = covariances[i].allFinite() ? "residual covariance is singular"
                                                    : "residuals are not finite (unstable predictor)";
        } else {
            entry.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
            entry.score = static_cast<double>(N) * entry.log_det + 2.0 * n_params[i];
            if (entry.score < best_score || (entry.score == best_score && orders[i] < best)) {
                best_score = entry.score;
                best = orders[i];
            }
        }
        if (table) {
            table->push_back(entry);
        }
    }
    if (best < 0) {
        throw NumericalError("AIC order selection: no candidate order has a usable residual covariance");
    }
    return best;
}

Eigen::MatrixXd prediction_residuals(const StateSpaceModel& model, const Eigen::MatrixXd& U, const Eigen::MatrixXd& Y) {
    KalmanFilter kf(model);
    Eigen::MatrixXd E(Y.rows(), Y.cols());
    for (Eigen::Index k = 0; k < Y.rows(); ++k) {
        E.row(k) = kf.step(U.row(k).transpose(), Y.row(k).transpose()).innovation.transpose();
    }
    return E;
}

Eigen::VectorXd simulation_fit(const StateSpaceModel& model, const OperatingPoint& op, const Dataset& d) {
    const Eigen::MatrixXd U = subtract_row(d.u(), op.u);
    const Eigen::MatrixXd Y = subtract_row(d.y(), op.y);
    const Eigen::VectorXd x0 = estimate_initial_state(model, U, Y);
    return fit_percent(Y, simulate(model, U, x0));
}

IdentificationReport estimate_n4sid(const Dataset& train, const N4sidConfig& cfg,
                                    const std::optional<OperatingPoint>& op_in, const Dataset* valid) {
    const int nu = static_cast<int>(train.inputs());
    const int ny = static_cast<int>(train.outputs());
    const int f = cfg.future_horizon;
    const int pp = cfg.past_horizon;
    const int n_max = cfg.order ? *cfg.order : cfg.order_max;
    const int n_min = cfg.order ? *cfg.order : cfg.order_min;
    if (n_min < 1 || n_max < n_min) {
        throw ConfigError("N4SID order range is empty or non-positive");
    }
    if (f < n_max + 1 || pp < n_max + 1) {
        throw ConfigError("N4SID horizons must exceed the largest candidate order (f=" + std::to_string(f) +
                          ", p=" + std::to_string(pp) + ", n_max=" + std::to_string(n_max) + ")");
    }
    const Eigen::Index N = train.samples();
    const Eigen::Index J = N - f - pp + 1;
    const Eigen::Index regressors = static_cast<Eigen::Index>(nu + ny) * pp + static_cast<Eigen::Index>(nu) * f;
    if (J < regressors + 2) {
        throw DimensionError("N4SID: " + std::to_string(N) + " samples give " + std::to_string(std::max<Eigen::Index>(J, 0)) +
                             " Hankel columns, at least " + std::to_string(regressors + 2) + " needed");
    }

    IdentificationReport report{.model = StateSpaceModel(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, nu),
                                                         Eigen::MatrixXd::Zero(ny, 1), Eigen::MatrixXd::Zero(ny, nu),
                                                         train.ts())};
    report.future_horizon = f;
    report.past_horizon = pp;
    report.train_samples = N;
    if (J < 10 * static_cast<Eigen::Index>(nu + ny) * pp) {
        report.diagnostics.push_back("few Hankel columns (" + std::to_string(J) + ") relative to 10*(m+p)*p");
    }

    OperatingPoint op;
    if (op_in) {
        op = *op_in;
    } else if (cfg.remove_mean) {
        op = OperatingPoint{train.u().colwise().mean().transpose(), train.y().colwise().mean().transpose()};
    } else {
        op = OperatingPoint{Eigen::VectorXd::Zero(nu), Eigen::VectorXd::Zero(ny)};
    }
    if (op.u.size() != nu || op.y.size() != ny) {
        throw DimensionError("operating point does not match the dataset channels");
    }
    report.operating_point = op;
    const Eigen::MatrixXd U = subtract_row(train.u(), op.u);
    const Eigen::MatrixXd Y = subtract_row(train.y(), op.y);

    Eigen::MatrixXd Z(N, nu + ny);
    Z << U, Y;
    const Eigen::MatrixXd Z_p = block_hankel(Z, 0, pp, J);
    const Eigen::MatrixXd U_f = block_hankel(U, pp, f, J);
    const Eigen::MatrixXd Y_f = block_hankel(Y, pp, f, J);

    const Eigen::MatrixXd H_fp = project_hfp(Y_f, Z_p, U_f);
    const Eigen::MatrixXd O = H_fp * Z_p;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(O, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Decomposition dec{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    report.singular_values = dec.s;
    int rank = 0;
    for (Eigen::Index i = 0; i < dec.s.size(); ++i) {
        if (dec.s(i) > kRankTolerance * dec.s(0)) {
            ++rank;
        }
    }
    report.numerical_rank = rank;

    const Eigen::MatrixXd Yk = Y.middleRows(pp, J).transpose();
    const Eigen::MatrixXd Uk = U.middleRows(pp, J).transpose();

    std::optional<Recovered> chosen;
    if (cfg.order) {
        if (*cfg.order > rank) {
            throw NumericalError("requested order " + std::to_string(*cfg.order) + " exceeds the numerical rank " +
                                 std::to_string(rank) + " of the projected data");
        }
        chosen = recover_model(dec, *cfg.order, Yk, Uk, ny, f, cfg.estimate_feedthrough, train.ts());
        report.chosen_order = *cfg.order;
    } else {
        // Covariance floor at round-off level keeps exact fits comparable across orders.
        const double floor = 1e-12 * std::max((Y.transpose() * Y).trace() / static_cast<double>(N * ny), 1e-300);
        std::vector<int> orders, params;
        std::vector<Eigen::MatrixXd> covs;
        std::vector<Recovered> models;
        for (int n = n_min; n <= n_max; ++n) {
            if (n > rank) {
                report.diagnostics.push_back("order " + std::to_string(n) + " skipped: exceeds numerical rank " +
                                             std::to_string(rank));
                continue;
            }
            Recovered rec = recover_model(dec, n, Yk, Uk, ny, f, cfg.estimate_feedthrough, train.ts());
            const Eigen::MatrixXd E = prediction_residuals(rec.model, U, Y);
            Eigen::MatrixXd cov = E.transpose() * E / static_cast<double>(N);
            cov += floor * Eigen::MatrixXd::Identity(ny, ny);
            orders.push_back(n);
            covs.push_back(std::move(cov));
            params.push_back(n4sid_parameter_count(n, nu, ny));
            models.push_back(std::move(rec));
        }
        if (orders.empty()) {
            throw NumericalError("no candidate order within the numerical rank " + std::to_string(rank));
        }
        const int best = aic_order_select(orders, covs, params, N, &report.aic);
        for (const auto& e : report.aic) {
            if (e.skipped) {
                report.diagnostics.push_back("order " + std::to_string(e.order) + " skipped: " + e.note);
            }
        }
        for (std::size_t i = 0; i < orders.size(); ++i) {
            if (orders[i] == best) {
                chosen = std::move(models[i]);
            }
        }
        report.chosen_order = best;
    }

    report.model = chosen->model;
    report.shift_invariance_residual = chosen->shift_residual;
    if (report.model.stability_warning()) {
        report.diagnostics.push_back(*report.model.stability_warning());
    }

    const Eigen::MatrixXd E = prediction_residuals(report.model, U, Y);
    const Eigen::MatrixXd E_f = block_hankel(E, pp, f, J);
    const double rms_e = E.norm() / std::sqrt(static_cast<double>(E.size()));
    const double rms_u = U.norm() / std::sqrt(static_cast<double>(std::max<Eigen::Index>(U.size(), 1)));
    if (rms_e > 0.0 && rms_u > 0.0) {
        report.open_loop_correlation =
            (E_f * U_f.transpose() / static_cast<double>(J)).cwiseAbs().maxCoeff() / (rms_e * rms_u);
    }

    report.fit_train = simulation_fit(report.model, op, train);
    if (valid) {
        report.fit_valid = simulation_fit(report.model, op, *valid);
        report.valid_samples = valid->samples();
    }
    return report;
}

void write_report(const IdentificationReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.precision(10);
    out << "# N4SID identification report\n";
    out << "train_samples: " << r.train_samples << '\n';
    out << "valid_samples: " << r.valid_samples << '\n';
    out << "future_horizon: " << r.future_horizon << '\n';
    out << "past_horizon: " << r.past_horizon << '\n';
    out << "chosen_order: " << r.chosen_order << '\n';
    out << "numerical_rank: " << r.numerical_rank << '\n';
    out << "singular_values: " << vec_str(r.singular_values, 10) << '\n';
    out << "fit_train_percent: " << vec_str(r.fit_train) << '\n';
    if (r.fit_valid) {
        out << "fit_valid_percent: " << vec_str(*r.fit_valid) << '\n';
    }
    out << "shift_invariance_residual: " << r.shift_invariance_residual << '\n';
    out << "open_loop_correlation: " << r.open_loop_correlation << '\n';
    if (!r.aic.empty()) {
        out << "aic_table:\n";
        for (const auto& e : r.aic) {
            out << "  order " << e.order << ": ";
            if (e.skipped) {
                out << "skipped (" << e.note << ")\n";
            } else {
                out << "score " << e.score << ", log_det " << e.log_det << ", parameters " << e.parameters << '\n';
            }
        }
    }
    for (const auto& d : r.diagnostics) {
        out << "diagnostic: " << d << '\n';
    }
}

} // namespace mmpc
