#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mmpc/error.hpp"
#include "mmpc/subspace_id.hpp"
#include "support.hpp"

using namespace mmpc;
using namespace mmpc::testing;

namespace {

Dataset noise_free_data(const StateSpaceModel& truth, Eigen::Index N, std::uint32_t seed = 1) {
    const Eigen::MatrixXd U = prbs_inputs(static_cast<int>(truth.inputs()), N, seed);
    return Dataset(U, simulate(truth, U, Eigen::VectorXd::Zero(truth.order())), truth.ts());
}

N4sidConfig fixed_order(int n, int f = 10) {
    N4sidConfig c;
    c.order = n;
    c.future_horizon = f;
    c.past_horizon = f;
    return c;
}

} // namespace

TEST_CASE("hankel: layout example and single block row") {
    Eigen::MatrixXd d(5, 1);
    d << 1, 2, 3, 4, 5;
    Eigen::MatrixXd expected(2, 3);
    expected << 1, 2, 3, 2, 3, 4;
    CHECK(block_hankel(d, 0, 2, 3) == expected);
    CHECK(block_hankel(d, 1, 1, 4) == d.bottomRows(4).transpose());
}

TEST_CASE("hankel: every column is a contiguous data slice") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd data = gaussian(rng, 20, 3);
    for (Eigen::Index start = 0; start < 4; ++start) {
        for (Eigen::Index rows = 1; rows < 5; ++rows) {
            const Eigen::Index cols = 20 - start - rows + 1;
            const auto H = block_hankel(data, start, rows, cols);
            REQUIRE(H.rows() == rows * 3);
            for (Eigen::Index j = 0; j < cols; ++j) {
                for (Eigen::Index i = 0; i < rows; ++i) {
                    for (Eigen::Index c = 0; c < 3; ++c) {
                        REQUIRE(H(i * 3 + c, j) == data(start + i + j, c));
                    }
                }
            }
        }
    }
}

TEST_CASE("hankel: too few samples reports required and available") {
    CHECK_THROWS_WITH_AS((void)block_hankel(Eigen::MatrixXd::Zero(5, 1), 1, 3, 3),
                         doctest::Contains("needs 6 samples, 5 available"), DimensionError);
}

TEST_CASE("projection: Y_f = M Z_p is recovered exactly") {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd Z = gaussian(rng, 6, 400);
    const Eigen::MatrixXd U = gaussian(rng, 4, 400);
    const Eigen::MatrixXd M = gaussian(rng, 5, 6);
    CHECK((project_hfp(M * Z, Z, U) - M).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("projection: output driven only by U_f projects to zero") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd Z = gaussian(rng, 6, 400);
    const Eigen::MatrixXd U = gaussian(rng, 4, 400);
    const Eigen::MatrixXd G = gaussian(rng, 5, 4);
    CHECK(project_hfp(G * U, Z, U).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("projection: scalar blocks match the hand normal equations") {
    std::mt19937_64 rng(4);
    const Eigen::RowVectorXd z = gaussian(rng, 1, 50);
    const Eigen::RowVectorXd u = gaussian(rng, 1, 50);
    const Eigen::RowVectorXd y = 0.7 * z - 1.3 * u + 0.1 * gaussian(rng, 1, 50);
    // Solve [zz zu; uz uu] [h; g] = [yz; yu] by Cramer's rule.
    const double zz = z.dot(z), zu = z.dot(u), uu = u.dot(u), yz = y.dot(z), yu = y.dot(u);
    const double h = (yz * uu - yu * zu) / (zz * uu - zu * zu);
    CHECK(project_hfp(y, z, u)(0, 0) == doctest::Approx(h).epsilon(1e-12));
}

TEST_CASE("projection: rank-deficient future inputs are rejected") {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd U = gaussian(rng, 3, 200);
    U.row(2) = U.row(0) - U.row(1);
    CHECK_THROWS_WITH_AS((void)project_hfp(gaussian(rng, 2, 200), gaussian(rng, 4, 200), U),
                         doctest::Contains("rank deficient"), NumericalError);
}

TEST_CASE("aic: tie goes to the smaller order, single candidate is returned") {
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    CHECK(aic_order_select({2, 3}, {I, I}, {10, 10}, 100) == 2);
    CHECK(aic_order_select({3}, {4.0 * I}, {12}, 100) == 3);
    // N log det + 2k by hand: order 1 -> 100 log(0.25) + 20, order 2 -> 100 log(0.2) + 40.
    const double s1 = 100.0 * std::log(0.25) + 20.0;
    const double s2 = 100.0 * std::log(0.2) + 40.0;
    std::vector<AicEntry> table;
    const int best = aic_order_select({1, 2}, {0.5 * I, std::sqrt(0.2) * I}, {10, 20}, 100, &table);
    CHECK(best == (s2 < s1 ? 2 : 1));
    CHECK(table[0].score == doctest::Approx(s1));
    CHECK(table[1].score == doctest::Approx(s2));
}

TEST_CASE("aic: singular covariance is skipped with a note") {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(2, 2);
    S(0, 0) = 1.0;
    std::vector<AicEntry> table;
    CHECK(aic_order_select({1, 2}, {S, Eigen::MatrixXd::Identity(2, 2)}, {4, 8}, 50, &table) == 2);
    CHECK(table[0].skipped);
    CHECK(table[0].note.find("singular") != std::string::npos);
    CHECK_THROWS_AS((void)aic_order_select({1}, {S}, {4}, 50), NumericalError);
}

TEST_CASE("aic: parameter count") { CHECK(n4sid_parameter_count(3, 2, 2) == 3 * 4 + 3 * 2 + 4); }

TEST_CASE("n4sid: noise-free second-order system is recovered") {
    Eigen::MatrixXd A(2, 2), B(2, 2), C(2, 2), D(2, 2);
    A << 0.7, 0.2, -0.1, 0.5;
    B << 1.0, 0.3, -0.5, 1.2;
    C << 1.0, 0.0, 0.4, 1.0;
    D << 0.1, 0.0, 0.0, -0.2;
    const StateSpaceModel truth(A, B, C, D, 1.0);
    const auto d = noise_free_data(truth, 2000);
    const auto rep = estimate_n4sid(d, fixed_order(2));
    CHECK(eigenvalue_match_error(truth.A(), rep.model.A()) < 1e-6);
    CHECK(impulse_relative_error(truth, rep.model, 50) < 1e-6);
    CHECK(rep.shift_invariance_residual < 1e-6);
    CHECK(rep.fit_train.minCoeff() > 99.999);
    CHECK(rep.numerical_rank == 2);
}

TEST_CASE("n4sid: AIC picks the true order on noise-free data") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const auto truth = random_stable_system(rng, 2, 2, 2);
        N4sidConfig cfg;
        cfg.order_min = 1;
        cfg.order_max = 6;
        const auto rep = estimate_n4sid(noise_free_data(truth, 2000), cfg);
        CHECK(rep.chosen_order == 2);
        CHECK(rep.chosen_order <= rep.singular_values.size());
    }
}

TEST_CASE("n4sid: random systems, eigenvalues and impulse response") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 9; ++trial) {
        const int n = 2 + trial % 3;
        const auto truth = random_stable_system(rng, n, 2, 2);
        const auto rep = estimate_n4sid(noise_free_data(truth, 3000), fixed_order(n));
        CAPTURE(trial);
        CHECK(eigenvalue_match_error(truth.A(), rep.model.A()) < 1e-6);
        CHECK(impulse_relative_error(truth, rep.model, 50) < 1e-6);
        CHECK(rep.shift_invariance_residual < 1e-6);
        for (Eigen::Index i = 1; i < rep.singular_values.size(); ++i) {
            REQUIRE(rep.singular_values(i) <= rep.singular_values(i - 1));
        }
    }
}

TEST_CASE("n4sid: doubling the record does not worsen eigenvalue error") {
    std::mt19937_64 rng(8);
    const auto truth = random_stable_system(rng, 3, 2, 2);
    const double e1 = eigenvalue_match_error(truth.A(), estimate_n4sid(noise_free_data(truth, 1500), fixed_order(3)).model.A());
    const double e2 = eigenvalue_match_error(truth.A(), estimate_n4sid(noise_free_data(truth, 3000), fixed_order(3)).model.A());
    // Both sit at round-off; allow that much slack.
    CHECK(e2 <= std::max(e1, 1e-9));
}

TEST_CASE("n4sid: one percent output noise keeps validation fit above 95%") {
    std::mt19937_64 rng(9);
    std::vector<double> fit1, fit2;
    for (int trial = 0; trial < 7; ++trial) {
        const int n = 2 + trial % 3;
        const auto truth = random_stable_system(rng, n, 2, 2);
        const Eigen::MatrixXd U = prbs_inputs(2, 4000, 1 + trial);
        Eigen::MatrixXd Y = simulate(truth, U, Eigen::VectorXd::Zero(n));
        for (Eigen::Index c = 0; c < 2; ++c) {
            const double sd = std::sqrt((Y.col(c).array() - Y.col(c).mean()).square().mean());
            Y.col(c) += 0.01 * sd * gaussian(rng, Y.rows(), 1);
        }
        const auto [train, valid] = split(Dataset(U, Y, 1.0), 0.5);
        const auto rep = estimate_n4sid(train, fixed_order(n), std::nullopt, &valid);
        REQUIRE(rep.fit_valid.has_value());
        // Innovations of an open-loop experiment do not correlate with future inputs.
        CHECK(rep.open_loop_correlation < 0.1);
        fit1.push_back((*rep.fit_valid)(0));
        fit2.push_back((*rep.fit_valid)(1));
    }
    CHECK(median(fit1) >= 95.0);
    CHECK(median(fit2) >= 95.0);
}

TEST_CASE("n4sid: output unrelated to the input") {
    std::mt19937_64 rng(10);
    const Eigen::MatrixXd U = prbs_inputs(2, 3000);
    const Eigen::MatrixXd Y = gaussian(rng, 3000, 2);
    const auto [train, valid] = split(Dataset(U, Y, 1.0), 0.5);
    N4sidConfig cfg;
    cfg.order_min = 1;
    cfg.order_max = 6;
    const auto rep = estimate_n4sid(train, cfg, std::nullopt, &valid);
    CHECK(rep.chosen_order <= 2);
    CHECK(rep.singular_values(0) / rep.singular_values(5) < 3.0);
    CHECK(std::abs((*rep.fit_valid)(0)) < 10.0);
    CHECK(std::abs((*rep.fit_valid)(1)) < 10.0);
}

TEST_CASE("n4sid: operating point is removed before estimation") {
    Eigen::MatrixXd A(2, 2), B(2, 2), C(2, 2), D = Eigen::MatrixXd::Zero(2, 2);
    A << 0.6, 0.1, 0.0, 0.4;
    B << 1.0, 0.0, 0.2, 1.0;
    C << 1.0, 0.5, 0.0, 1.0;
    const StateSpaceModel truth(A, B, C, D, 0.5);
    const Eigen::MatrixXd Ud = prbs_inputs(2, 2000);
    const Eigen::MatrixXd Yd = simulate(truth, Ud, Eigen::VectorXd::Zero(2));
    const OperatingPoint op{Eigen::Vector2d(25.0, 11.0), Eigen::Vector2d(777.0, 965.0)};
    const Dataset abs_data(Ud.rowwise() + op.u.transpose(), Yd.rowwise() + op.y.transpose(), 0.5);
    const auto rep = estimate_n4sid(abs_data, fixed_order(2), op);
    CHECK(impulse_relative_error(truth, rep.model, 50) < 1e-6);
    CHECK(rep.operating_point.y == op.y);
    CHECK(rep.model.ts() == 0.5);
}

TEST_CASE("n4sid: configuration and rank errors") {
    std::mt19937_64 rng(11);
    const auto truth = random_stable_system(rng, 2, 2, 2);
    const auto d = noise_free_data(truth, 2000);
    N4sidConfig short_f = fixed_order(2, 2);
    CHECK_THROWS_AS((void)estimate_n4sid(d, short_f), ConfigError);
    CHECK_THROWS_WITH_AS((void)estimate_n4sid(d, fixed_order(5)), doctest::Contains("numerical rank"),
                         NumericalError);
    CHECK_THROWS_AS((void)estimate_n4sid(d.slice(0, 60), fixed_order(2)), DimensionError);
}

TEST_CASE("n4sid: report file lists the AIC table") {
    std::mt19937_64 rng(12);
    const auto truth = random_stable_system(rng, 2, 2, 2);
    N4sidConfig cfg;
    cfg.order_max = 4;
    const auto rep = estimate_n4sid(noise_free_data(truth, 1500), cfg);
    const auto path = std::filesystem::temp_directory_path() / "mmpc_test_report.txt";
    write_report(rep, path);
    std::ifstream in(path);
    std::stringstream text;
    text << in.rdbuf();
    CHECK(text.str().find("chosen_order: 2") != std::string::npos);
    CHECK(text.str().find("aic_table:") != std::string::npos);
    CHECK(text.str().find("order 2: score") != std::string::npos);
    CHECK(text.str().find("order 4 skipped: exceeds numerical rank 2") != std::string::npos);
}
