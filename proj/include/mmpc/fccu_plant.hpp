#pragma once

#include <array>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "mmpc/linear_model.hpp"

namespace mmpc {

/**
 * @brief 2x2 surrogate of a fluid catalytic cracking unit.
 *
 * Inputs: regenerated catalyst flow F_s and regenerator air flow F_a (kg/s).
 * Outputs: riser outlet temperature T_ro and regenerator temperature T_rg (K).
 *
 * Two linear cores (low/high regime) in deviation coordinates are blended by a
 * sigmoid of a regenerator-temperature proxy state; a quadratic static map
 * follows the blended core. None of the numbers are process data.
 */
struct RegimeCore {
    Eigen::MatrixXd A, B, C, D;
};

enum class DisturbanceEntry { Output, Input };

struct PlantConfig {
    std::array<RegimeCore, 2> cores; // [low, high]
    Eigen::RowVectorXd proxy;        // proxy = proxy * x
    double regime_threshold = 10.0;  // proxy value where both regimes weigh 1/2
    double regime_sharpness = 0.5;   // sigmoid slope per proxy unit
    Eigen::VectorXd curvature;       // y_dev = z + curvature .* z^2
    Eigen::VectorXd noise_std;       // measurement noise per output
    Eigen::VectorXd process_noise_std; // per state, added after each update; empty or zero disables
    Eigen::MatrixXd disturbance_gain; // p x q (output entry) or m x q (input entry)
    DisturbanceEntry disturbance_entry = DisturbanceEntry::Output;
    Eigen::VectorXd u_ss;
    Eigen::VectorXd y_ss;
    double ts = 0.5;
    std::uint64_t seed = 1;

    [[nodiscard]] Eigen::Index order() const { return cores[0].A.rows(); }
    [[nodiscard]] Eigen::Index inputs() const { return cores[0].B.cols(); }
    [[nodiscard]] Eigen::Index outputs() const { return cores[0].C.rows(); }
    [[nodiscard]] Eigen::Index disturbances() const { return disturbance_gain.cols(); }

    // Shapes, core stability, equilibrium inside the [0,800] x [0,1150] windows.
    void validate() const;
};

struct PlantState {
    Eigen::VectorXd x;
    double t = 0.0;
};

[[nodiscard]] PlantConfig make_default_fccu();

// Sigmoid blend weight of the high regime for a proxy value.
[[nodiscard]] double regime_weight(const PlantConfig& cfg, double proxy);

// Linear core at a fixed blend weight, including the static map's unit slope at zero.
[[nodiscard]] StateSpaceModel blended_core(const PlantConfig& cfg, double weight);

// Steady-state gain (p x m) of the blended core.
[[nodiscard]] Eigen::MatrixXd dc_gain(const PlantConfig& cfg, double weight);

class FccuPlant {
public:
    explicit FccuPlant(PlantConfig cfg);

    /**
     * Output over the current interval for input u and disturbance d, then
     * advances the state by one sample. Throws NumericalError on a non-finite
     * state.
     */
    Eigen::VectorXd step(const Eigen::VectorXd& u, const Eigen::VectorXd& d);
    Eigen::VectorXd step(const Eigen::VectorXd& u);

    [[nodiscard]] const PlantState& state() const noexcept { return state_; }
    [[nodiscard]] const PlantConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] double current_weight() const;
    void reset();

private:
    PlantConfig cfg_;
    PlantState state_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> noise_{0.0, 1.0};
};

} // namespace mmpc
