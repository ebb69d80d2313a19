#include "mmpc/fccu_plant.hpp"

#include <cmath>
#include <sstream>

#include "mmpc/error.hpp"

namespace mmpc {

namespace {

RegimeCore make_core(double a_riser, double a_regen, double a_air, double riser_gain, double regen_coupling,
                     double catalyst_cooling, double air_heating) {
    RegimeCore core;
    core.A = Eigen::MatrixXd::Zero(3, 3);
    core.B = Eigen::MatrixXd::Zero(3, 2);
    // x0: riser outlet temperature, x1: regenerator temperature, x2: air distribution lag.
    core.A(0, 0) = a_riser;
    core.A(0, 1) = (1.0 - a_riser) * regen_coupling;
    core.B(0, 0) = (1.0 - a_riser) * riser_gain;
    core.A(1, 1) = a_regen;
    core.A(1, 2) = (1.0 - a_regen) * air_heating;
    core.B(1, 0) = (1.0 - a_regen) * catalyst_cooling;
    core.A(2, 2) = a_air;
    core.B(2, 1) = 1.0 - a_air;
    core.C = Eigen::MatrixXd::Zero(2, 3);
    core.C(0, 0) = 1.0;
    core.C(1, 1) = 1.0;
    core.D = Eigen::MatrixXd::Zero(2, 2);
    return core;
}

} // namespace

void PlantConfig::validate() const {
    const Eigen::Index n = order();
    const Eigen::Index m = inputs();
    const Eigen::Index p = outputs();
    for (std::size_t r = 0; r < cores.size(); ++r) {
        const auto& c = cores[r];
        if (c.A.rows() != n || c.A.cols() != n || c.B.rows() != n || c.B.cols() != m || c.C.rows() != p ||
            c.C.cols() != n || c.D.rows() != p || c.D.cols() != m) {
            throw ConfigError("plant regime core " + std::to_string(r) + " has inconsistent shapes");
        }
        if (spectral_radius(c.A) >= 1.0) {
            throw ConfigError("plant regime core " + std::to_string(r) + " is not stable");
        }
    }
    if (proxy.size() != n) {
        throw ConfigError("plant proxy row has length " + std::to_string(proxy.size()) + ", expected " +
                          std::to_string(n));
    }
    if (curvature.size() != p || noise_std.size() != p || y_ss.size() != p || u_ss.size() != m) {
        throw ConfigError("plant curvature, noise, or operating point has the wrong length");
    }
    if (process_noise_std.size() != 0 && process_noise_std.size() != n) {
        throw ConfigError("plant process noise needs one entry per state (" + std::to_string(n) + ")");
    }
    if ((noise_std.array() < 0.0).any() || (process_noise_std.array() < 0.0).any()) {
        throw ConfigError("plant noise standard deviations must be nonnegative");
    }
    const Eigen::Index rows = disturbance_entry == DisturbanceEntry::Output ? p : m;
    if (disturbance_gain.rows() != rows) {
        throw ConfigError("plant disturbance gain needs " + std::to_string(rows) + " rows");
    }
    if (!(ts > 0.0) || !(regime_sharpness > 0.0)) {
        throw ConfigError("plant ts and regime sharpness must be positive");
    }
    if (p == 2 && !(y_ss(0) >= 0.0 && y_ss(0) <= 800.0 && y_ss(1) >= 0.0 && y_ss(1) <= 1150.0)) {
        throw ConfigError("plant equilibrium outputs must lie within [0,800] x [0,1150]");
    }
}

PlantConfig make_default_fccu() {
    PlantConfig cfg;
    cfg.cores[0] = make_core(0.92, 0.985, 0.90, 0.25, 0.5, -0.15, 8.0);
    cfg.cores[1] = make_core(0.92, 0.980, 0.90, 0.35, 0.5, -0.20, 11.2);
    cfg.proxy = Eigen::RowVectorXd::Zero(3);
    cfg.proxy(1) = 1.0;
    cfg.regime_threshold = 10.0;
    cfg.regime_sharpness = 0.5;
    cfg.curvature = Eigen::Vector2d(0.002, 0.001);
    cfg.noise_std = Eigen::Vector2d::Zero();
    cfg.disturbance_gain = Eigen::Vector2d(4.0, 6.0);
    cfg.disturbance_entry = DisturbanceEntry::Output;
    cfg.u_ss = Eigen::Vector2d(294.0, 25.35);
    cfg.y_ss = Eigen::Vector2d(776.9, 965.4);
    cfg.ts = 0.5;
    cfg.seed = 1;
    return cfg;
}

double regime_weight(const PlantConfig& cfg, double proxy) {
    return 1.0 / (1.0 + std::exp(-cfg.regime_sharpness * (proxy - cfg.regime_threshold)));
}

StateSpaceModel blended_core(const PlantConfig& cfg, double weight) {
    const auto& lo = cfg.cores[0];
    const auto& hi = cfg.cores[1];
    return StateSpaceModel((1.0 - weight) * lo.A + weight * hi.A, (1.0 - weight) * lo.B + weight * hi.B,
                           (1.0 - weight) * lo.C + weight * hi.C, (1.0 - weight) * lo.D + weight * hi.D, cfg.ts);
}

Eigen::MatrixXd dc_gain(const PlantConfig& cfg, double weight) {
    const StateSpaceModel core = blended_core(cfg, weight);
    const Eigen::Index n = core.order();
    return core.C() * (Eigen::MatrixXd::Identity(n, n) - core.A()).partialPivLu().solve(core.B()) + core.D();
}

FccuPlant::FccuPlant(PlantConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    state_.x = Eigen::VectorXd::Zero(cfg_.order());
}

void FccuPlant::reset() {
    state_ = PlantState{Eigen::VectorXd::Zero(cfg_.order()), 0.0};
    rng_.seed(cfg_.seed);
    noise_.reset();
}

double FccuPlant::current_weight() const { return regime_weight(cfg_, cfg_.proxy.dot(state_.x)); }

Eigen::VectorXd FccuPlant::step(const Eigen::VectorXd& u) {
    return step(u, Eigen::VectorXd::Zero(cfg_.disturbances()));
}

Eigen::VectorXd FccuPlant::step(const Eigen::VectorXd& u, const Eigen::VectorXd& d) {
    if (u.size() != cfg_.inputs()) {
        throw DimensionError("plant input has length " + std::to_string(u.size()) + ", expected " +
                             std::to_string(cfg_.inputs()));
    }
    if (d.size() != cfg_.disturbances()) {
        throw DimensionError("plant disturbance has length " + std::to_string(d.size()) + ", expected " +
                             std::to_string(cfg_.disturbances()));
    }
    const double w = current_weight();
    const auto& lo = cfg_.cores[0];
    const auto& hi = cfg_.cores[1];
    Eigen::VectorXd du = u - cfg_.u_ss;
    if (cfg_.disturbance_entry == DisturbanceEntry::Input) {
        du += cfg_.disturbance_gain * d;
    }
    Eigen::VectorXd z = ((1.0 - w) * lo.C + w * hi.C) * state_.x + ((1.0 - w) * lo.D + w * hi.D) * du;
    if (cfg_.disturbance_entry == DisturbanceEntry::Output) {
        z += cfg_.disturbance_gain * d;
    }
    Eigen::VectorXd y = cfg_.y_ss + z + cfg_.curvature.cwiseProduct(z.cwiseAbs2());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (cfg_.noise_std(i) > 0.0) {
            y(i) += cfg_.noise_std(i) * noise_(rng_);
        }
    }
    Eigen::VectorXd next = ((1.0 - w) * lo.A + w * hi.A) * state_.x + ((1.0 - w) * lo.B + w * hi.B) * du;
    for (Eigen::Index i = 0; i < cfg_.process_noise_std.size(); ++i) {
        if (cfg_.process_noise_std(i) > 0.0) {
            next(i) += cfg_.process_noise_std(i) * noise_(rng_);
        }
    }
    if (!next.allFinite() || !y.allFinite()) {
        std::ostringstream msg;
        msg << "plant state diverged at t = " << state_.t << " s";
        throw NumericalError(msg.str());
    }
    state_.x = std::move(next);
    state_.t += cfg_.ts;
    return y;
}

} // namespace mmpc
