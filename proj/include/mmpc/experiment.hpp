#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmpc/fccu_plant.hpp"
#include "mmpc/mpc.hpp"
#include "mmpc/multi_model.hpp"
#include "mmpc/signals.hpp"
#include "mmpc/subspace_id.hpp"

namespace mmpc {

// Name of the environment variable that replaces [output] directory.
inline constexpr const char* kOutputRootEnv = "MMPC_OUTPUT_ROOT";

struct ScheduleEntry {
    double t = 0.0;
    Eigen::VectorXd value;
};

struct ModelSpec {
    std::string id;
    N4sidConfig n4sid;
};

enum class PlantSource { Surrogate, ExternalCsv };

struct ExperimentConfig {
    std::string name = "experiment";

    PlantSource plant_source = PlantSource::Surrogate;
    std::filesystem::path plant_csv; // external-csv replay
    PlantConfig plant;

    // One PRBS per input; levels are absolute (u_ss -+ amplitude).
    std::vector<PrbsSpec> excitation;

    double split_fraction = 0.5;
    bool known_operating_point = true; // false: remove sample means
    std::vector<ModelSpec> models;
    std::filesystem::path model_dir; // relative paths resolve against output_root

    MpcConfig controller;

    std::vector<std::string> bank; // model ids, in bank order
    SyncMode sync = SyncMode::KalmanOnly;
    double hysteresis = 0.0;

    double duration = 100.0;
    std::uint64_t seed = 1;
    std::vector<ScheduleEntry> setpoints;    // absolute output references
    std::vector<ScheduleEntry> disturbances; // disturbance vector values

    std::filesystem::path output_root = "runs";
    bool svg = false;

    [[nodiscard]] double ts() const { return plant.ts; }
    [[nodiscard]] Eigen::Index steps() const;
    [[nodiscard]] std::filesystem::path run_dir() const { return output_root / name; }
    [[nodiscard]] std::filesystem::path resolved_model_dir() const;
    [[nodiscard]] const ModelSpec& model(const std::string& id) const;
};

/**
 * Reads an INI experiment file. Missing optional keys take the defaults of
 * make_default_fccu() and the structs above. `output_root` (or the
 * environment variable) replaces [output] directory.
 */
[[nodiscard]] ExperimentConfig load_experiment(const std::filesystem::path& path,
                                               const std::optional<std::filesystem::path>& output_root = std::nullopt);

// Fully resolved INI text: every key with its effective value.
[[nodiscard]] std::string resolved_config_text(const ExperimentConfig& cfg);

// Value of a piecewise-constant schedule at time t, or `initial` before the first entry.
[[nodiscard]] Eigen::VectorXd schedule_value(const std::vector<ScheduleEntry>& schedule, double t,
                                             const Eigen::VectorXd& initial);

// Open-loop PRBS experiment on the surrogate (or the replayed CSV).
[[nodiscard]] Dataset collect_identification_data(const ExperimentConfig& cfg);
[[nodiscard]] Eigen::MatrixXd excitation_inputs(const ExperimentConfig& cfg);

struct IdentifiedModel {
    std::string id;
    StateSpaceModel model;
    OperatingPoint operating_point;
};

struct IdentifyResult {
    Dataset data;
    std::vector<IdentificationReport> reports; // in cfg.models order
    std::vector<IdentifiedModel> models;
};

[[nodiscard]] IdentifyResult identify(const ExperimentConfig& cfg);

enum class ControlMode { Single, Multi };
[[nodiscard]] ControlMode parse_control_mode(const std::string& text);
[[nodiscard]] const char* to_string(ControlMode mode);

struct Trajectory {
    Eigen::VectorXd t;
    Eigen::MatrixXd r, y, u, du; // rows are instants
    Eigen::VectorXd cost;
    std::vector<int> model_id;
    std::vector<StepStatus> status;
    std::vector<std::string> events; // fallback, hold and diagnostic log lines
};

struct ChannelMetrics {
    double iae = 0.0;
    double iae_post_disturbance = 0.0; // from the first disturbance change on; equals iae without one
    // NaN when the channel has no setpoint change or never reaches the level.
    double rise_time = 0.0;
    double settling_time = 0.0;
    double overshoot = 0.0; // percent of the step size
};

struct RunMetrics {
    std::vector<ChannelMetrics> channels;
    int violations = 0;             // instants with y outside [y_min, y_max]
    int violations_hard = 0;        // ... of which the decision was not a soft fallback
    int fallbacks = 0;
    int holds = 0;
    std::vector<double> selection_frequency;
};

[[nodiscard]] RunMetrics compute_metrics(const Trajectory& tr, const Eigen::VectorXd& y_min,
                                         const Eigen::VectorXd& y_max, std::optional<double> disturbance_onset,
                                         std::size_t bank_size);

/**
 * Closed loop against the surrogate. Instant k: the plant returns y_k for the
 * input held over interval k, every controller observes it, and the decision
 * u is applied from interval k+1. Row k of the trajectory logs that decision.
 */
[[nodiscard]] Trajectory run_closed_loop(const ExperimentConfig& cfg, const std::vector<IdentifiedModel>& models,
                                         ControlMode mode);

[[nodiscard]] std::vector<IdentifiedModel> load_bank_models(const ExperimentConfig& cfg);

// Command bodies; each returns the directory it wrote.
std::filesystem::path cmd_identify(const ExperimentConfig& cfg);
std::filesystem::path cmd_control(const ExperimentConfig& cfg, ControlMode mode, bool identify_first);
std::filesystem::path cmd_compare(const std::filesystem::path& run_a, const std::filesystem::path& run_b,
                                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);
std::filesystem::path cmd_prbs_preview(const ExperimentConfig& cfg);

void write_trajectory_csv(const Trajectory& tr, const std::filesystem::path& path);
[[nodiscard]] Trajectory read_trajectory_csv(const std::filesystem::path& path);

} // namespace mmpc
