#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmpc/mpc.hpp"

namespace mmpc {

enum class SyncMode {
    KalmanOnly, // each filter tracks the common (u, y) on its own
    StateCopy,  // unselected estimates overwritten with the selected one (equal orders only)
};

[[nodiscard]] SyncMode parse_sync_mode(const std::string& text);
[[nodiscard]] const char* to_string(SyncMode mode);

struct BankEntry {
    int id;
    MpcController controller;
};

struct MultiModelStep {
    Eigen::VectorXd u;
    int selected = -1; // -1 when every controller failed and the input was held
    Eigen::VectorXd costs; // per entry; +inf for entries excluded this instant
    MpcPlan plan;          // the selected controller's plan
    std::vector<std::string> diagnostics;
};

/**
 * Bank of controllers sharing one measured plant. Each instant every
 * controller filters the same (u, y) and solves its own QP; the move of the
 * controller with the smallest objective is applied to all of them.
 */
class ModelBank {
public:
    ModelBank(std::vector<BankEntry> entries, SyncMode sync = SyncMode::KalmanOnly, double hysteresis = 0.0);

    MultiModelStep step(const Eigen::VectorXd& y, const Eigen::VectorXd& ref);

    // Applies the sync rule for `selected` (an entry index).
    void synchronize(std::size_t selected);

    [[nodiscard]] const std::vector<BankEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] const std::vector<int>& selection_log() const noexcept { return selection_log_; }
    [[nodiscard]] SyncMode sync_mode() const noexcept { return sync_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    // Fraction of instants each entry was selected, in entry order.
    [[nodiscard]] std::vector<double> selection_frequency() const;

private:
    std::vector<BankEntry> entries_;
    SyncMode sync_;
    double hysteresis_;
    std::vector<int> selection_log_;
    std::ptrdiff_t last_selected_ = -1;
};

// Free-function form of ModelBank::step.
[[nodiscard]] MultiModelStep mm_control_step(ModelBank& bank, const Eigen::VectorXd& y, const Eigen::VectorXd& ref);

} // namespace mmpc
