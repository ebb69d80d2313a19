#include "mmpc/multi_model.hpp"

#include <cmath>
#include <limits>

#include "mmpc/error.hpp"

namespace mmpc {

SyncMode parse_sync_mode(const std::string& text) {
    if (text == "kalman-only") {
        return SyncMode::KalmanOnly;
    }
    if (text == "state-copy") {
        return SyncMode::StateCopy;
    }
    throw ConfigError("unknown sync mode '" + text + "' (expected kalman-only or state-copy)");
}

const char* to_string(SyncMode mode) {
    return mode == SyncMode::StateCopy ? "state-copy" : "kalman-only";
}

ModelBank::ModelBank(std::vector<BankEntry> entries, SyncMode sync, double hysteresis)
    : entries_(std::move(entries)), sync_(sync), hysteresis_(hysteresis) {
    if (entries_.empty()) {
        throw ConfigError("model bank needs at least one controller");
    }
    if (hysteresis_ < 0.0) {
        throw ConfigError("selection hysteresis must be nonnegative");
    }
    const auto& first = entries_.front().controller;
    for (const auto& e : entries_) {
        const auto& c = e.controller;
        if (c.model().inputs() != first.model().inputs() || c.model().outputs() != first.model().outputs()) {
            throw ConfigError("model bank entry " + std::to_string(e.id) + " has different input/output counts");
        }
        if (c.model().ts() != first.model().ts()) {
            throw ConfigError("model bank entry " + std::to_string(e.id) + " has a different sampling interval");
        }
        if (!same_settings(c.config(), first.config())) {
            throw ConfigError("model bank entry " + std::to_string(e.id) +
                              " has different horizons, weights or constraints");
        }
        if (sync_ == SyncMode::StateCopy && c.model().order() != first.model().order()) {
            throw ConfigError("state-copy synchronization needs equal model orders (entry " + std::to_string(e.id) +
                              " has order " + std::to_string(c.model().order()) + ", entry " +
                              std::to_string(entries_.front().id) + " has " +
                              std::to_string(first.model().order()) + ")");
        }
    }
}

MultiModelStep ModelBank::step(const Eigen::VectorXd& y, const Eigen::VectorXd& ref) {
    const std::size_t count = entries_.size();
    MultiModelStep out;
    out.costs = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(count), std::numeric_limits<double>::infinity());
    std::vector<MpcPlan> plans(count);
    std::vector<bool> usable(count, false);

    for (std::size_t i = 0; i < count; ++i) {
        auto& ctrl = entries_[i].controller;
        ctrl.observe(y);
        try {
            plans[i] = ctrl.plan(ref);
        } catch (const NumericalError& e) {
            out.diagnostics.push_back("model " + std::to_string(entries_[i].id) + ": " + e.what());
            continue;
        }
        if (plans[i].status == StepStatus::Hold) {
            out.diagnostics.push_back("model " + std::to_string(entries_[i].id) + " excluded: QP failed");
            continue;
        }
        usable[i] = true;
        out.costs(static_cast<Eigen::Index>(i)) = plans[i].cost;
    }

    std::ptrdiff_t best = -1;
    for (std::size_t i = 0; i < count; ++i) {
        if (usable[i] && (best < 0 || plans[i].cost < plans[static_cast<std::size_t>(best)].cost)) {
            best = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (best >= 0 && hysteresis_ > 0.0 && last_selected_ >= 0 && last_selected_ != best &&
        usable[static_cast<std::size_t>(last_selected_)]) {
        const double keep = plans[static_cast<std::size_t>(last_selected_)].cost;
        const double challenger = plans[static_cast<std::size_t>(best)].cost;
        if (keep <= challenger + hysteresis_ * std::abs(challenger)) {
            best = last_selected_;
        }
    }

    if (best < 0) {
        out.u = entries_.front().controller.u_prev();
        out.selected = -1;
        out.diagnostics.push_back("every controller failed; holding previous input");
        if (count > 0 && plans.front().u.size() > 0) {
            out.plan = plans.front();
        }
        out.plan.u = out.u;
        out.plan.du = Eigen::VectorXd::Zero(out.u.size());
        out.plan.status = StepStatus::Hold;
    } else {
        const auto chosen = static_cast<std::size_t>(best);
        out.u = plans[chosen].u;
        out.selected = entries_[chosen].id;
        out.plan = std::move(plans[chosen]);
    }

    for (auto& e : entries_) {
        e.controller.apply(out.u);
    }
    if (best >= 0) {
        synchronize(static_cast<std::size_t>(best));
        last_selected_ = best;
    }
    selection_log_.push_back(out.selected);
    return out;
}

void ModelBank::synchronize(std::size_t selected) {
    if (selected >= entries_.size()) {
        throw DimensionError("synchronize: entry index out of range");
    }
    if (sync_ != SyncMode::StateCopy) {
        return;
    }
    const Eigen::VectorXd xhat = entries_[selected].controller.state();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (i != selected) {
            entries_[i].controller.set_state(xhat);
        }
    }
}

std::vector<double> ModelBank::selection_frequency() const {
    std::vector<double> freq(entries_.size(), 0.0);
    if (selection_log_.empty()) {
        return freq;
    }
    for (int id : selection_log_) {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].id == id) {
                freq[i] += 1.0;
            }
        }
    }
    for (auto& f : freq) {
        f /= static_cast<double>(selection_log_.size());
    }
    return freq;
}

MultiModelStep mm_control_step(ModelBank& bank, const Eigen::VectorXd& y, const Eigen::VectorXd& ref) {
    return bank.step(y, ref);
}

} // namespace mmpc
