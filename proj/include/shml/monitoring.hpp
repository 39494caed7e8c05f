#pragma once
// DDM-style drift detector over a batch error stream.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string_view>

#include <nlohmann/json.hpp>

#include "shml/error.hpp"
#include "shml/json_enum.hpp"

namespace shml {

enum class MonitorStatus { InControl, Warning, Drift };

SHML_JSON_ENUM(MonitorStatus, {{MonitorStatus::InControl, "in_control"},
                                             {MonitorStatus::Warning, "warning"},
                                             {MonitorStatus::Drift, "drift"}})

inline std::string_view to_string(MonitorStatus s) {
  switch (s) {
    case MonitorStatus::InControl: return "in_control";
    case MonitorStatus::Warning: return "warning";
    case MonitorStatus::Drift: return "drift";
  }
  return "?";
}

struct MonitorConfig {
  double warn_mult = 2.0;
  double drift_mult = 3.0;
  double sensitivity = 1.0;  // lambda, scales both multipliers
  std::size_t warm_start = 3;
  std::size_t detection_window = 1;  // batches gathered after Drift before healing

  void validate() const {
    if (!(warn_mult > 0.0) || !(drift_mult >= warn_mult)) throw ConfigError("need drift_mult >= warn_mult > 0");
    if (!(sensitivity > 0.0)) throw ConfigError("sensitivity must be > 0");
    if (warm_start < 1) throw ConfigError("warm_start must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const MonitorConfig& c) {
  j = {{"warn_mult", c.warn_mult},   {"drift_mult", c.drift_mult},           {"sensitivity", c.sensitivity},
       {"warm_start", c.warm_start}, {"detection_window", c.detection_window}};
}
inline void from_json(const nlohmann::json& j, MonitorConfig& c) {
  const MonitorConfig d;
  c.warn_mult = j.value("warn_mult", d.warn_mult);
  c.drift_mult = j.value("drift_mult", d.drift_mult);
  c.sensitivity = j.value("sensitivity", d.sensitivity);
  c.warm_start = j.value("warm_start", d.warm_start);
  c.detection_window = j.value("detection_window", d.detection_window);
}

struct MonitorState {
  std::size_t n_updates = 0;
  double n_samples = 0.0;
  double errors = 0.0;
  double p = 0.0;
  double s = 0.0;
  double p_min = std::numeric_limits<double>::infinity();
  double s_min = std::numeric_limits<double>::infinity();
  MonitorStatus status = MonitorStatus::InControl;
  double score = 0.0;
  bool armed = false;  // reference carried over from a previous run, no warm-up
};

class DriftMonitor {
 public:
  explicit DriftMonitor(MonitorConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const MonitorConfig& config() const noexcept { return cfg_; }
  const MonitorState& state() const noexcept { return state_; }

  // Folds one batch of `batch_size` predictions with the given error rate.
  MonitorStatus update(double error_rate, std::size_t batch_size = 1) {
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw ConfigError("error rate outside [0,1]");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    auto& st = state_;
    ++st.n_updates;
    st.n_samples += static_cast<double>(batch_size);
    st.errors += error_rate * static_cast<double>(batch_size);
    st.p = std::clamp(st.errors / st.n_samples, 0.0, 1.0);
    st.s = std::sqrt(st.p * (1.0 - st.p) / st.n_samples);
    if (st.p + st.s < st.p_min + st.s_min) {
      st.p_min = st.p;
      st.s_min = st.s;
    }
    st.status = MonitorStatus::InControl;
    st.score = 0.0;
    if (!st.armed && st.n_updates < cfg_.warm_start) return st.status;

    const double excess = (st.p + st.s) - (st.p_min + st.s_min);
    const double drift_gap = cfg_.sensitivity * cfg_.drift_mult * st.s_min;
    if (excess > 0.0) st.score = drift_gap > 0.0 ? std::min(1.0, excess / drift_gap) : 1.0;
    if (st.p + st.s > st.p_min + drift_gap) {
      // the normalised excess is below 1 at the boundary itself; pin it
      st.status = MonitorStatus::Drift;
      st.score = 1.0;
    } else if (st.p + st.s > st.p_min + cfg_.sensitivity * cfg_.warn_mult * st.s_min)
      st.status = MonitorStatus::Warning;
    return st.status;
  }

  void reset() { state_ = MonitorState{}; }

  // Clears the running error but keeps (p_min, s_min), so later batches are
  // still judged against the old in-control level.
  void rearm() {
    MonitorState next;
    next.p_min = state_.p_min;
    next.s_min = state_.s_min;
    next.armed = std::isfinite(next.p_min);
    state_ = next;
  }

  // True when an error rate measured on n rows would still sit in the drift
  // region of the current reference.
  bool beyond_drift(double error_rate, std::size_t n) const {
    if (!std::isfinite(state_.p_min) || n == 0 || !std::isfinite(error_rate)) return false;
    const double p = state_.p_min;
    const double s = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    return error_rate > p + cfg_.sensitivity * cfg_.drift_mult * std::max(s, state_.s_min);
  }

  nlohmann::json log_line(std::size_t t) const {
    auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"t", t},
            {"p", state_.p},
            {"s", state_.s},
            {"p_min", finite(state_.p_min)},
            {"s_min", finite(state_.s_min)},
            {"status", state_.status},
            {"score", state_.score}};
  }

 private:
  MonitorConfig cfg_;
  MonitorState state_;
};

}  // namespace shml
