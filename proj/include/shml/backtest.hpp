#pragma once
// Backtesting: the post-onset interval [t*, t'], its split into fit rows and
// a held-out evaluation window, and argmin selection over candidate actions.

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/adaptation.hpp"
#include "shml/data.hpp"
#include "shml/format.hpp"
#include "shml/models.hpp"

namespace shml {

struct BacktestConfig {
  std::size_t cap = 500;            // most recent rows scored
  std::size_t min_fit_rows = 100;   // below this the window is also the fit data
  bool hold_out = true;             // false = score in-sample on the whole interval
  bool refit = true;                // refit the winner on fit + scored rows before deploying

  void validate() const {
    if (cap < 1) throw ConfigError("backtest cap must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const BacktestConfig& c) {
  j = {{"cap", c.cap}, {"min_fit_rows", c.min_fit_rows}, {"hold_out", c.hold_out}, {"refit", c.refit}};
}
inline void from_json(const nlohmann::json& j, BacktestConfig& c) {
  const BacktestConfig d;
  c.cap = j.value("cap", d.cap);
  c.min_fit_rows = j.value("min_fit_rows", d.min_fit_rows);
  c.hold_out = j.value("hold_out", d.hold_out);
  c.refit = j.value("refit", d.refit);
  c.validate();
}

// Estimated onset: the first batch of the warning run that led to the drift,
// otherwise the `detection_window` most recent batches.
inline std::size_t estimate_onset(std::optional<std::size_t> warning, std::size_t detection,
                                  std::size_t detection_window) {
  if (warning && *warning <= detection) return *warning;
  const std::size_t span = std::max<std::size_t>(1, detection_window);
  return detection + 1 >= span ? detection + 1 - span : 0;
}

struct BacktestWindow {
  LabeledBatch data;               // scored rows
  std::size_t onset = 0;           // estimated t*, batch index
  std::size_t detection = 0;       // t', batch index
  std::size_t interval_rows = 0;   // rows in [t*, t']
  std::size_t fit_rows = 0;        // interval rows preceding the scored rows
  bool in_sample = false;          // scored rows were also fit rows
};

// Rows of stream batches [onset, detection], scored on the `cap` most recent.
// An empty interval falls back to the detection batch alone.
inline BacktestWindow build_window(std::span<const LabeledBatch> stream, std::optional<std::size_t> warning,
                                   std::size_t detection, std::size_t detection_window, const BacktestConfig& cfg) {
  cfg.validate();
  if (detection >= stream.size()) throw ConfigError("detection time beyond the stream");
  if (warning && *warning > detection) throw ConfigError("warning time after detection time");
  BacktestWindow w;
  w.onset = estimate_onset(warning, detection, detection_window);
  w.detection = detection;
  auto interval = concat(stream.subspan(w.onset, detection - w.onset + 1));
  if (interval.empty()) {
    w.onset = detection;
    interval = stream[detection];
  }
  w.interval_rows = interval.size();
  w.data = tail_rows(interval, cfg.cap);
  const std::size_t rest = interval.size() - w.data.size();
  if (cfg.hold_out && rest >= cfg.min_fit_rows) {
    w.fit_rows = rest;
  } else {
    w.fit_rows = interval.size();
    w.in_sample = true;
  }
  return w;
}

// Fit buffers matching a window: everything before the scored rows (or up to
// t' when in-sample), with the post-onset part marked as recent.
inline AdaptationBuffers fit_buffers(const LabeledBatch& prior, std::span<const LabeledBatch> stream,
                                     const BacktestWindow& w, std::size_t batch_size) {
  std::vector<LabeledBatch> parts;
  parts.push_back(prior);
  for (std::size_t t = 0; t <= w.detection; ++t) parts.push_back(stream[t]);
  auto all = concat(parts);
  if (!w.in_sample) all = slice_rows(all, 0, all.size() - w.data.size());
  return {std::move(all), w.fit_rows, batch_size};
}

// Buffers for refitting a selected action once the scored rows are no
// longer needed for evaluation: everything up to t', recent = whole interval.
inline AdaptationBuffers refit_buffers(const LabeledBatch& prior, std::span<const LabeledBatch> stream,
                                       const BacktestWindow& w, std::size_t batch_size) {
  std::vector<LabeledBatch> parts;
  parts.push_back(prior);
  for (std::size_t t = 0; t <= w.detection; ++t) parts.push_back(stream[t]);
  return {concat(parts), w.interval_rows, batch_size};
}

// The same action with explicit batch windows grown by `extra` batches, so a
// refit covers the rows that were held out for scoring.
inline Action widen(const Action& a, std::size_t extra) {
  return std::visit(
      [&](const auto& v) -> Action {
        using T = std::decay_t<decltype(v)>;
        T out = v;
        if constexpr (std::is_same_v<T, RetrainNew> || std::is_same_v<T, PartialUpdate> ||
                      std::is_same_v<T, AddEnsembleMember>) {
          out.window += extra;
        } else if constexpr (std::is_same_v<T, RemoveSubgroupRetrain>) {
          if (out.window) out.window += extra;
        }
        return out;
      },
      a);
}

struct ActionEvaluation {
  Action action;
  double risk = std::numeric_limits<double>::infinity();
  double accuracy = 0.0;
  bool feasible = false;
  std::string note;
};

struct Selection {
  std::size_t index = 0;  // into the evaluations
  Action action;
  PredictorPtr model;
  std::vector<ActionEvaluation> evaluations;

  const ActionEvaluation& chosen() const { return evaluations.at(index); }
};

// Applies every candidate on the buffers, scores it on the window under 0-1
// loss and returns the argmin. Ties go to the lower catalog entry (NoOp
// first), then list order. NoOp is scored even when not listed.
inline Selection select_best(const std::vector<Action>& candidates, const PredictorPtr& model,
                             const AdaptationBuffers& buffers, const LabeledBatch& window,
                             const ApplyOptions& opt = {}) {
  if (window.empty()) throw ConfigError("backtest window is empty");
  Selection sel;
  std::vector<PredictorPtr> models;
  std::vector<Action> list = candidates;
  if (std::find(list.begin(), list.end(), Action{NoOp{}}) == list.end()) list.insert(list.begin(), NoOp{});
  for (const auto& a : list) {
    ActionEvaluation ev;
    ev.action = a;
    try {
      auto res = apply(a, model, buffers, opt);
      ev.feasible = res.feasible && res.model;
      ev.note = res.note;
      if (ev.feasible) {
        ev.accuracy = accuracy(*res.model, window);
        ev.risk = 1.0 - ev.accuracy;
      }
      models.push_back(std::move(res.model));
    } catch (const std::exception& e) {
      ev.feasible = false;
      ev.note = e.what();
      models.push_back(nullptr);
    }
    sel.evaluations.push_back(std::move(ev));
  }
  std::size_t best = list.size();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& e = sel.evaluations[i];
    if (!e.feasible) continue;
    if (best == list.size()) {
      best = i;
      continue;
    }
    const auto& b = sel.evaluations[best];
    if (e.risk < b.risk || (e.risk == b.risk && e.action.index() < b.action.index())) best = i;
  }
  if (best == list.size()) {
    // nothing feasible, NoOp stands
    best = static_cast<std::size_t>(std::find(list.begin(), list.end(), Action{NoOp{}}) - list.begin());
    models[best] = model;
  }
  sel.index = best;
  sel.action = list[best];
  sel.model = models[best];
  return sel;
}

inline const ActionEvaluation* find_noop(const std::vector<ActionEvaluation>& evals) {
  for (const auto& e : evals)
    if (std::holds_alternative<NoOp>(e.action)) return &e;
  return nullptr;
}

// One CSV row per candidate: action JSON, risk, accuracy, feasible, note.
inline std::string evaluations_csv(const std::vector<ActionEvaluation>& evals, const Schema& schema) {
  std::string out = "action,risk,accuracy,feasible,note\n";
  for (const auto& e : evals) {
    out += csv_quote(action_json(e.action, schema).dump());
    out += ',';
    out += e.feasible ? fixed(e.risk, 6) : std::string("inf");
    out += ',';
    out += fixed(e.accuracy, 6);
    out += ',';
    out += e.feasible ? "true" : "false";
    out += ',';
    out += csv_quote(e.note);
    out += '\n';
  }
  return out;
}

inline nlohmann::json evaluation_json(const ActionEvaluation& e, const Schema& schema) {
  return {{"action", action_json(e.action, schema)},
          {"risk", e.feasible ? nlohmann::json(e.risk) : nlohmann::json(nullptr)},
          {"accuracy", e.accuracy},
          {"feasible", e.feasible},
          {"note", e.note}};
}

}  // namespace shml
