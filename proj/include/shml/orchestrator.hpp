#pragma once
// The streaming loop: predict each batch, monitor, and react to drift either
// with a fixed baseline reaction or with the full healing cycle (evidence,
// diagnosis, proposals, backtest, deploy).

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/adaptation.hpp"
#include "shml/backtest.hpp"
#include "shml/datagen.hpp"
#include "shml/diagnosis.hpp"
#include "shml/json_enum.hpp"
#include "shml/llm.hpp"
#include "shml/models.hpp"
#include "shml/monitoring.hpp"
#include "shml/rng.hpp"

namespace shml {

enum class StrategyKind { NoRetraining, PartialUpdating, NewModelTraining, EnsembleDDM, SelfHealing };
enum class DiagnoserKind { Statistical, Llm };

SHML_JSON_ENUM(StrategyKind, {{StrategyKind::NoRetraining, "NoRetraining"},
                                            {StrategyKind::PartialUpdating, "PartialUpdating"},
                                            {StrategyKind::NewModelTraining, "NewModelTraining"},
                                            {StrategyKind::EnsembleDDM, "EnsembleDDM"},
                                            {StrategyKind::SelfHealing, "SelfHealing"}})
SHML_JSON_ENUM(DiagnoserKind, {{DiagnoserKind::Statistical, "statistical"}, {DiagnoserKind::Llm, "llm"}})

// Component switches for the ablation. Off means: monitoring never triggers,
// diagnosis is uniform with no evidence-derived actions, the catalog is
// {NoOp}, and the first sampled action is deployed without a backtest.
struct Ablation {
  bool monitoring = true;
  bool diagnosis = true;
  bool actions = true;
  bool testing = true;
};

struct HealingConfig {
  DiagnoserKind diagnoser = DiagnoserKind::Statistical;
  PolicyConfig policy;
  BacktestConfig backtest;
  StatisticalConfig statistical;
  LlmDiagnoserConfig llm;
  bool llm_actions = false;          // add subgroup proposals from the language model
  std::size_t reference_rows = 3000;  // pre-onset rows used as the "before" evidence
  bool rearm = false;  // keep the monitor reference when a heal leaves the error in the drift region
  Ablation ablation;
};

struct Strategy {
  StrategyKind kind = StrategyKind::NoRetraining;
  std::size_t window = 4;  // PartialUpdating buffer, in batches
  HealingConfig healing;
  std::string label;       // overrides name() in results

  std::string name() const {
    if (!label.empty()) return label;
    return nlohmann::json(kind).get<std::string>();
  }

  void validate() const {
    if (kind == StrategyKind::PartialUpdating && window < 1) throw ConfigError("PartialUpdating window must be >= 1");
    if (kind == StrategyKind::SelfHealing) {
      healing.policy.validate();
      healing.backtest.validate();
      if (healing.reference_rows < 1) throw ConfigError("reference_rows must be >= 1");
    }
  }

  static Strategy make(StrategyKind k) {
    Strategy s;
    s.kind = k;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const Ablation& a) {
  j = {{"monitoring", a.monitoring}, {"diagnosis", a.diagnosis}, {"actions", a.actions}, {"testing", a.testing}};
}
inline void from_json(const nlohmann::json& j, Ablation& a) {
  a.monitoring = j.value("monitoring", true);
  a.diagnosis = j.value("diagnosis", true);
  a.actions = j.value("actions", true);
  a.testing = j.value("testing", true);
}

inline void to_json(nlohmann::json& j, const HealingConfig& c) {
  j = {{"diagnoser", c.diagnoser},       {"policy", c.policy},         {"backtest", c.backtest},
       {"statistical", c.statistical},   {"llm", c.llm},               {"llm_actions", c.llm_actions},
       {"reference_rows", c.reference_rows}, {"rearm", c.rearm},   {"ablation", c.ablation}};
}
inline void from_json(const nlohmann::json& j, HealingConfig& c) {
  const HealingConfig d;
  c.diagnoser = j.value("diagnoser", d.diagnoser);
  c.policy = j.value("policy", d.policy);
  c.backtest = j.value("backtest", d.backtest);
  c.statistical = j.value("statistical", d.statistical);
  c.llm = j.value("llm", d.llm);
  c.llm_actions = j.value("llm_actions", d.llm_actions);
  c.reference_rows = j.value("reference_rows", d.reference_rows);
  c.rearm = j.value("rearm", d.rearm);
  c.ablation = j.value("ablation", d.ablation);
}

inline void to_json(nlohmann::json& j, const Strategy& s) {
  j = {{"kind", s.kind}, {"window", s.window}, {"label", s.label}};
  if (s.kind == StrategyKind::SelfHealing) j["healing"] = s.healing;
}
inline void from_json(const nlohmann::json& j, Strategy& s) {
  s.kind = j.at("kind").get<StrategyKind>();
  s.window = j.value("window", std::size_t{4});
  s.label = j.value("label", std::string());
  s.healing = j.value("healing", HealingConfig{});
  s.validate();
}

// ---------------------------------------------------------------------------
// Results

struct HealEvent {
  std::size_t t_drift = 0;
  std::size_t t_heal = 0;
  std::size_t onset = 0;
  std::size_t window_rows = 0;
  std::size_t fit_rows = 0;
  bool in_sample = false;
  bool tested = true;
  std::vector<double> diagnosis;
  std::vector<ActionEvaluation> evaluations;  // tested runs only
  std::size_t chosen = 0;
  std::string deployed;
  std::string refit;  // action re-applied on the whole interval, empty if none
  double noop_risk = std::numeric_limits<double>::quiet_NaN();
  double deployed_risk = std::numeric_limits<double>::quiet_NaN();
  double reference_error = std::numeric_limits<double>::quiet_NaN();  // monitor p_min at drift time
  bool resolved = true;
  std::vector<std::string> warnings;
};

struct RunMetrics {
  double pre_level = 0.0;
  double post_accuracy = 0.0;
  double overall_accuracy = 0.0;
  double recovery_time = std::numeric_limits<double>::infinity();  // batches; inf = never
};

struct RunResult {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t shift_index = 0;
  std::vector<double> accuracy;
  std::vector<MonitorStatus> status;
  std::vector<std::size_t> drifts;
  std::vector<HealEvent> heals;
  std::size_t reactions = 0;  // baseline reactions to Drift
  std::vector<nlohmann::json> events;
  RunMetrics metrics;
};

// Recovery time is the first t >= t* whose accuracy is within delta of the
// pre-shift level, minus t*. Post-intervention accuracy averages t >= t*.
inline RunMetrics compute_metrics(const std::vector<double>& series, std::size_t t_star, double pre_level,
                                  double delta = 0.02) {
  if (t_star >= series.size()) throw ConfigError("series does not cover the shift onset");
  RunMetrics m;
  m.pre_level = pre_level;
  double post = 0.0, all = 0.0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    all += series[t];
    if (t < t_star) continue;
    post += series[t];
    if (std::isinf(m.recovery_time) && series[t] >= pre_level - delta) m.recovery_time = static_cast<double>(t - t_star);
  }
  m.post_accuracy = post / static_cast<double>(series.size() - t_star);
  m.overall_accuracy = all / static_cast<double>(series.size());
  return m;
}

inline nlohmann::json heal_json(const HealEvent& h, const ReasonSpace& space) {
  nlohmann::json diag = nlohmann::json::object();
  for (std::size_t i = 0; i < h.diagnosis.size(); ++i) diag[space.label(i)] = h.diagnosis[i];
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : h.evaluations) evals.push_back(evaluation_json(e, space.schema()));
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"type", "heal"},
          {"t_drift", h.t_drift},
          {"t", h.t_heal},
          {"onset", h.onset},
          {"window_rows", h.window_rows},
          {"fit_rows", h.fit_rows},
          {"in_sample", h.in_sample},
          {"tested", h.tested},
          {"diagnosis", diag},
          {"evaluations", evals},
          {"deployed", h.deployed},
          {"refit", h.refit},
          {"noop_risk", num(h.noop_risk)},
          {"deployed_risk", num(h.deployed_risk)},
          {"reference_error", num(h.reference_error)},
          {"resolved", h.resolved},
          {"warnings", h.warnings}};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace detail {

inline LabeledBatch before_reference(const DriftStream& s, std::size_t onset, std::size_t rows) {
  std::vector<LabeledBatch> parts{s.train};
  for (std::size_t t = 0; t < onset; ++t) parts.push_back(s.batches[t]);
  auto all = concat(parts);
  all.corruption_mask.reset();
  return tail_rows(all, rows);
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace detail

struct PipelineContext {
  ChatProvider* provider = nullptr;  // required for the llm diagnoser or llm actions
  std::size_t batch_size = 0;        // 0 = size of the first batch
};

// One healing cycle at t_heal for a drift flagged at t_drift.
inline HealEvent heal(const DriftStream& s, const HealingConfig& cfg, PredictorPtr& model, std::size_t t_drift,
                      std::size_t t_heal, std::optional<std::size_t> warning, std::uint64_t seed,
                      const PipelineContext& ctx) {
  const auto& ab = cfg.ablation;
  const std::size_t bs = ctx.batch_size ? ctx.batch_size : s.batches.front().size();
  HealEvent ev;
  ev.t_drift = t_drift;
  ev.t_heal = t_heal;
  ev.tested = ab.testing;

  BacktestConfig bt = cfg.backtest;
  if (!ab.testing) bt.hold_out = false;
  const std::span<const LabeledBatch> stream(s.batches.data(), t_heal + 1);
  const auto window = build_window(stream, warning, t_heal, t_heal - t_drift + 1, bt);
  ev.onset = window.onset;
  ev.window_rows = window.data.size();
  ev.fit_rows = window.fit_rows;
  ev.in_sample = window.in_sample;
  const auto buffers = fit_buffers(s.train, stream, window, bs);

  const auto space = ReasonSpace::canonical(s.schema);
  auto after = concat(stream.subspan(window.onset));
  after.corruption_mask.reset();
  const auto evidence =
      extract_evidence(detail::before_reference(s, window.onset, cfg.reference_rows), after, *model, s.schema);

  DiagnosisVector zeta = DiagnosisVector::uniform(space.size());
  if (ab.diagnosis) {
    if (cfg.diagnoser == DiagnoserKind::Llm) {
      if (!ctx.provider) throw ConfigError("llm diagnoser needs a provider");
      try {
        zeta = diagnose_llm(evidence, space, *ctx.provider, cfg.llm, &ev.warnings);
      } catch (const std::exception& e) {
        ev.warnings.push_back(std::string("llm diagnosis failed, using statistical: ") + e.what());
        zeta = diagnose_statistical(evidence, space, cfg.statistical);
      }
    } else {
      zeta = diagnose_statistical(evidence, space, cfg.statistical);
    }
  }
  ev.diagnosis = zeta.probs;

  std::vector<Action> candidates{NoOp{}};
  if (ab.actions) {
    PolicyConfig policy = cfg.policy;
    policy.instantiate_from_evidence = ab.diagnosis;
    ProposalContext pctx{std::max<std::size_t>(1, detail::ceil_div(window.fit_rows, bs)),
                               std::max<std::size_t>(1, detail::ceil_div(buffers.history.size(), bs)), 0};
    if (window.onset < t_drift && !window.in_sample) {
      const std::size_t since = (t_heal - t_drift + 1) * bs;
      if (since > window.data.size()) pctx.drift_batches = detail::ceil_div(since - window.data.size(), bs);
    }
    candidates = propose_actions(zeta, space, evidence, policy, pctx, rng::Stream(seed, "heal", t_heal));
    if (cfg.llm_actions && ctx.provider && ab.diagnosis) {
      try {
        for (auto& a : propose_actions_llm(zeta, space, evidence, *ctx.provider, {}, &ev.warnings))
          if (std::find(candidates.begin(), candidates.end(), a) == candidates.end()) candidates.push_back(std::move(a));
      } catch (const std::exception& e) {
        ev.warnings.push_back(std::string("llm proposals failed: ") + e.what());
      }
    }
  }

  if (ab.testing) {
    auto sel = select_best(candidates, model, buffers, window.data);
    ev.evaluations = sel.evaluations;
    ev.chosen = sel.index;
    ev.deployed = render(sel.action, s.schema);
    ev.deployed_risk = sel.chosen().risk;
    if (const auto* noop = find_noop(sel.evaluations)) ev.noop_risk = noop->risk;
    const bool refittable = !std::holds_alternative<NoOp>(sel.action) && !std::holds_alternative<DecorruptFeature>(sel.action);
    if (bt.refit && !window.in_sample && refittable) {
      const auto wider = widen(sel.action, detail::ceil_div(window.data.size(), bs));
      auto res = apply(wider, model, refit_buffers(s.train, stream, window, bs));
      if (res.feasible && res.model) {
        ev.refit = render(wider, s.schema);
        model = res.model;
      } else {
        ev.warnings.push_back("refit infeasible, deploying the evaluated model: " + res.note);
        model = sel.model;
      }
    } else {
      model = sel.model;
    }
  } else {
    // first sampled action, deployed unevaluated; risks below are for the log only
    const Action first = candidates.size() > 1 ? candidates[1] : Action{NoOp{}};
    auto res = apply(first, model, buffers);
    ev.noop_risk = 1.0 - accuracy(*model, window.data);
    if (res.feasible && res.model) {
      model = res.model;
      ev.deployed = render(first, s.schema);
    } else {
      ev.deployed = "NoOp";
      ev.warnings.push_back("first sampled action infeasible: " + res.note);
    }
    ev.deployed_risk = 1.0 - accuracy(*model, window.data);
  }
  return ev;
}

// GCC 11 reports std::optional locals below as maybe-uninitialized (false positive).
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wmaybe-uninitialized"
#endif
inline RunResult run_pipeline(const DriftStream& s, const Strategy& strategy, const MonitorConfig& monitor_cfg,
                              std::uint64_t seed, const PipelineContext& ctx = {}) {
  strategy.validate();
  monitor_cfg.validate();
  if (s.batches.empty()) throw ConfigError("stream has no batches");
  if (s.shift_index >= s.batches.size()) throw ConfigError("shift index beyond the stream");
  if (strategy.kind == StrategyKind::SelfHealing && strategy.healing.diagnoser == DiagnoserKind::Llm && !ctx.provider)
    throw ConfigError("llm diagnoser needs a provider");
  const std::size_t bs = ctx.batch_size ? ctx.batch_size : s.batches.front().size();

  RunResult r;
  r.strategy = strategy.name();
  r.seed = seed;
  r.shift_index = s.shift_index;
  DriftMonitor monitor(monitor_cfg);
  PredictorPtr model = fit_logistic(s.train);
  const auto space = ReasonSpace::canonical(s.schema);
  const bool healing = strategy.kind == StrategyKind::SelfHealing;
  const bool monitoring_on = !healing || strategy.healing.ablation.monitoring;

  constexpr std::size_t kNoWarning = std::numeric_limits<std::size_t>::max();
  std::size_t warning_start = kNoWarning;
  std::optional<std::size_t> pending;  // drift batch awaiting the detection window
  std::size_t episode_onset = kNoWarning;  // onset of a drift an earlier heal left unresolved

  for (std::size_t t = 0; t < s.batches.size(); ++t) {
    const auto& batch = s.batches[t];
    const double acc = accuracy(*model, batch);
    r.accuracy.push_back(acc);

    MonitorStatus st = MonitorStatus::InControl;
    if (!pending) {
      st = monitor.update(1.0 - acc, batch.size());
      if (!monitoring_on) st = MonitorStatus::InControl;
    }
    r.status.push_back(st);
    auto line = monitor.log_line(t);
    line["type"] = "batch";
    line["accuracy"] = acc;
    line["status"] = st;
    if (pending) line["gathering"] = true;
    r.events.push_back(std::move(line));

    if (st == MonitorStatus::Warning && warning_start == kNoWarning) warning_start = t;
    if (st == MonitorStatus::InControl && !pending) warning_start = kNoWarning;

    if (st == MonitorStatus::Drift) {
      r.drifts.push_back(t);
      r.events.push_back({{"type", "drift"}, {"t", t}});
      std::string reaction;
      switch (strategy.kind) {
        case StrategyKind::NoRetraining: reaction = "none"; break;
        case StrategyKind::PartialUpdating: reaction = "none (refits every batch)"; break;
        case StrategyKind::NewModelTraining:
          model = apply(RetrainNew{1}, model, {batch, 0, bs}).model;
          reaction = "RetrainNew(1)";
          break;
        case StrategyKind::EnsembleDDM:
          model = apply(AddEnsembleMember{1}, model, {batch, 0, bs}).model;
          reaction = "AddEnsembleMember(1)";
          break;
        case StrategyKind::SelfHealing: pending = t; break;
      }
      if (!healing) {
        ++r.reactions;
        r.events.push_back({{"type", "reaction"}, {"t", t}, {"action", reaction}});
        monitor.reset();
        warning_start = kNoWarning;
      }
    }

    if (pending && t - *pending >= monitor_cfg.detection_window) {
      HealEvent ev;
      try {
        const auto first = std::min(warning_start, episode_onset);
        const auto warned = first == kNoWarning ? std::nullopt : std::optional<std::size_t>(first);
        ev = heal(s, strategy.healing, model, *pending, t, warned, seed, ctx);
      } catch (const std::exception& e) {
        ev.t_drift = *pending;
        ev.t_heal = t;
        ev.deployed = "NoOp";
        ev.tested = strategy.healing.ablation.testing;
        ev.warnings.push_back(std::string("healing failed: ") + e.what());
      }
      ev.reference_error = monitor.state().p_min;
      ev.resolved = !monitor.beyond_drift(ev.deployed_risk, ev.window_rows);
      r.events.push_back(heal_json(ev, space));
      const bool rearm = strategy.healing.rearm && !ev.resolved;
      r.heals.push_back(std::move(ev));
      if (rearm) {
        monitor.rearm();
        episode_onset = std::min(episode_onset, r.heals.back().onset);
      } else {
        monitor.reset();
        episode_onset = kNoWarning;
      }
      warning_start = kNoWarning;
      pending.reset();
    }

    if (strategy.kind == StrategyKind::PartialUpdating) {
      const std::size_t first = t + 1 >= strategy.window ? t + 1 - strategy.window : 0;
      const auto buf = concat(std::span<const LabeledBatch>(s.batches.data() + first, t + 1 - first));
      model = apply(PartialUpdate{strategy.window}, model, {buf, 0, bs}).model;
    }
  }

  double pre = 0.0;
  for (std::size_t t = 0; t < s.shift_index; ++t) pre += r.accuracy[t];
  pre = s.shift_index ? pre / static_cast<double>(s.shift_index) : r.accuracy.front();
  r.metrics = compute_metrics(r.accuracy, s.shift_index, pre);
  return r;
}

#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic pop
#endif

// Events as JSON lines, prefixed by a header naming the run.
inline std::string events_jsonl(const RunResult& r, const nlohmann::json& header = nlohmann::json::object()) {
  nlohmann::json head = header;
  head["type"] = "run";
  head["strategy"] = r.strategy;
  head["seed"] = r.seed;
  std::string out = head.dump() + '\n';
  for (const auto& e : r.events) out += e.dump() + '\n';
  return out;
}

}  // namespace shml
