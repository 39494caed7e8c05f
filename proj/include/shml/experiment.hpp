#pragma once
// Experiment harness: a grid of scenarios x strategies x seeds, run in
// parallel and aggregated in a fixed order, plus the study presets.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/datagen.hpp"
#include "shml/diagnosis.hpp"
#include "shml/format.hpp"
#include "shml/json_enum.hpp"
#include "shml/orchestrator.hpp"
#include "shml/plot.hpp"

namespace shml {

// Pipeline runs every strategy on a stream; Diagnosis only scores the
// statistical diagnoser against the injected column.
enum class ExperimentMode { Pipeline, Diagnosis };
SHML_JSON_ENUM(ExperimentMode, {{ExperimentMode::Pipeline, "pipeline"}, {ExperimentMode::Diagnosis, "diagnosis"}})

struct ExperimentConfig {
  std::string study = "custom";
  ExperimentMode mode = ExperimentMode::Pipeline;
  std::vector<std::size_t> ks = {2};
  std::vector<double> taus = {0.05};
  std::vector<double> factors = {10.0};
  std::vector<double> lambdas = {1.0};  // monitor sensitivity
  std::vector<std::size_t> caps = {};   // backtest caps; empty keeps each strategy's own
  std::vector<bool> shifts = {true};    // false = concept unchanged (null stream)
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  MonitorConfig monitor;
  ScenarioSizes sizes;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const {
    if (ks.empty() || taus.empty() || factors.empty() || lambdas.empty() || shifts.empty())
      throw ConfigError("experiment grid has an empty axis");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (mode == ExperimentMode::Pipeline && strategies.empty()) throw ConfigError("experiment needs at least one strategy");
    for (const auto& s : strategies) s.validate();
    for (std::size_t i = 0; i < strategies.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (strategies[i].name() == strategies[j].name())
          throw ConfigError("duplicate strategy name '" + strategies[i].name() + "'");
    for (auto c : caps)
      if (c < 1) throw ConfigError("backtest caps must be >= 1");
    for (auto l : lambdas)
      if (!(l > 0.0)) throw ConfigError("lambda must be > 0");
    for (auto k : ks)
      if (k > diabetes_features().size()) throw ConfigError("k exceeds the number of features");
    if (sizes.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    monitor.validate();
  }
};

inline void to_json(nlohmann::json& j, const ScenarioSizes& s) {
  j = {{"n_pre", s.n_pre}, {"n_post", s.n_post}, {"batch_size", s.batch_size}};
}
inline void from_json(const nlohmann::json& j, ScenarioSizes& s) {
  const ScenarioSizes d;
  s.n_pre = j.value("n_pre", d.n_pre);
  s.n_post = j.value("n_post", d.n_post);
  s.batch_size = j.value("batch_size", d.batch_size);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"study", c.study},     {"mode", c.mode},       {"ks", c.ks},         {"taus", c.taus},
       {"factors", c.factors}, {"lambdas", c.lambdas}, {"caps", c.caps},     {"shifts", c.shifts},
       {"strategies", c.strategies}, {"seeds", c.seeds}, {"monitor", c.monitor}, {"sizes", c.sizes},
       {"threads", c.threads}};
}
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.study = j.value("study", d.study);
  c.mode = j.value("mode", d.mode);
  c.ks = j.value("ks", d.ks);
  c.taus = j.value("taus", d.taus);
  c.factors = j.value("factors", d.factors);
  c.lambdas = j.value("lambdas", d.lambdas);
  c.caps = j.value("caps", d.caps);
  c.shifts = j.value("shifts", d.shifts);
  c.strategies = j.value("strategies", d.strategies);
  c.seeds = j.value("seeds", d.seeds);
  c.monitor = j.value("monitor", d.monitor);
  c.sizes = j.value("sizes", d.sizes);
  c.threads = j.value("threads", d.threads);
  c.validate();
}

// One grid point. cap is 0 when the strategy keeps its own.
struct Cell {
  std::size_t k = 0;
  double tau = 0.0;
  double factor = 0.0;
  double lambda = 1.0;
  std::size_t cap = 0;
  bool shift = true;
  std::string strategy;

  nlohmann::json json() const {
    return {{"k", k}, {"tau", tau}, {"factor", factor}, {"lambda", lambda},
            {"cap", cap}, {"shift", shift}, {"strategy", strategy}};
  }
  static Cell from(const nlohmann::json& j) {
    Cell c;
    c.k = j.at("k").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.factor = j.at("factor").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.cap = j.at("cap").get<std::size_t>();
    c.shift = j.at("shift").get<bool>();
    c.strategy = j.at("strategy").get<std::string>();
    return c;
  }
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Outcome of one (cell, seed). Pipeline runs fill the accuracy metrics,
// diagnosis runs fill kl and p_true.
struct RunRecord {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  RunMetrics metrics;
  std::size_t post_batches = 0;
  std::size_t heals = 0;
  std::size_t drifts = 0;
  std::size_t safety_violations = 0;
  std::size_t tested_heals = 0;
  double kl = std::numeric_limits<double>::quiet_NaN();
  double p_true = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<Cell> cells;
  std::vector<RunRecord> records;     // cell-major, seeds in config order
  std::vector<std::string> events;    // JSON lines, same order as records
};

// ---------------------------------------------------------------------------
// Running

namespace detail {

inline std::vector<Cell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> out;
  const std::vector<std::size_t> caps = cfg.caps.empty() ? std::vector<std::size_t>{0} : cfg.caps;
  std::vector<std::string> names;
  if (cfg.mode == ExperimentMode::Diagnosis)
    names.push_back("StatisticalDiagnoser");
  else
    for (const auto& s : cfg.strategies) names.push_back(s.name());
  for (bool shift : cfg.shifts)
    for (auto k : cfg.ks)
      for (double tau : cfg.taus)
        for (double factor : cfg.factors)
          for (double lambda : cfg.lambdas)
            for (auto cap : caps)
              for (const auto& n : names) out.push_back({k, tau, factor, lambda, cap, shift, n});
  return out;
}

inline ScenarioSpec cell_scenario(const Cell& c, const ExperimentConfig& cfg, std::uint64_t seed) {
  return diabetes_scenario(c.k, c.tau, c.factor, seed, cfg.sizes, c.shift);
}

inline nlohmann::json run_header(const ExperimentConfig& cfg, const Cell& c, std::uint64_t seed) {
  auto h = c.json();
  h["study"] = cfg.study;
  h["seed"] = seed;
  return h;
}

inline std::pair<RunRecord, std::string> run_diagnosis_cell(const ExperimentConfig& cfg, const Cell& c,
                                                            std::uint64_t seed) {
  RunRecord rec;
  rec.seed = seed;
  const auto spec = cell_scenario(c, cfg, seed);
  const auto s = build_stream(spec, cfg.sizes.batch_size);
  const auto model = fit_logistic(s.train);
  const auto before = before_reference(s, s.shift_index, 3000);
  const std::size_t n_after = std::min<std::size_t>(2, s.batches.size() - s.shift_index);
  auto after = concat(std::span<const LabeledBatch>(s.batches.data() + s.shift_index, n_after));
  after.corruption_mask.reset();
  const auto space = ReasonSpace::features_only(s.schema);
  const auto zeta = diagnose_statistical(extract_evidence(before, after, *model, s.schema), space);
  std::vector<double> truth(space.size(), 0.0);
  if (spec.corruption)
    for (const auto& col : spec.corruption->columns) truth[*space.find_feature(s.schema.index_of(col))] = 1.0;
  const auto true_vec = DiagnosisVector::normalized(truth);
  rec.kl = kl_divergence(true_vec, zeta);
  rec.p_true = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] > 0) rec.p_true += zeta.probs[i];
  auto line = run_header(cfg, c, seed);
  line["type"] = "diagnosis";
  line["columns"] = spec.corruption ? spec.corruption->columns : std::vector<std::string>{};
  nlohmann::json z = nlohmann::json::object();
  for (std::size_t i = 0; i < space.size(); ++i) z[space.label(i)] = zeta.probs[i];
  line["diagnosis"] = z;
  line["kl"] = rec.kl;
  line["p_true"] = rec.p_true;
  return {rec, line.dump() + '\n'};
}

inline void summarize_run(RunRecord& rec, const RunResult& r) {
  rec.metrics = r.metrics;
  rec.post_batches = r.accuracy.size() - r.shift_index;
  rec.heals = r.heals.size();
  rec.drifts = r.drifts.size();
  for (const auto& h : r.heals) {
    if (!h.tested) continue;
    ++rec.tested_heals;
    if (h.deployed_risk > h.noop_risk) ++rec.safety_violations;
  }
}

inline std::pair<RunRecord, std::string> run_pipeline_cell(const ExperimentConfig& cfg, const Cell& c,
                                                           std::uint64_t seed, ChatProvider* provider) {
  RunRecord rec;
  rec.seed = seed;
  Strategy strategy;
  for (const auto& s : cfg.strategies)
    if (s.name() == c.strategy) strategy = s;
  if (c.cap) strategy.healing.backtest.cap = c.cap;
  MonitorConfig mon = cfg.monitor;
  mon.sensitivity = c.lambda;
  const auto stream = build_stream(cell_scenario(c, cfg, seed), cfg.sizes.batch_size);
  auto header = run_header(cfg, c, seed);
  header["shift_index"] = stream.shift_index;
  PipelineContext ctx;
  ctx.provider = provider;
  ctx.batch_size = cfg.sizes.batch_size;
  const auto r = run_pipeline(stream, strategy, mon, seed, ctx);
  summarize_run(rec, r);
  return {rec, events_jsonl(r, header)};
}

}  // namespace detail

// Runs the full cross product. Each (cell, seed) is independent; results are
// stored by index so the output order does not depend on scheduling. A run
// that throws is recorded as failed and the rest continue.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, ChatProvider* provider = nullptr) {
  cfg.validate();
  ExperimentResult out;
  out.config = cfg;
  out.cells = detail::expand_cells(cfg);
  const std::size_t n = out.cells.size() * cfg.seeds.size();
  out.records.resize(n);
  out.events.resize(n);

  auto work = [&](std::size_t i) {
    const std::size_t ci = i / cfg.seeds.size();
    const auto seed = cfg.seeds[i % cfg.seeds.size()];
    const auto& cell = out.cells[ci];
    try {
      auto [rec, ev] = cfg.mode == ExperimentMode::Diagnosis ? detail::run_diagnosis_cell(cfg, cell, seed)
                                                             : detail::run_pipeline_cell(cfg, cell, seed, provider);
      out.records[i] = std::move(rec);
      out.events[i] = std::move(ev);
    } catch (const std::exception& e) {
      out.records[i] = RunRecord{};
      out.records[i].seed = seed;
      out.records[i].failed = true;
      out.records[i].error = e.what();
      auto h = detail::run_header(cfg, cell, seed);
      h["type"] = "run";
      h["error"] = e.what();
      out.events[i] = h.dump() + '\n';
    }
    out.records[i].cell = ci;
  };

  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) work(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation and output

struct Summary {
  std::size_t n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

// Recovery time with never-recovered runs censored at the post-shift length,
// so the mean stays finite and still penalizes them.
inline double censored_recovery(const RunRecord& r) {
  return std::isinf(r.metrics.recovery_time) ? static_cast<double>(r.post_batches) : r.metrics.recovery_time;
}

inline std::vector<std::string> metric_names(ExperimentMode mode) {
  if (mode == ExperimentMode::Diagnosis) return {"kl", "p_true"};
  return {"post_accuracy", "overall_accuracy", "recovery_time", "recovered", "heals", "drifts", "safety_violations"};
}

inline std::vector<double> metric_values(const std::vector<const RunRecord*>& runs, const std::string& metric) {
  std::vector<double> v;
  for (const auto* r : runs) {
    if (r->failed) continue;
    if (metric == "kl") v.push_back(r->kl);
    else if (metric == "p_true") v.push_back(r->p_true);
    else if (metric == "post_accuracy") v.push_back(r->metrics.post_accuracy);
    else if (metric == "overall_accuracy") v.push_back(r->metrics.overall_accuracy);
    else if (metric == "recovery_time") v.push_back(censored_recovery(*r));
    else if (metric == "recovered") v.push_back(std::isinf(r->metrics.recovery_time) ? 0.0 : 1.0);
    else if (metric == "heals") v.push_back(static_cast<double>(r->heals));
    else if (metric == "drifts") v.push_back(static_cast<double>(r->drifts));
    else if (metric == "safety_violations") v.push_back(static_cast<double>(r->safety_violations));
  }
  return v;
}

inline std::vector<const RunRecord*> cell_runs(const ExperimentResult& res, std::size_t cell) {
  std::vector<const RunRecord*> out;
  for (const auto& r : res.records)
    if (r.cell == cell) out.push_back(&r);
  return out;
}

inline Summary cell_summary(const ExperimentResult& res, std::size_t cell, const std::string& metric) {
  return summarize(metric_values(cell_runs(res, cell), metric));
}

// Long format: one row per (cell, metric), six decimals.
inline std::string results_csv(const ExperimentResult& res) {
  std::string out = "study,k,tau,factor,lambda,cap,shift,strategy,metric,n,failures,mean,std\n";
  for (std::size_t ci = 0; ci < res.cells.size(); ++ci) {
    const auto& c = res.cells[ci];
    const auto runs = cell_runs(res, ci);
    std::size_t failures = 0;
    for (const auto* r : runs) failures += r->failed;
    for (const auto& m : metric_names(res.config.mode)) {
      const auto s = summarize(metric_values(runs, m));
      out += csv_quote(res.config.study) + ',' + std::to_string(c.k) + ',' + fixed(c.tau, 4) + ',' + fixed(c.factor, 4) +
             ',' + fixed(c.lambda, 4) + ',' + std::to_string(c.cap) + ',' + (c.shift ? "true" : "false") + ',' +
             csv_quote(c.strategy) + ',' + m + ',' + std::to_string(s.n) + ',' + std::to_string(failures) + ',' +
             fixed(s.mean, 6) + ',' + fixed(s.std, 6) + '\n';
    }
  }
  return out;
}

inline std::string runs_csv(const ExperimentResult& res) {
  std::string out =
      "study,k,tau,factor,lambda,cap,shift,strategy,seed,failed,post_accuracy,overall_accuracy,recovery_time,heals,"
      "drifts,safety_violations,kl,p_true,error\n";
  for (const auto& r : res.records) {
    const auto& c = res.cells[r.cell];
    out += csv_quote(res.config.study) + ',' + std::to_string(c.k) + ',' + fixed(c.tau, 4) + ',' + fixed(c.factor, 4) +
           ',' + fixed(c.lambda, 4) + ',' + std::to_string(c.cap) + ',' + (c.shift ? "true" : "false") + ',' +
           csv_quote(c.strategy) + ',' + std::to_string(r.seed) + ',' + (r.failed ? "true" : "false") + ',' +
           fixed(r.metrics.post_accuracy, 6) + ',' + fixed(r.metrics.overall_accuracy, 6) + ',' +
           fixed(r.metrics.recovery_time, 0) + ',' + std::to_string(r.heals) + ',' + std::to_string(r.drifts) + ',' +
           std::to_string(r.safety_violations) + ',' + fixed(r.kl, 6) + ',' + fixed(r.p_true, 6) + ',' +
           csv_quote(r.error) + '\n';
  }
  return out;
}

inline std::string events_text(const ExperimentResult& res) {
  std::string out;
  for (const auto& e : res.events) out += e;
  return out;
}

// Rebuilds records from an events.jsonl written by write_outputs. Batch
// accuracies are stored at full precision, so metrics come out bit-equal.
inline ExperimentResult replay_events(const std::string& jsonl, const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.config = cfg;
  std::istringstream in(jsonl);
  std::string line;
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t cur = kNone;  // index of the pipeline run being read
  std::vector<double> series;
  std::size_t shift_index = 0;
  std::vector<nlohmann::json> heal_lines;

  auto cell_index = [&](const nlohmann::json& j) {
    const auto c = Cell::from(j);
    for (std::size_t i = 0; i < res.cells.size(); ++i)
      if (res.cells[i] == c) return i;
    res.cells.push_back(c);
    return res.cells.size() - 1;
  };
  auto finish = [&] {
    if (cur == kNone || res.records[cur].failed) return;
    if (series.empty()) throw ConfigError("run without batch events in replay input");
    double pre = 0.0;
    for (std::size_t t = 0; t < shift_index; ++t) pre += series[t];
    pre = shift_index ? pre / static_cast<double>(shift_index) : series.front();
    res.records[cur].metrics = compute_metrics(series, shift_index, pre);
    res.records[cur].post_batches = series.size() - shift_index;
  };

  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError("events line " + std::to_string(lineno) + " is not JSON: " + e.what());
    }
    const auto type = j.value("type", std::string());
    if (type == "run" || type == "diagnosis") {
      finish();
      if (j.contains("study")) res.config.study = j["study"].get<std::string>();
      RunRecord rec;
      rec.cell = cell_index(j);
      rec.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("error")) {
        rec.failed = true;
        rec.error = j["error"].get<std::string>();
      }
      if (type == "diagnosis") {
        res.config.mode = ExperimentMode::Diagnosis;
        rec.kl = j.at("kl").get<double>();
        rec.p_true = j.at("p_true").get<double>();
      }
      res.records.push_back(rec);
      cur = type == "run" ? res.records.size() - 1 : kNone;
      series.clear();
      shift_index = j.value("shift_index", std::size_t{0});
    } else if (cur == kNone) {
      continue;
    } else if (type == "batch") {
      series.push_back(j.at("accuracy").get<double>());
    } else if (type == "drift") {
      ++res.records[cur].drifts;
    } else if (type == "heal") {
      auto& rec = res.records[cur];
      ++rec.heals;
      if (j.at("tested").get<bool>()) {
        ++rec.tested_heals;
        if (!j["deployed_risk"].is_null() && !j["noop_risk"].is_null() &&
            j["deployed_risk"].get<double>() > j["noop_risk"].get<double>())
          ++rec.safety_violations;
      }
    }
  }
  finish();
  return res;
}

// ---------------------------------------------------------------------------
// Plots

// One chart per metric of interest: x = the grid axis that varies most, one
// series per remaining combination.
inline std::vector<std::pair<std::string, std::string>> study_plots(const ExperimentResult& res) {
  std::vector<std::pair<std::string, std::string>> out;
  if (res.cells.empty()) return out;
  struct Axis {
    std::string name;
    std::function<std::string(const Cell&)> key;
  };
  const std::vector<Axis> axes = {
      {"k", [](const Cell& c) { return std::to_string(c.k); }},
      {"tau", [](const Cell& c) { return shortest(c.tau); }},
      {"outlier factor", [](const Cell& c) { return shortest(c.factor); }},
      {"lambda", [](const Cell& c) { return shortest(c.lambda); }},
      {"backtest cap", [](const Cell& c) { return std::to_string(c.cap); }},
      {"shift", [](const Cell& c) { return std::string(c.shift ? "shift" : "no shift"); }},
      {"strategy", [](const Cell& c) { return c.strategy; }},
  };
  auto distinct = [&](const Axis& a) {
    std::vector<std::string> v;
    for (const auto& c : res.cells) {
      auto k = a.key(c);
      if (std::find(v.begin(), v.end(), k) == v.end()) v.push_back(k);
    }
    return v;
  };
  // x axis: the first numeric axis with more than one value, else strategy
  std::size_t x = axes.size() - 1;
  for (std::size_t a = 0; a + 1 < axes.size(); ++a)
    if (distinct(axes[a]).size() > 1) {
      x = a;
      break;
    }
  const auto ticks = distinct(axes[x]);
  const std::vector<std::string> metrics = res.config.mode == ExperimentMode::Diagnosis
                                               ? std::vector<std::string>{"kl"}
                                               : std::vector<std::string>{"post_accuracy", "recovery_time"};
  for (const auto& metric : metrics) {
    LinePlot p;
    p.title = "study " + res.config.study + ": " + metric;
    p.x_label = axes[x].name;
    p.y_label = metric;
    p.x_ticks = ticks;
    std::map<std::string, std::size_t> index;
    for (std::size_t ci = 0; ci < res.cells.size(); ++ci) {
      const auto& c = res.cells[ci];
      std::string name;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        if (a == x || distinct(axes[a]).size() < 2) continue;
        if (!name.empty()) name += ", ";
        name += axes[a].name == "strategy" ? axes[a].key(c) : axes[a].name + "=" + axes[a].key(c);
      }
      if (name.empty()) name = metric;
      auto it = index.find(name);
      if (it == index.end()) {
        it = index.emplace(name, p.series.size()).first;
        p.series.push_back({name, std::vector<double>(ticks.size(), std::numeric_limits<double>::quiet_NaN())});
      }
      const auto pos = std::find(ticks.begin(), ticks.end(), axes[x].key(c)) - ticks.begin();
      p.series[it->second].y[static_cast<std::size_t>(pos)] = cell_summary(res, ci, metric).mean;
    }
    out.emplace_back("study_" + res.config.study + "_" + metric + ".svg", render_svg(p));
  }
  return out;
}

// results.csv, runs.csv, events.jsonl, config.json and plots/*.svg under dir.
inline void write_outputs(const ExperimentResult& res, const std::string& dir, bool with_events = true) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "plots");
  write_text_file((fs::path(dir) / "results.csv").string(), results_csv(res));
  write_text_file((fs::path(dir) / "runs.csv").string(), runs_csv(res));
  write_text_file((fs::path(dir) / "config.json").string(), nlohmann::json(res.config).dump(2) + '\n');
  if (with_events) write_text_file((fs::path(dir) / "events.jsonl").string(), events_text(res));
  for (const auto& [name, svg] : study_plots(res)) write_text_file((fs::path(dir) / "plots" / name).string(), svg);
}

// ---------------------------------------------------------------------------
// Study presets

inline std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> v;
  for (std::uint64_t s = 1; s <= n; ++s) v.push_back(s);
  return v;
}

inline Strategy labeled(StrategyKind kind, std::string label) {
  auto s = Strategy::make(kind);
  s.label = std::move(label);
  return s;
}

inline std::vector<Strategy> all_strategies() {
  return {Strategy::make(StrategyKind::NoRetraining), Strategy::make(StrategyKind::PartialUpdating),
          Strategy::make(StrategyKind::NewModelTraining), Strategy::make(StrategyKind::EnsembleDDM),
          Strategy::make(StrategyKind::SelfHealing)};
}

inline const std::vector<std::string>& study_names() {
  static const std::vector<std::string> names = {"I", "III", "IV", "V", "VI", "ablation"};
  return names;
}

inline ExperimentConfig study_config(const std::string& name) {
  ExperimentConfig c;
  c.study = name;
  if (name == "I") {
    // accuracy upon an intervention across the number of corrupted columns
    c.ks = {2, 4, 6};
    c.strategies = all_strategies();
    c.seeds = seed_range(5);
  } else if (name == "III") {
    // detection threshold sweep; the k=0 no-shift cells are the null stream
    c.ks = {0, 4};
    c.lambdas = {0.5, 1.0, 2.0, 3.0};
    c.shifts = {true, false};
    c.strategies = {Strategy::make(StrategyKind::NoRetraining), Strategy::make(StrategyKind::NewModelTraining),
                    Strategy::make(StrategyKind::SelfHealing)};
    c.seeds = seed_range(10);
  } else if (name == "IV") {
    c.mode = ExperimentMode::Diagnosis;
    c.ks = {1};
    c.taus = {0.2};
    c.factors = {2.0, 5.0, 10.0, 50.0};
    c.shifts = {false};
    c.seeds = seed_range(5);
  } else if (name == "V") {
    c.ks = {4};
    c.caps = {50, 200, 1000};
    c.monitor.detection_window = 4;
    c.strategies = {Strategy::make(StrategyKind::SelfHealing)};
    c.seeds = seed_range(20);
  } else if (name == "VI") {
    auto without = labeled(StrategyKind::SelfHealing, "SelfHealing-no-backtest");
    without.healing.ablation.testing = false;
    c.ks = {4};
    c.strategies = {labeled(StrategyKind::SelfHealing, "SelfHealing-backtest"), without};
    c.seeds = seed_range(10);
  } else if (name == "ablation") {
    auto off = [](std::string label, bool Ablation::*flag) {
      auto s = labeled(StrategyKind::SelfHealing, std::move(label));
      s.healing.ablation.*flag = false;
      return s;
    };
    c.ks = {4};
    c.strategies = {labeled(StrategyKind::SelfHealing, "full"),
                    off("no-monitoring", &Ablation::monitoring),
                    off("no-diagnosis", &Ablation::diagnosis),
                    off("no-actions", &Ablation::actions),
                    off("no-testing", &Ablation::testing),
                    Strategy::make(StrategyKind::NoRetraining)};
    c.seeds = seed_range(10);
  } else {
    throw ConfigError("unknown study '" + name + "' (expected I, III, IV, V, VI or ablation)");
  }
  return c;
}

// Finds the cell matching the predicate; throws if absent.
template <class F>
inline std::size_t find_cell(const ExperimentResult& res, F&& pred) {
  for (std::size_t i = 0; i < res.cells.size(); ++i)
    if (pred(res.cells[i])) return i;
  throw ConfigError("no matching cell in study " + res.config.study);
}

}  // namespace shml
