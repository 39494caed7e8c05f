// shml_cli: run pipelines, studies and baseline comparisons; replay logged events.
// Exit codes: 0 ok, 2 configuration error, 1 anything unexpected.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "shml/http_provider.hpp"
#include "shml/shml.hpp"

using namespace shml;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::string seeds;
  std::string llm_endpoint;
  std::string llm_model = ProviderConfig{}.model;
  std::string study;
  std::string events;
  int threads = -1;
};

nlohmann::json load_json(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

// "N" means seeds 1..N; "a,b,c" is an explicit list.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw ConfigError("bad --seeds value '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--seeds is empty");
  if (out.size() == 1 && text.find(',') == std::string::npos) {
    if (out[0] == 0) throw ConfigError("--seeds must be >= 1");
    return seed_range(out[0]);
  }
  return out;
}

// Preset (or default) config, patched by the --config file and the flags.
ExperimentConfig build_config(ExperimentConfig base, const Options& o) {
  nlohmann::json j = base;
  if (!o.config.empty()) j.merge_patch(load_json(o.config));
  ExperimentConfig cfg;
  try {
    cfg = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!o.seeds.empty()) cfg.seeds = parse_seeds(o.seeds);
  if (o.threads >= 0) cfg.threads = static_cast<std::size_t>(o.threads);
  if (!o.llm_endpoint.empty())
    for (auto& s : cfg.strategies)
      if (s.kind == StrategyKind::SelfHealing) s.healing.diagnoser = DiagnoserKind::Llm;
  cfg.validate();
  return cfg;
}

std::unique_ptr<ChatProvider> make_provider(const Options& o) {
  if (o.llm_endpoint.empty()) return nullptr;
  ProviderConfig pc;
  pc.endpoint = o.llm_endpoint;
  pc.model = o.llm_model;
  return std::make_unique<HttpChatProvider>(pc);
}

// Per-batch accuracy of every run, read back from the event log.
std::string accuracy_plot(const ExperimentResult& res) {
  LinePlot p;
  p.title = "accuracy per batch";
  p.x_label = "batch";
  p.y_label = "accuracy";
  std::size_t longest = 0;
  for (const auto& text : res.events) {
    std::istringstream in(text);
    std::string line;
    PlotSeries s;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.value("type", "");
      if (type == "run") s.name = j.value("strategy", "") + " seed " + std::to_string(j.value("seed", 0));
      if (type == "batch") s.y.push_back(j.at("accuracy").get<double>());
    }
    if (s.y.empty()) continue;
    longest = std::max(longest, s.y.size());
    p.series.push_back(std::move(s));
  }
  for (std::size_t t = 0; t < longest; ++t) p.x_ticks.push_back(t % 5 == 0 ? std::to_string(t) : "");
  return render_svg(p);
}

void print_table(const ExperimentResult& res, std::ostream& os) {
  const auto metrics = metric_names(res.config.mode);
  for (std::size_t ci = 0; ci < res.cells.size(); ++ci) {
    const auto& c = res.cells[ci];
    os << "k=" << c.k << " tau=" << shortest(c.tau) << " factor=" << shortest(c.factor)
       << " lambda=" << shortest(c.lambda);
    if (c.cap) os << " cap=" << c.cap;
    if (!c.shift) os << " no-shift";
    if (!c.strategy.empty()) os << ' ' << c.strategy;
    for (const auto& m : metrics) {
      if (m != "post_accuracy" && m != "recovery_time" && m != "kl") continue;
      const auto s = cell_summary(res, ci, m);
      os << "  " << m << ' ' << fixed(s.mean, 3) << " +/- " << fixed(s.std, 3);
    }
    os << '\n';
  }
  std::size_t failed = 0;
  for (const auto& r : res.records) failed += r.failed;
  if (failed) os << failed << " run(s) failed; see runs.csv\n";
}

ExperimentResult execute(const ExperimentConfig& cfg, const Options& o) {
  auto provider = make_provider(o);
  const auto t0 = std::chrono::steady_clock::now();
  auto res = run_experiment(cfg, provider.get());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_table(res, std::cout);
  std::cout << res.records.size() << " runs in " << fixed(secs, 1) << " s\n";
  return res;
}

int cmd_run(const Options& o) {
  ExperimentConfig base;
  base.study = "run";
  base.seeds = {1};
  base.strategies = {Strategy::make(StrategyKind::SelfHealing)};
  const auto cfg = build_config(base, o);
  if (cfg.mode != ExperimentMode::Pipeline || detail::expand_cells(cfg).size() != 1)
    throw ConfigError("run takes a single pipeline: one value per axis and one strategy (use study for grids)");
  const auto res = execute(cfg, o);
  write_outputs(res, o.out);
  write_text_file((fs::path(o.out) / "plots" / "accuracy.svg").string(), accuracy_plot(res));
  return 0;
}

int cmd_study(const Options& o) {
  const auto cfg = build_config(study_config(o.study), o);
  write_outputs(execute(cfg, o), o.out);
  return 0;
}

int cmd_bench(const Options& o) {
  auto base = study_config("I");
  base.study = "bench";
  const auto cfg = build_config(base, o);
  write_outputs(execute(cfg, o), o.out);
  return 0;
}

int cmd_replay(const Options& o) {
  const auto cfg_path = o.config.empty() ? (fs::path(o.events).parent_path() / "config.json").string() : o.config;
  ExperimentConfig cfg;
  try {
    cfg = load_json(cfg_path).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::string text;
  try {
    text = read_text_file(o.events);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto res = replay_events(text, cfg);
  print_table(res, std::cout);
  write_outputs(res, o.out, false);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-healing ML loop: pipelines, studies and replay"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config (patched over the preset)");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seeds", o.seeds, "N for seeds 1..N, or a comma list");
    sub->add_option("--llm-endpoint", o.llm_endpoint, "chat-completion URL; switches SelfHealing to the LLM diagnoser");
    sub->add_option("--llm-model", o.llm_model, "model name sent to the endpoint")->capture_default_str();
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  };
  auto* run = app.add_subcommand("run", "run a single pipeline");
  common(run);
  auto* study = app.add_subcommand("study", "run a study preset");
  common(study);
  study->add_option("--name", o.study, "study name")->required()->check(CLI::IsMember(study_names()));
  auto* bench = app.add_subcommand("bench", "compare every strategy on the corruption grid");
  common(bench);
  auto* replay = app.add_subcommand("replay", "recompute results from an events.jsonl");
  replay->add_option("--events", o.events, "events.jsonl written by a previous run")->required();
  replay->add_option("--config", o.config, "config.json of that run (default: next to the events file)");
  replay->add_option("--out", o.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (*run) return cmd_run(o);
    if (*study) return cmd_study(o);
    if (*bench) return cmd_bench(o);
    return cmd_replay(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
