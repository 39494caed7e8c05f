#pragma once
// Reason spaces, diagnosis vectors, the evidence extractor and two
// diagnosers: a deterministic statistical scorer and a language-model path
// driven through a ChatProvider.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/data.hpp"
#include "shml/error.hpp"
#include "shml/format.hpp"
#include "shml/llm.hpp"
#include "shml/models.hpp"
#include "shml/rng.hpp"

namespace shml {

// ---------------------------------------------------------------------------
// Reason space

enum class ReasonKind { FeatureCorrupted, ConceptDrift, NoIssue };

struct Reason {
  ReasonKind kind = ReasonKind::NoIssue;
  std::size_t feature = 0;  // only meaningful for FeatureCorrupted
  friend bool operator==(const Reason&, const Reason&) = default;
};

class ReasonSpace {
 public:
  ReasonSpace(std::vector<Reason> reasons, Schema schema) : reasons_(std::move(reasons)), schema_(std::move(schema)) {
    if (reasons_.empty()) throw ConfigError("reason space is empty");
    for (std::size_t i = 0; i < reasons_.size(); ++i) {
      if (reasons_[i].kind == ReasonKind::FeatureCorrupted && reasons_[i].feature >= schema_.size())
        throw ConfigError("reason refers to unknown feature");
      for (std::size_t k = 0; k < i; ++k)
        if (reasons_[k] == reasons_[i]) throw ConfigError("duplicate reason " + label(i));
    }
  }

  // One FeatureCorrupted per feature, then ConceptDrift, then NoIssue.
  static ReasonSpace canonical(const Schema& schema) {
    auto r = feature_reasons(schema);
    r.push_back({ReasonKind::ConceptDrift, 0});
    r.push_back({ReasonKind::NoIssue, 0});
    return ReasonSpace(std::move(r), schema);
  }

  static ReasonSpace features_only(const Schema& schema) { return ReasonSpace(feature_reasons(schema), schema); }

  std::size_t size() const noexcept { return reasons_.size(); }
  const Reason& operator[](std::size_t i) const { return reasons_[i]; }
  const std::vector<Reason>& reasons() const noexcept { return reasons_; }
  const Schema& schema() const noexcept { return schema_; }

  std::optional<std::size_t> find(const Reason& r) const {
    for (std::size_t i = 0; i < reasons_.size(); ++i)
      if (reasons_[i] == r) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> find_feature(std::size_t j) const { return find({ReasonKind::FeatureCorrupted, j}); }
  std::optional<std::size_t> find_kind(ReasonKind k) const { return find({k, 0}); }

  std::string label(std::size_t i) const {
    const auto& r = reasons_.at(i);
    switch (r.kind) {
      case ReasonKind::FeatureCorrupted: return "FeatureCorrupted(" + schema_.names.at(r.feature) + ")";
      case ReasonKind::ConceptDrift: return "ConceptDrift";
      case ReasonKind::NoIssue: return "NoIssue";
    }
    return "?";
  }

 private:
  static std::vector<Reason> feature_reasons(const Schema& schema) {
    std::vector<Reason> r;
    for (std::size_t j = 0; j < schema.size(); ++j) r.push_back({ReasonKind::FeatureCorrupted, j});
    return r;
  }

  std::vector<Reason> reasons_;
  Schema schema_;
};

// ---------------------------------------------------------------------------
// Diagnosis vectors

struct DiagnosisVector {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  void validate(double tol = 1e-9) const {
    if (probs.empty()) throw ConfigError("diagnosis vector is empty");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw ConfigError("diagnosis vector has a negative or NaN entry");
      total += p;
    }
    if (std::abs(total - 1.0) > tol) throw ConfigError("diagnosis vector sums to " + shortest(total));
  }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }

  static DiagnosisVector uniform(std::size_t n) { return {std::vector<double>(n, 1.0 / static_cast<double>(n))}; }
  static DiagnosisVector one_hot(std::size_t n, std::size_t i) {
    DiagnosisVector d{std::vector<double>(n, 0.0)};
    d.probs.at(i) = 1.0;
    return d;
  }

  // Scales nonnegative weights to sum 1; an all-zero vector becomes uniform.
  static DiagnosisVector normalized(std::vector<double> w) {
    double total = 0.0;
    for (double v : w) {
      if (!(v >= 0.0)) throw ConfigError("weights must be nonnegative");
      total += v;
    }
    if (w.empty()) throw ConfigError("diagnosis vector is empty");
    if (total <= 0.0) return uniform(w.size());
    for (auto& v : w) v /= total;
    return {std::move(w)};
  }
};

// Shannon entropy in nats, 0 ln 0 := 0.
inline double entropy(const DiagnosisVector& z) {
  double h = 0.0;
  for (double p : z.probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// KL(truth || est) in nats; est entries are floored at eps.
inline double kl_divergence(const DiagnosisVector& truth, const DiagnosisVector& est, double eps = 1e-6) {
  if (truth.size() != est.size()) throw DimensionError("KL over different reason spaces");
  double kl = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] > 0.0) kl += truth[i] * std::log(truth[i] / std::max(est[i], eps));
  return std::max(0.0, kl);
}

// Mean of sampled diagnosis vectors.
inline DiagnosisVector aggregate_mc(std::span<const DiagnosisVector> samples) {
  if (samples.empty()) throw ConfigError("aggregate_mc needs at least one sample");
  std::vector<double> acc(samples.front().size(), 0.0);
  for (const auto& s : samples) {
    if (s.size() != acc.size()) throw DimensionError("samples over different reason spaces");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s[i];
  }
  for (auto& v : acc) v /= static_cast<double>(samples.size());
  return DiagnosisVector::normalized(std::move(acc));
}

// Normalised counts of sampled reason indices.
inline DiagnosisVector aggregate_draws(std::span<const std::size_t> draws, std::size_t space_size) {
  if (draws.empty()) throw ConfigError("aggregate_draws needs at least one draw");
  std::vector<double> counts(space_size, 0.0);
  for (auto d : draws) counts.at(d) += 1.0;
  return DiagnosisVector::normalized(std::move(counts));
}

inline std::size_t sample_index(const std::vector<double>& probs, rng::Stream& rs) {
  const double u = rs.uniform();
  double c = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    c += probs[i];
    if (u < c) return i;
  }
  // rounding: fall back to the last entry with positive mass
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return probs.size() - 1;
}

// ---------------------------------------------------------------------------
// Evidence

struct ColumnStats {
  std::size_t count = 0;
  double mean = 0, std = 0, min = 0, q25 = 0, q50 = 0, q75 = 0, max = 0, mad = 0;
};

// Linear-interpolated quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ColumnStats column_stats(std::vector<double> v) {
  ColumnStats s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  s.q25 = quantile_sorted(v, 0.25);
  s.q50 = quantile_sorted(v, 0.5);
  s.q75 = quantile_sorted(v, 0.75);
  for (auto& x : v) x = std::abs(x - s.q50);
  std::sort(v.begin(), v.end());
  s.mad = quantile_sorted(v, 0.5);
  return s;
}

struct CovariateBins {
  std::vector<double> edges;  // interior edges, size bins - 1
  std::vector<std::optional<double>> acc_before, acc_after;
  std::vector<std::size_t> n_before, n_after;
};

struct EvidenceReport {
  std::vector<std::string> features;
  std::vector<ColumnStats> before, after;
  std::vector<double> lower, upper;  // plausible range from the before window
  std::vector<double> below_fraction, above_fraction, out_of_range;
  std::vector<double> scale_ratio;    // MAD after / MAD before
  std::vector<double> mean_shift_z;   // |mean shift| / (1.4826 MAD before)
  std::vector<CovariateBins> bins;
  std::size_t bin_count = 0;
  std::string bin_note;
  double accuracy_before = 0, accuracy_after = 0, accuracy_after_plausible = 0;
  std::size_t n_before = 0, n_after = 0, n_plausible = 0;
  std::optional<std::string> context;
};

struct EvidenceOptions {
  std::size_t bins = 10;
  double range_sigmas = 3.0;
  std::size_t min_rows_per_bin = 10;
};

inline double robust_scale(const ColumnStats& s) {
  if (s.mad > 0.0) return 1.4826 * s.mad;
  return s.std;
}

inline EvidenceReport extract_evidence(const LabeledBatch& before, const LabeledBatch& after, const Predictor& model,
                                       const Schema& schema, std::optional<std::string> context = std::nullopt,
                                       const EvidenceOptions& opt = {}) {
  if (before.empty() || after.empty()) throw ConfigError("evidence windows must be nonempty");
  if (before.X.cols != schema.size() || after.X.cols != schema.size())
    throw DimensionError("evidence windows do not match schema");
  const std::size_t d = schema.size();
  EvidenceReport ev;
  ev.features = schema.names;
  ev.context = std::move(context);
  ev.n_before = before.size();
  ev.n_after = after.size();

  const auto pred_before = model.predict(before.X);
  const auto pred_after = model.predict(after.X);
  auto acc = [](const std::vector<int>& p, const std::vector<int>& y, auto&& keep) {
    std::size_t n = 0, ok = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (keep(i)) {
        ++n;
        ok += p[i] == y[i];
      }
    return std::pair{n, n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0};
  };
  ev.accuracy_before = acc(pred_before, before.y, [](std::size_t) { return true; }).second;
  ev.accuracy_after = acc(pred_after, after.y, [](std::size_t) { return true; }).second;

  const std::size_t smallest = std::min(before.size(), after.size());
  ev.bin_count = std::clamp<std::size_t>(smallest / std::max<std::size_t>(1, opt.min_rows_per_bin), 1, opt.bins);
  if (ev.bin_count < opt.bins)
    ev.bin_note = "bins reduced from " + std::to_string(opt.bins) + " to " + std::to_string(ev.bin_count) + " (" +
                  std::to_string(smallest) + " rows)";

  std::vector<std::uint8_t> plausible(after.size(), 1);
  for (std::size_t j = 0; j < d; ++j) {
    auto col_b = before.X.column(j);
    auto col_a = after.X.column(j);
    ev.before.push_back(column_stats(col_b));
    ev.after.push_back(column_stats(col_a));
    const auto& sb = ev.before.back();
    const auto& sa = ev.after.back();
    ev.lower.push_back(sb.min - opt.range_sigmas * sb.std);
    ev.upper.push_back(sb.max + opt.range_sigmas * sb.std);
    std::size_t below = 0, above = 0;
    for (std::size_t i = 0; i < col_a.size(); ++i) {
      if (col_a[i] < ev.lower[j]) ++below;
      if (col_a[i] > ev.upper[j]) ++above;
      if (col_a[i] < ev.lower[j] || col_a[i] > ev.upper[j]) plausible[i] = 0;
    }
    const double n_a = static_cast<double>(col_a.size());
    ev.below_fraction.push_back(static_cast<double>(below) / n_a);
    ev.above_fraction.push_back(static_cast<double>(above) / n_a);
    ev.out_of_range.push_back(static_cast<double>(below + above) / n_a);

    const double mad_b = robust_scale(sb), mad_a = robust_scale(sa);
    ev.scale_ratio.push_back(mad_b > 0.0 ? (mad_a > 0.0 ? mad_a / mad_b : 0.0) : 1.0);
    ev.mean_shift_z.push_back(mad_b > 0.0 ? std::abs(sa.mean - sb.mean) / mad_b : 0.0);

    CovariateBins cb;
    std::sort(col_b.begin(), col_b.end());
    for (std::size_t b = 1; b < ev.bin_count; ++b)
      cb.edges.push_back(quantile_sorted(col_b, static_cast<double>(b) / static_cast<double>(ev.bin_count)));
    auto bin_of = [&](double x) {
      return static_cast<std::size_t>(std::upper_bound(cb.edges.begin(), cb.edges.end(), x) - cb.edges.begin());
    };
    auto fill = [&](const LabeledBatch& w, const std::vector<int>& pred, std::vector<std::optional<double>>& accs,
                    std::vector<std::size_t>& counts) {
      std::vector<std::size_t> ok(ev.bin_count, 0);
      counts.assign(ev.bin_count, 0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const auto b = bin_of(w.X(i, j));
        ++counts[b];
        ok[b] += pred[i] == w.y[i];
      }
      accs.assign(ev.bin_count, std::nullopt);
      for (std::size_t b = 0; b < ev.bin_count; ++b)
        if (counts[b]) accs[b] = static_cast<double>(ok[b]) / static_cast<double>(counts[b]);
    };
    fill(before, pred_before, cb.acc_before, cb.n_before);
    fill(after, pred_after, cb.acc_after, cb.n_after);
    ev.bins.push_back(std::move(cb));
  }
  const auto [n_ok, acc_ok] = acc(pred_after, after.y, [&](std::size_t i) { return plausible[i] != 0; });
  ev.n_plausible = n_ok;
  ev.accuracy_after_plausible = n_ok ? acc_ok : ev.accuracy_after;
  return ev;
}

// Fixed-width summary in the layout of a pandas describe() table.
inline std::string describe_table(const std::vector<std::string>& names, const std::vector<ColumnStats>& stats) {
  std::string out;
  std::vector<int> widths;
  char buf[64];
  out.append(6, ' ');
  for (const auto& n : names) {
    const int w = static_cast<int>(std::max<std::size_t>(n.size(), 12)) + 2;
    widths.push_back(w);
    std::snprintf(buf, sizeof buf, "%*s", w, n.c_str());
    out += buf;
  }
  out += '\n';
  const char* rows[] = {"count", "mean", "std", "min", "25%", "50%", "75%", "max"};
  for (int r = 0; r < 8; ++r) {
    std::snprintf(buf, sizeof buf, "%-6s", rows[r]);
    out += buf;
    for (std::size_t j = 0; j < stats.size(); ++j) {
      const auto& s = stats[j];
      const double v[] = {static_cast<double>(s.count), s.mean, s.std, s.min, s.q25, s.q50, s.q75, s.max};
      std::snprintf(buf, sizeof buf, "%*.4f", widths[j], v[r]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// One line per covariate: "<name>: [lo, hi) acc (n=count); ...".
inline std::string covariate_performance(const EvidenceReport& ev, bool after) {
  std::string out;
  char buf[96];
  for (std::size_t j = 0; j < ev.features.size(); ++j) {
    const auto& cb = ev.bins[j];
    out += ev.features[j] + ":";
    for (std::size_t b = 0; b < ev.bin_count; ++b) {
      const double lo = b == 0 ? -std::numeric_limits<double>::infinity() : cb.edges[b - 1];
      const double hi = b + 1 == ev.bin_count ? std::numeric_limits<double>::infinity() : cb.edges[b];
      const auto& a = after ? cb.acc_after[b] : cb.acc_before[b];
      const auto n = after ? cb.n_after[b] : cb.n_before[b];
      if (a)
        std::snprintf(buf, sizeof buf, " [%.4g, %.4g) %.3f (n=%zu)", lo, hi, *a, n);
      else
        std::snprintf(buf, sizeof buf, " [%.4g, %.4g) n/a (n=0)", lo, hi);
      out += buf;
      if (b + 1 < ev.bin_count) out += ';';
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json_value(const ColumnStats& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"q25", s.q25},
          {"q50", s.q50},     {"q75", s.q75},   {"max", s.max}, {"mad", s.mad}};
}

inline nlohmann::json to_json_value(const EvidenceReport& ev) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t j = 0; j < ev.features.size(); ++j) {
    nlohmann::json bins = nlohmann::json::array();
    const auto& cb = ev.bins[j];
    for (std::size_t b = 0; b < ev.bin_count; ++b) {
      auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
      bins.push_back({{"acc_before", opt(cb.acc_before[b])},
                      {"acc_after", opt(cb.acc_after[b])},
                      {"n_before", cb.n_before[b]},
                      {"n_after", cb.n_after[b]}});
    }
    cols.push_back({{"name", ev.features[j]},
                    {"before", to_json_value(ev.before[j])},
                    {"after", to_json_value(ev.after[j])},
                    {"lower", ev.lower[j]},
                    {"upper", ev.upper[j]},
                    {"below_fraction", ev.below_fraction[j]},
                    {"above_fraction", ev.above_fraction[j]},
                    {"out_of_range", ev.out_of_range[j]},
                    {"scale_ratio", ev.scale_ratio[j]},
                    {"mean_shift_z", ev.mean_shift_z[j]},
                    {"bin_edges", cb.edges},
                    {"bins", bins}});
  }
  return {{"columns", cols},
          {"bin_count", ev.bin_count},
          {"bin_note", ev.bin_note},
          {"accuracy_before", ev.accuracy_before},
          {"accuracy_after", ev.accuracy_after},
          {"accuracy_after_plausible", ev.accuracy_after_plausible},
          {"n_before", ev.n_before},
          {"n_after", ev.n_after},
          {"n_plausible", ev.n_plausible},
          {"context", ev.context ? nlohmann::json(*ev.context) : nlohmann::json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Statistical diagnoser

struct StatisticalConfig {
  double w_range = 2.0;   // out-of-range fraction
  double w_scale = 1.0;   // |ln scale ratio|
  double w_shift = 0.5;   // robust mean-shift z
  double scale_cap = 0.25;
  double shift_cap = 3.0;
  double temperature = 0.5;
  double no_issue_score = 0.3;
};

inline void to_json(nlohmann::json& j, const StatisticalConfig& c) {
  j = {{"w_range", c.w_range},         {"w_scale", c.w_scale},         {"w_shift", c.w_shift},
       {"scale_cap", c.scale_cap},     {"shift_cap", c.shift_cap},     {"temperature", c.temperature}, {"no_issue_score", c.no_issue_score}};
}
inline void from_json(const nlohmann::json& j, StatisticalConfig& c) {
  const StatisticalConfig d;
  c.w_range = j.value("w_range", d.w_range);
  c.w_scale = j.value("w_scale", d.w_scale);
  c.w_shift = j.value("w_shift", d.w_shift);
  c.scale_cap = j.value("scale_cap", d.scale_cap);
  c.shift_cap = j.value("shift_cap", d.shift_cap);
  c.temperature = j.value("temperature", d.temperature);
  c.no_issue_score = j.value("no_issue_score", d.no_issue_score);
}

inline double feature_score(const EvidenceReport& ev, std::size_t j, const StatisticalConfig& cfg) {
  const double ratio = ev.scale_ratio[j] > 0.0 ? ev.scale_ratio[j] : 1e-12;
  return cfg.w_range * ev.out_of_range[j] + cfg.w_scale * std::min(cfg.scale_cap, std::abs(std::log(ratio))) +
         cfg.w_shift * std::min(cfg.shift_cap, ev.mean_shift_z[j]);
}

inline DiagnosisVector diagnose_statistical(const EvidenceReport& ev, const ReasonSpace& space,
                                            const StatisticalConfig& cfg = {}) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  std::vector<double> scores(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& r = space[i];
    switch (r.kind) {
      case ReasonKind::FeatureCorrupted:
        if (r.feature >= ev.features.size()) throw DimensionError("reason space wider than evidence");
        scores[i] = feature_score(ev, r.feature, cfg);
        break;
      case ReasonKind::ConceptDrift:
        scores[i] = std::max(0.0, ev.accuracy_before - ev.accuracy_after_plausible);
        break;
      case ReasonKind::NoIssue:
        scores[i] = cfg.no_issue_score;
        break;
    }
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) w[i] = std::exp((scores[i] - top) / cfg.temperature);
  return DiagnosisVector::normalized(std::move(w));
}

// ---------------------------------------------------------------------------
// Language-model diagnoser

struct Hypothesis {
  std::vector<std::string> names;
  double probability = 0.0;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Parses lines "Hypothesis: [A, B]; Probability: 12.5%". Lines without both
// keys are ignored; a response with no such line is a ParseError.
inline std::vector<Hypothesis> parse_probability_listing(const std::string& text) {
  std::vector<Hypothesis> out;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string_view line(text.data() + line_start, line_end - line_start);
    const auto h = line.find("Hypothesis:");
    const auto p = line.find("Probability:");
    if (h != std::string_view::npos && p != std::string_view::npos && p > h) {
      Hypothesis hyp;
      auto names = trim(line.substr(h + 11, p - h - 11));
      if (!names.empty() && names.back() == ';') names.remove_suffix(1);
      names = trim(names);
      if (names.size() >= 2 && names.front() == '[' && names.back() == ']') names = names.substr(1, names.size() - 2);
      for (std::size_t pos = 0; pos <= names.size();) {
        auto comma = names.find(',', pos);
        if (comma == std::string_view::npos) comma = names.size();
        auto n = trim(names.substr(pos, comma - pos));
        while (!n.empty() && (n.front() == '\'' || n.front() == '"')) n.remove_prefix(1);
        while (!n.empty() && (n.back() == '\'' || n.back() == '"')) n.remove_suffix(1);
        if (!n.empty()) hyp.names.emplace_back(n);
        pos = comma + 1;
      }
      auto num = trim(line.substr(p + 12));
      std::size_t len = 0;
      while (len < num.size() && (std::isdigit(static_cast<unsigned char>(num[len])) || num[len] == '.')) ++len;
      const auto v = parse_double(num.substr(0, len));
      if (!v) throw ParseError("unreadable probability", text, line_start + p, line.size() - p);
      hyp.probability = *v;
      out.push_back(std::move(hyp));
    }
    line_start = line_end + 1;
  }
  if (out.empty()) throw ParseError("no 'Hypothesis: ...; Probability: ...' lines in response", text);
  return out;
}

// Confidence words used by the generic diagnosis listing.
inline std::optional<double> confidence_score(std::string_view word) {
  const auto w = lower(trim(word));
  // longest phrases first so "unsure" does not shadow "completely unsure"
  if (w.find("extremely confident") != std::string::npos) return 10.0;
  if (w.find("somewhat confident") != std::string::npos) return 6.0;
  if (w.find("completely unsure") != std::string::npos) return 2.0;
  if (w.find("confident") != std::string::npos) return 8.0;
  if (w.find("unsure") != std::string::npos) return 4.0;
  return std::nullopt;
}

// Parses "Covariate: X; ...; Strength of belief: <word>" lines into weighted
// single-feature hypotheses (weights unnormalised).
inline std::vector<Hypothesis> parse_confidence_listing(const std::string& text) {
  std::vector<Hypothesis> out;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string_view line(text.data() + line_start, line_end - line_start);
    const auto c = line.find("Covariate:");
    const auto s = line.find("Strength of belief:");
    if (c != std::string_view::npos && s != std::string_view::npos) {
      auto rest = line.substr(c + 10);
      const auto semi = rest.find(';');
      const auto name = trim(rest.substr(0, semi));
      const auto score = confidence_score(line.substr(s + 19));
      if (!score) throw ParseError("unknown confidence level", text, line_start + s, line.size() - s);
      out.push_back({{std::string(name)}, *score});
    }
    line_start = line_end + 1;
  }
  if (out.empty()) throw ParseError("no 'Covariate: ...; Strength of belief: ...' lines in response", text);
  return out;
}

// Maps hypotheses onto the reason space. A hypothesis naming several
// features splits its mass equally among them; names that are not features
// (and not "concept drift") send their share to NoIssue, or are dropped when
// the space has no NoIssue entry.
inline DiagnosisVector hypotheses_to_diagnosis(const std::vector<Hypothesis>& hyps, const ReasonSpace& space,
                                               std::vector<std::string>* warnings = nullptr) {
  std::vector<double> mass(space.size(), 0.0);
  const auto no_issue = space.find_kind(ReasonKind::NoIssue);
  const auto drift = space.find_kind(ReasonKind::ConceptDrift);
  for (const auto& h : hyps) {
    if (!(h.probability >= 0.0)) continue;
    if (h.names.empty()) {
      if (no_issue) mass[*no_issue] += h.probability;
      continue;
    }
    const double share = h.probability / static_cast<double>(h.names.size());
    for (const auto& name : h.names) {
      std::optional<std::size_t> target;
      if (auto j = space.schema().find(name)) target = space.find_feature(*j);
      const auto key = Schema::normalize(name);
      if (!target && drift && (key == "conceptdrift" || key == "conceptshift")) target = drift;
      if (!target && no_issue && (key == "noissue" || key == "none")) target = no_issue;
      if (!target) {
        if (warnings) warnings->push_back("hypothesis names unknown covariate '" + name + "'");
        target = no_issue;
      }
      if (target) mass[*target] += share;
    }
  }
  return DiagnosisVector::normalized(std::move(mass));
}

struct LlmDiagnoserConfig {
  std::size_t samples = 1;      // Monte Carlo chains aggregated into one vector
  std::size_t reflections = 2;  // probability passes per chain
  std::size_t hypotheses = 10;  // {n} in the combinations template
  double temperature = 0.7;
  double summary_temperature = 0.0;
};

inline void to_json(nlohmann::json& j, const LlmDiagnoserConfig& c) {
  j = {{"samples", c.samples},
       {"reflections", c.reflections},
       {"hypotheses", c.hypotheses},
       {"temperature", c.temperature},
       {"summary_temperature", c.summary_temperature}};
}
inline void from_json(const nlohmann::json& j, LlmDiagnoserConfig& c) {
  const LlmDiagnoserConfig d;
  c.samples = j.value("samples", d.samples);
  c.reflections = j.value("reflections", d.reflections);
  c.hypotheses = j.value("hypotheses", d.hypotheses);
  c.temperature = j.value("temperature", d.temperature);
  c.summary_temperature = j.value("summary_temperature", d.summary_temperature);
}

inline Bindings evidence_bindings(const EvidenceReport& ev) {
  return {{"x_before", describe_table(ev.features, ev.before)},
          {"x_after", describe_table(ev.features, ev.after)},
          {"context", ev.context.value_or("")},
          {"covariate_performance_before", covariate_performance(ev, false)},
          {"covariate_performance_after", covariate_performance(ev, true)}};
}

// Each chain: hypothesise covariate combinations, then ask for probabilities
// `reflections` times, feeding the previous listing back as the guesses.
inline DiagnosisVector diagnose_llm(const EvidenceReport& ev, const ReasonSpace& space, ChatProvider& provider,
                                    const LlmDiagnoserConfig& cfg = {}, std::vector<std::string>* warnings = nullptr) {
  if (cfg.samples < 1 || cfg.reflections < 1) throw ConfigError("llm diagnoser needs samples, reflections >= 1");
  auto bindings = evidence_bindings(ev);
  bindings["n"] = std::to_string(cfg.hypotheses);
  std::vector<DiagnosisVector> chains;
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    std::string guesses = provider.complete(
        {TemplateId::CovariateCombinations, render(TemplateId::CovariateCombinations, bindings), cfg.temperature});
    std::string listing;
    for (std::size_t r = 0; r < cfg.reflections; ++r) {
      bindings["covariate_guesses"] = guesses;
      listing = provider.complete({TemplateId::DiagnosisProbability, render(TemplateId::DiagnosisProbability, bindings),
                                   cfg.summary_temperature});
      guesses = listing;
    }
    chains.push_back(hypotheses_to_diagnosis(parse_probability_listing(listing), space, warnings));
  }
  return aggregate_mc(chains);
}

}  // namespace shml
