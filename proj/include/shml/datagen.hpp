#pragma once
// Synthetic drifting stream: Gaussian covariates, a logistic data generating
// process whose coefficients change abruptly at a shift index, and optional
// multiplicative corruption of selected columns after the shift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/data.hpp"
#include "shml/error.hpp"
#include "shml/format.hpp"
#include "shml/json_enum.hpp"
#include "shml/rng.hpp"

namespace shml {

struct FeatureSpec {
  std::string name;
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// logit = intercept + coefficients . x + eps,  eps ~ N(0, noise_std^2)
struct DGPParams {
  double intercept = 0.0;
  std::vector<double> coefficients;
  double noise_std = 0.0;
  friend bool operator==(const DGPParams&, const DGPParams&) = default;
};

enum class CorruptionMode { Multiply, ScaleColumn };

struct CorruptionSpec {
  std::vector<std::string> columns;
  double fraction = 0.0;  // tau, per selected column (Multiply mode)
  double outlier_factor = 10.0;
  CorruptionMode mode = CorruptionMode::Multiply;
  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

// Bernoulli: y ~ Bernoulli(sigmoid(logit)). Threshold: y = 1[logit > 0].
enum class LabelMode { Bernoulli, Threshold };

struct ScenarioSpec {
  std::vector<FeatureSpec> features;
  DGPParams pre;
  DGPParams post;
  std::size_t n_pre = 10000;
  std::size_t n_post = 10000;
  std::optional<CorruptionSpec> corruption;
  double split_fraction = 0.7;
  std::uint64_t seed = 42;
  LabelMode label_mode = LabelMode::Bernoulli;

  Schema schema() const {
    Schema s;
    for (const auto& f : features) s.names.push_back(f.name);
    return s;
  }

  void validate() const {
    if (features.empty()) throw ConfigError("scenario has no features");
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (!(features[i].std > 0.0)) throw ConfigError("feature '" + features[i].name + "' needs std > 0");
      for (std::size_t j = 0; j < i; ++j)
        if (features[j].name == features[i].name) throw ConfigError("duplicate feature '" + features[i].name + "'");
    }
    for (const auto* p : {&pre, &post}) {
      if (p->coefficients.size() != features.size())
        throw DimensionError("DGP has " + std::to_string(p->coefficients.size()) + " coefficients for " +
                             std::to_string(features.size()) + " features");
      if (p->noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    }
    if (n_pre < 1 || n_post < 1) throw ConfigError("n_pre and n_post must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
    if (static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(n_pre))) < 1)
      throw ConfigError("split leaves no training rows");
    if (corruption) {
      const Schema s = schema();
      for (const auto& c : corruption->columns) s.index_of(c);
      if (corruption->fraction < 0.0 || corruption->fraction > 1.0) throw ConfigError("corruption fraction outside [0,1]");
      if (!(corruption->outlier_factor > 0.0)) throw ConfigError("outlier_factor must be > 0");
    }
  }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Column j is drawn from its own sub-stream, so adding a feature never changes
// the values of the others.
inline Matrix generate_features(std::size_t n, const std::vector<FeatureSpec>& specs, std::uint64_t seed,
                                std::string_view stream = "features") {
  if (n < 1) throw ConfigError("generate_features needs n >= 1");
  Matrix X(n, specs.size());
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (!(specs[j].std > 0.0)) throw ConfigError("feature '" + specs[j].name + "' needs std > 0");
    rng::Stream rs(seed, stream, j + 1);
    for (std::size_t i = 0; i < n; ++i) X(i, j) = rs.normal(specs[j].mean, specs[j].std);
  }
  return X;
}

inline std::vector<int> generate_labels(const Matrix& X, const DGPParams& dgp, std::uint64_t seed,
                                        LabelMode mode = LabelMode::Bernoulli, std::string_view stream = "labels") {
  if (X.cols != dgp.coefficients.size())
    throw DimensionError("X has " + std::to_string(X.cols) + " columns, DGP has " +
                         std::to_string(dgp.coefficients.size()) + " coefficients");
  rng::Stream noise(seed, stream, 1);
  rng::Stream draw(seed, stream, 2);
  std::vector<int> y(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double logit = dgp.intercept;
    const auto row = X.row(i);
    for (std::size_t j = 0; j < X.cols; ++j) logit += dgp.coefficients[j] * row[j];
    if (dgp.noise_std > 0.0) logit += dgp.noise_std * noise.normal();
    y[i] = mode == LabelMode::Threshold ? (logit > 0.0 ? 1 : 0) : (draw.bernoulli(sigmoid(logit)) ? 1 : 0);
  }
  return y;
}

// Multiply: per selected column, floor(fraction * n) entries chosen without
// replacement are multiplied by outlier_factor. ScaleColumn: every entry of
// the selected columns is multiplied. Subsets are independent across columns.
inline LabeledBatch corrupt(const LabeledBatch& batch, const CorruptionSpec& spec, const Schema& schema,
                           std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  if (spec.fraction < 0.0 || spec.fraction > 1.0) throw ConfigError("corruption fraction outside [0,1]");
  if (!(spec.outlier_factor > 0.0)) throw ConfigError("outlier_factor must be > 0");
  std::vector<std::size_t> cols;
  for (const auto& name : spec.columns) cols.push_back(schema.index_of(name));
  if (schema.size() != batch.X.cols) throw DimensionError("schema width does not match batch");

  LabeledBatch out = batch;
  const std::size_t n = out.size();
  const std::size_t d = out.X.cols;
  if (!out.corruption_mask) out.corruption_mask.emplace(n * d, 0);
  auto& mask = *out.corruption_mask;

  if (cols.empty()) {
    if (spec.fraction > 0.0 && warnings) warnings->push_back("corruption requested with an empty column set; no-op");
    return out;
  }
  if (spec.mode == CorruptionMode::ScaleColumn) {
    for (std::size_t c : cols)
      for (std::size_t i = 0; i < n; ++i) {
        out.X(i, c) *= spec.outlier_factor;
        mask[i * d + c] = 1;
      }
    return out;
  }

  const auto count = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t c : cols) {
    rng::Stream rs(seed, "corruption.rows", c + 1);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rs.below(n - i));
      std::swap(order[i], order[j]);
      const std::size_t r = order[i];
      out.X(r, c) *= spec.outlier_factor;
      mask[r * d + c] = 1;
    }
  }
  return out;
}

// Training split plus the ordered test stream. Batches [0, shift_index) are
// pre-shift; the batch at shift_index is the first one containing post-shift
// rows (it is mixed when the pre-test row count is not a batch multiple).
struct DriftStream {
  Schema schema;
  LabeledBatch train;
  std::vector<LabeledBatch> batches;
  std::size_t shift_index = 0;
  std::size_t pre_test_rows = 0;
};

inline DriftStream build_stream(const ScenarioSpec& scenario, std::size_t batch_size) {
  scenario.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::uint64_t seed = scenario.seed;

  LabeledBatch pre;
  pre.X = generate_features(scenario.n_pre, scenario.features, seed, "scenario.pre.features");
  pre.y = generate_labels(pre.X, scenario.pre, seed, scenario.label_mode, "scenario.pre.labels");
  LabeledBatch post;
  post.X = generate_features(scenario.n_post, scenario.features, seed, "scenario.post.features");
  post.y = generate_labels(post.X, scenario.post, seed, scenario.label_mode, "scenario.post.labels");

  DriftStream s;
  s.schema = scenario.schema();
  if (scenario.corruption) post = corrupt(post, *scenario.corruption, s.schema, seed);

  const auto n_train = static_cast<std::size_t>(std::floor(scenario.split_fraction * static_cast<double>(scenario.n_pre)));
  s.train = slice_rows(pre, 0, n_train);
  s.train.corruption_mask.reset();
  LabeledBatch pre_test = slice_rows(pre, n_train, scenario.n_pre);
  pre_test.corruption_mask.emplace(pre_test.X.values.size(), 0);
  if (!post.corruption_mask) post.corruption_mask.emplace(post.X.values.size(), 0);
  s.pre_test_rows = pre_test.size();

  const std::vector<LabeledBatch> parts{pre_test, post};
  LabeledBatch all = concat(parts);
  if (batch_size > all.size())
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds stream length " + std::to_string(all.size()));
  for (std::size_t begin = 0, t = 0; begin < all.size(); begin += batch_size, ++t) {
    LabeledBatch b = slice_rows(all, begin, std::min(all.size(), begin + batch_size));
    b.t = t;
    s.batches.push_back(std::move(b));
  }
  s.shift_index = s.pre_test_rows / batch_size;
  return s;
}

// ---------------------------------------------------------------------------
// Diabetes scenario presets.

inline std::vector<FeatureSpec> diabetes_features() {
  return {{"HbA1c", 5.7, 0.5},     {"FastingGlucose", 100.0, 15.0}, {"Age", 50.0, 12.0},
          {"BMI", 25.0, 4.0},      {"BloodPressure", 120.0, 15.0},  {"Cholesterol", 200.0, 40.0},
          {"Insulin", 85.0, 45.0}, {"PhysicalActivity", 3.0, 1.0}};
}

inline DGPParams diabetes_pre_dgp() {
  return {0.0, {0.3, 0.0075, -0.01, 0.05, 0.04, -0.03, -0.02, -0.1}, 0.2};
}

inline DGPParams diabetes_post_dgp() {
  return {0.0, {-0.3, -0.0075, 0.2, -0.05, -0.015, -0.001, 0.02, -2.0}, 0.2};
}

struct ScenarioSizes {
  std::size_t n_pre = 10000;
  std::size_t n_post = 10000;
  std::size_t batch_size = 500;
};

// k distinct columns chosen uniformly from the seed.
inline std::vector<std::string> choose_columns(const std::vector<FeatureSpec>& features, std::size_t k,
                                               std::uint64_t seed) {
  if (k > features.size()) throw ConfigError("cannot corrupt more columns than features");
  std::vector<std::size_t> idx(features.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng::Stream rs(seed, "scenario.columns");
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rs.below(idx.size() - i))]);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(features[idx[i]].name);
  return out;
}

// The two-phase diabetes stream with k corrupted columns. Outcomes are the
// sign of the noisy logit (see README, "Label mode").
inline ScenarioSpec diabetes_scenario(std::size_t k, double tau, double outlier_factor, std::uint64_t seed,
                                      const ScenarioSizes& sizes = {}, bool shift = true) {
  ScenarioSpec s;
  s.features = diabetes_features();
  s.pre = diabetes_pre_dgp();
  s.post = shift ? diabetes_post_dgp() : diabetes_pre_dgp();
  s.n_pre = sizes.n_pre;
  s.n_post = sizes.n_post;
  s.seed = seed;
  s.label_mode = LabelMode::Threshold;
  if (k > 0 && tau > 0.0) s.corruption = CorruptionSpec{choose_columns(s.features, k, seed), tau, outlier_factor,
                                                        CorruptionMode::Multiply};
  return s;
}

// ---------------------------------------------------------------------------
// JSON

SHML_JSON_ENUM(CorruptionMode, {{CorruptionMode::Multiply, "multiply"},
                                              {CorruptionMode::ScaleColumn, "scale-column"}})
SHML_JSON_ENUM(LabelMode, {{LabelMode::Bernoulli, "bernoulli"}, {LabelMode::Threshold, "threshold"}})

inline void to_json(nlohmann::json& j, const FeatureSpec& f) { j = {{"name", f.name}, {"mean", f.mean}, {"std", f.std}}; }
inline void from_json(const nlohmann::json& j, FeatureSpec& f) {
  j.at("name").get_to(f.name);
  j.at("mean").get_to(f.mean);
  j.at("std").get_to(f.std);
}
inline void to_json(nlohmann::json& j, const DGPParams& p) {
  j = {{"intercept", p.intercept}, {"coefficients", p.coefficients}, {"noise_std", p.noise_std}};
}
inline void from_json(const nlohmann::json& j, DGPParams& p) {
  p.intercept = j.value("intercept", 0.0);
  j.at("coefficients").get_to(p.coefficients);
  p.noise_std = j.value("noise_std", 0.0);
}
inline void to_json(nlohmann::json& j, const CorruptionSpec& c) {
  j = {{"columns", c.columns}, {"fraction", c.fraction}, {"outlier_factor", c.outlier_factor}, {"mode", c.mode}};
}
inline void from_json(const nlohmann::json& j, CorruptionSpec& c) {
  j.at("columns").get_to(c.columns);
  c.fraction = j.value("fraction", 0.0);
  c.outlier_factor = j.value("outlier_factor", 10.0);
  c.mode = j.value("mode", CorruptionMode::Multiply);
}
inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = {{"features", s.features}, {"pre", s.pre},     {"post", s.post},
       {"n_pre", s.n_pre},       {"n_post", s.n_post}, {"split_fraction", s.split_fraction},
       {"seed", s.seed},         {"label_mode", s.label_mode}};
  j["corruption"] = s.corruption ? nlohmann::json(*s.corruption) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  j.at("features").get_to(s.features);
  j.at("pre").get_to(s.pre);
  j.at("post").get_to(s.post);
  s.n_pre = j.value("n_pre", std::size_t{10000});
  s.n_post = j.value("n_post", std::size_t{10000});
  s.split_fraction = j.value("split_fraction", 0.7);
  s.seed = j.value("seed", std::uint64_t{42});
  s.label_mode = j.value("label_mode", LabelMode::Bernoulli);
  if (j.contains("corruption") && !j["corruption"].is_null())
    s.corruption = j["corruption"].get<CorruptionSpec>();
  else
    s.corruption.reset();
}

// ---------------------------------------------------------------------------
// CSV

// Stream CSV: header "t,<features...>,y"; mask CSV: header "t,<features...>".
inline void write_stream_csv(const DriftStream& s, const std::string& data_path, const std::string& mask_path) {
  std::ostringstream data, mask;
  data << "t";
  mask << "t";
  for (const auto& n : s.schema.names) {
    data << ',' << csv_quote(n);
    mask << ',' << csv_quote(n);
  }
  data << ",y\n";
  mask << '\n';
  for (const auto& b : s.batches) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      data << b.t;
      mask << b.t;
      for (std::size_t j = 0; j < b.X.cols; ++j) {
        data << ',' << shortest(b.X(i, j));
        mask << ',' << (b.corruption_mask && (*b.corruption_mask)[i * b.X.cols + j] ? 1 : 0);
      }
      data << ',' << b.y[i] << '\n';
      mask << '\n';
    }
  }
  write_text_file(data_path, data.str());
  write_text_file(mask_path, mask.str());
}

struct CsvStream {
  Schema schema;
  std::vector<LabeledBatch> batches;
};

// Generic CSV stream reader: numeric feature columns, one binary label column.
// A column named "t" is ignored; rows are batched in file order.
inline CsvStream read_csv_stream(const std::string& path, const std::string& label_column, std::size_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV file", path);
  const auto header = split_csv_line(line);
  std::optional<std::size_t> label_idx;
  std::vector<std::size_t> feature_idx;
  CsvStream out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column)
      label_idx = i;
    else if (header[i] != "t") {
      feature_idx.push_back(i);
      out.schema.names.push_back(header[i]);
    }
  }
  if (!label_idx) throw ConfigError("label column '" + label_column + "' not in CSV header");

  LabeledBatch all;
  all.X = Matrix(0, feature_idx.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields", line);
    for (std::size_t c : feature_idx) {
      auto v = parse_double(fields[c]);
      if (!v) throw ParseError("line " + std::to_string(line_no) + ": non-numeric value", line);
      all.X.values.push_back(*v);
    }
    auto lab = parse_double(fields[*label_idx]);
    if (!lab || (*lab != 0.0 && *lab != 1.0))
      throw ParseError("line " + std::to_string(line_no) + ": label must be 0 or 1", line);
    all.y.push_back(static_cast<int>(*lab));
    ++all.X.rows;
  }
  if (all.empty()) throw ParseError("CSV has no data rows", path);
  for (std::size_t begin = 0, t = 0; begin < all.size(); begin += batch_size, ++t) {
    LabeledBatch b = slice_rows(all, begin, std::min(all.size(), begin + batch_size));
    b.t = t;
    out.batches.push_back(std::move(b));
  }
  return out;
}

}  // namespace shml
