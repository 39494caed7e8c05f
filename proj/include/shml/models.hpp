#pragma once
// Binary predictors: the Predictor interface, an L2-regularised logistic
// regression with built-in standardisation, a constant fallback model and an
// accuracy-weighted ensemble.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/data.hpp"
#include "shml/error.hpp"

namespace shml {

class Predictor {
 public:
  virtual ~Predictor() = default;

  // P(y = 1 | x) for every row; values in [0, 1].
  virtual std::vector<double> predict_proba(const Matrix& X) const = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual std::string_view kind() const = 0;

  std::vector<int> predict(const Matrix& X) const {
    const auto p = predict_proba(X);
    std::vector<int> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
    return out;
  }
};

using PredictorPtr = std::shared_ptr<const Predictor>;

inline double accuracy(const Predictor& model, const LabeledBatch& data) {
  if (data.empty()) throw ConfigError("accuracy of an empty batch");
  const auto pred = model.predict(data.X);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.y[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// Per-feature (mean, std); zero-variance columns get std 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    s.mean.assign(X.cols, 0.0);
    s.std.assign(X.cols, 1.0);
    if (X.rows == 0) return s;
    const double n = static_cast<double>(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i)
      for (std::size_t j = 0; j < X.cols; ++j) s.mean[j] += X(i, j);
    for (auto& m : s.mean) m /= n;
    std::vector<double> ss(X.cols, 0.0);
    for (std::size_t i = 0; i < X.rows; ++i)
      for (std::size_t j = 0; j < X.cols; ++j) {
        const double d = X(i, j) - s.mean[j];
        ss[j] += d * d;
      }
    for (std::size_t j = 0; j < X.cols; ++j) {
      const double sd = std::sqrt(ss[j] / n);
      s.std[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
    }
    return s;
  }

  Matrix transform(const Matrix& X) const {
    if (X.cols != mean.size()) throw DimensionError("standardizer width mismatch");
    Matrix Z(X.rows, X.cols);
    for (std::size_t i = 0; i < X.rows; ++i)
      for (std::size_t j = 0; j < X.cols; ++j) Z(i, j) = (X(i, j) - mean[j]) / std[j];
    return Z;
  }
};

struct LogisticConfig {
  double l2 = 1e-4;
  int max_iter = 500;
  double grad_tol = 1e-6;
};

// Mean logistic loss plus (l2/2)|w|^2 on standardized inputs Z; the intercept
// is not penalised. Fills the gradient when the output pointers are non-null.
inline double logistic_objective(const Matrix& Z, std::span<const int> y, std::span<const double> w, double b,
                                 double l2, std::vector<double>* grad_w = nullptr, double* grad_b = nullptr) {
  const std::size_t n = Z.rows;
  const std::size_t d = Z.cols;
  if (grad_w) grad_w->assign(d, 0.0);
  double gb = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = Z.values.data() + i * d;
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * zi[j];
    // log(1 + e^z) - y z, evaluated stably
    loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - y[i] * z;
    if (grad_w) {
      const double r = (z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z))) - y[i];
      double* g = grad_w->data();
      for (std::size_t j = 0; j < d; ++j) g[j] += r * zi[j];
      gb += r;
    }
  }
  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  double penalty = 0.0;
  for (std::size_t j = 0; j < d; ++j) penalty += w[j] * w[j];
  if (grad_w) {
    for (std::size_t j = 0; j < d; ++j) (*grad_w)[j] = (*grad_w)[j] * inv_n + l2 * w[j];
  }
  if (grad_b) *grad_b = gb * inv_n;
  return loss * inv_n + 0.5 * l2 * penalty;
}

class LogisticModel final : public Predictor {
 public:
  LogisticModel(std::vector<double> weights, double intercept, Standardizer standardizer)
      : weights_(std::move(weights)), intercept_(intercept), standardizer_(std::move(standardizer)) {
    if (weights_.size() != standardizer_.mean.size()) throw DimensionError("weight count != standardizer width");
  }

  std::vector<double> predict_proba(const Matrix& X) const override {
    if (X.cols != weights_.size()) throw DimensionError("model expects " + std::to_string(weights_.size()) + " features");
    std::vector<double> p(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) p[i] = probability(X.row(i));
    return p;
  }

  double probability(std::span<const double> x) const {
    double z = intercept_;
    for (std::size_t j = 0; j < weights_.size(); ++j)
      z += weights_[j] * (x[j] - standardizer_.mean[j]) / standardizer_.std[j];
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }

  const std::vector<double>& weights() const noexcept { return weights_; }
  double intercept() const noexcept { return intercept_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }
  std::string_view kind() const override { return "logistic"; }

  nlohmann::json to_json() const override {
    return {{"kind", "logistic"},
            {"weights", weights_},
            {"intercept", intercept_},
            {"standardizer", {{"mean", standardizer_.mean}, {"std", standardizer_.std}}}};
  }

  static std::shared_ptr<const LogisticModel> from_json(const nlohmann::json& j) {
    Standardizer s;
    j.at("standardizer").at("mean").get_to(s.mean);
    j.at("standardizer").at("std").get_to(s.std);
    for (double v : s.std)
      if (!(v > 0.0)) throw ConfigError("standardizer std must be > 0");
    return std::make_shared<LogisticModel>(j.at("weights").get<std::vector<double>>(), j.at("intercept").get<double>(),
                                           std::move(s));
  }

 private:
  std::vector<double> weights_;
  double intercept_;
  Standardizer standardizer_;
};

class ConstantModel final : public Predictor {
 public:
  explicit ConstantModel(double p) : p_(std::clamp(p, 0.0, 1.0)) {}
  std::vector<double> predict_proba(const Matrix& X) const override { return std::vector<double>(X.rows, p_); }
  double probability() const noexcept { return p_; }
  std::string_view kind() const override { return "constant"; }
  nlohmann::json to_json() const override { return {{"kind", "constant"}, {"p", p_}}; }

 private:
  double p_;
};

struct FitReport {
  int iterations = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
};

// Full-batch gradient descent with Armijo backtracking. When `init` is given
// its standardizer and parameters are reused (warm start).
inline PredictorPtr fit_logistic(const LabeledBatch& data, const LogisticConfig& cfg = {},
                                 const LogisticModel* init = nullptr, FitReport* report = nullptr) {
  if (data.empty()) throw ConfigError("cannot fit on empty data");
  data.validate();
  const std::size_t n = data.size();
  const std::size_t positives = static_cast<std::size_t>(std::count(data.y.begin(), data.y.end(), 1));
  if (n < 2 || positives == 0 || positives == n)
    return std::make_shared<ConstantModel>(static_cast<double>(positives) / static_cast<double>(n));

  Standardizer standardizer = init ? init->standardizer() : Standardizer::fit(data.X);
  const Matrix Z = standardizer.transform(data.X);
  const std::size_t d = Z.cols;
  std::vector<double> w = init ? init->weights() : std::vector<double>(d, 0.0);
  double b = init ? init->intercept() : 0.0;

  std::vector<double> gw, trial_w(d), trial_gw;
  double gb = 0.0;
  double f = logistic_objective(Z, data.y, w, b, cfg.l2, &gw, &gb);
  double step = 1.0;
  FitReport rep;
  for (rep.iterations = 0; rep.iterations < cfg.max_iter; ++rep.iterations) {
    double gnorm2 = gb * gb;
    for (double g : gw) gnorm2 += g * g;
    rep.grad_norm = std::sqrt(gnorm2);
    if (rep.grad_norm <= cfg.grad_tol) {
      rep.converged = true;
      break;
    }
    double trial_b = 0.0;
    double trial_f = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      for (std::size_t j = 0; j < d; ++j) trial_w[j] = w[j] - step * gw[j];
      trial_b = b - step * gb;
      trial_f = logistic_objective(Z, data.y, trial_w, trial_b, cfg.l2);
      if (trial_f <= f - 0.5 * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    w.swap(trial_w);
    b = trial_b;
    f = logistic_objective(Z, data.y, w, b, cfg.l2, &gw, &gb);
    step = std::min(step * 2.0, 256.0);
  }
  rep.loss = f;
  if (report) *report = rep;
  return std::make_shared<LogisticModel>(std::move(w), b, std::move(standardizer));
}

// Members vote with their probabilities; weights are renormalised to sum 1
// (all-zero weights fall back to equal weighting).
class WeightedEnsemble final : public Predictor {
 public:
  WeightedEnsemble(std::vector<PredictorPtr> members, std::vector<double> weights)
      : members_(std::move(members)), weights_(std::move(weights)) {
    if (members_.empty()) throw ConfigError("ensemble needs at least one member");
    if (weights_.size() != members_.size()) throw ConfigError("ensemble weight count mismatch");
    double total = 0.0;
    for (double v : weights_) {
      if (!(v >= 0.0)) throw ConfigError("ensemble weights must be nonnegative");
      total += v;
    }
    for (auto& v : weights_) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(weights_.size());
  }

  std::vector<double> predict_proba(const Matrix& X) const override {
    std::vector<double> out(X.rows, 0.0);
    for (std::size_t m = 0; m < members_.size(); ++m) {
      if (weights_[m] == 0.0) continue;
      const auto p = members_[m]->predict_proba(X);
      for (std::size_t i = 0; i < X.rows; ++i) out[i] += weights_[m] * p[i];
    }
    for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
    return out;
  }

  const std::vector<PredictorPtr>& members() const noexcept { return members_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  std::string_view kind() const override { return "ensemble"; }

  nlohmann::json to_json() const override {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& p : members_) m.push_back(p->to_json());
    return {{"kind", "ensemble"}, {"members", m}, {"weights", weights_}};
  }

 private:
  std::vector<PredictorPtr> members_;
  std::vector<double> weights_;
};

inline std::vector<int> ensemble_predict(const WeightedEnsemble& e, const Matrix& X) { return e.predict(X); }

// Loads the kinds defined in this header.
inline PredictorPtr predictor_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "logistic") return LogisticModel::from_json(j);
  if (kind == "constant") return std::make_shared<ConstantModel>(j.at("p").get<double>());
  if (kind == "ensemble") {
    std::vector<PredictorPtr> members;
    for (const auto& m : j.at("members")) members.push_back(predictor_from_json(m));
    return std::make_shared<WeightedEnsemble>(std::move(members), j.at("weights").get<std::vector<double>>());
  }
  throw ConfigError("unknown predictor kind '" + kind + "'");
}

}  // namespace shml
