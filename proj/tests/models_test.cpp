#include <gtest/gtest.h>

#include <cmath>

#include "shml/datagen.hpp"
#include "shml/models.hpp"
#include "shml/rng.hpp"

using namespace shml;

namespace {

LabeledBatch make_batch(std::vector<std::vector<double>> rows, std::vector<int> y) {
  LabeledBatch b;
  b.X = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) b.X(i, j) = rows[i][j];
  b.y = std::move(y);
  return b;
}

LabeledBatch phase_batch(std::size_t n, const DGPParams& dgp, std::uint64_t seed, std::string_view name) {
  LabeledBatch b;
  b.X = generate_features(n, diabetes_features(), seed, std::string(name) + ".x");
  b.y = generate_labels(b.X, dgp, seed, LabelMode::Bernoulli, std::string(name) + ".y");
  return b;
}

}  // namespace

TEST(Fit, SeparableToyReachesPerfectTrainingAccuracy) {
  const auto b = make_batch({{0, 0}, {0, 1}, {1, 0}, {3, 3}, {3, 4}, {4, 3}}, {0, 0, 0, 1, 1, 1});
  const auto m = fit_logistic(b);
  EXPECT_EQ(accuracy(*m, b), 1.0);
}

TEST(Fit, PrePhaseHeldOutAccuracy) {
  const auto train = phase_batch(70000, diabetes_pre_dgp(), 42, "train");
  const auto test = phase_batch(30000, diabetes_pre_dgp(), 42, "test");
  const auto m = fit_logistic(train);
  EXPECT_GE(accuracy(*m, test), 0.70);
}

TEST(Fit, SingleClassFallsBackToConstant) {
  const auto b = make_batch({{1, 2}, {3, 4}, {5, 6}}, {1, 1, 1});
  const auto m = fit_logistic(b);
  ASSERT_EQ(m->kind(), "constant");
  EXPECT_EQ(dynamic_cast<const ConstantModel&>(*m).probability(), 1.0);
  const auto one = fit_logistic(make_batch({{1, 2}}, {0}));
  EXPECT_EQ(one->kind(), "constant");
}

TEST(Fit, EmptyDataThrows) { EXPECT_THROW(fit_logistic(LabeledBatch{}), ConfigError); }

TEST(Fit, DeterministicAndConverges) {
  const auto b = phase_batch(2000, diabetes_pre_dgp(), 3, "det");
  FitReport rep;
  const auto a = fit_logistic(b, {}, nullptr, &rep);
  const auto c = fit_logistic(b);
  EXPECT_EQ(a->predict_proba(b.X), c->predict_proba(b.X));
  EXPECT_TRUE(rep.converged || rep.iterations == LogisticConfig{}.max_iter);
}

TEST(Fit, WarmStartKeepsStandardizer) {
  const auto b = phase_batch(2000, diabetes_pre_dgp(), 3, "warm");
  const auto base = std::dynamic_pointer_cast<const LogisticModel>(fit_logistic(b));
  const auto b2 = phase_batch(500, diabetes_post_dgp(), 3, "warm2");
  const auto upd = std::dynamic_pointer_cast<const LogisticModel>(fit_logistic(b2, {0.0001, 50, 1e-6}, base.get()));
  ASSERT_TRUE(upd);
  EXPECT_EQ(upd->standardizer().mean, base->standardizer().mean);
}

TEST(Fit, StandardizationInvariance) {
  auto b = phase_batch(3000, diabetes_pre_dgp(), 8, "inv");
  const auto m1 = fit_logistic(b);
  const auto p1 = m1->predict_proba(b.X);
  auto scaled = b;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled.X(i, 5) *= 7.5;
  const auto m2 = fit_logistic(scaled);
  const auto p2 = m2->predict_proba(scaled.X);
  for (std::size_t i = 0; i < p1.size(); ++i) ASSERT_NEAR(p1[i], p2[i], 1e-8);
}

TEST(Fit, ZeroVarianceColumnGetsUnitStd) {
  const auto b = make_batch({{1, 5}, {2, 5}, {3, 5}, {4, 5}}, {0, 0, 1, 1});
  const auto s = Standardizer::fit(b.X);
  EXPECT_EQ(s.std[1], 1.0);
}

TEST(Gradient, MatchesCentralDifferences) {
  rng::Stream rs(11, "gradcheck");
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 5 + rs.below(20), d = 1 + rs.below(5);
    Matrix Z(n, d);
    std::vector<int> y(n);
    for (auto& v : Z.values) v = rs.normal();
    for (auto& v : y) v = rs.bernoulli(0.5);
    std::vector<double> w(d);
    for (auto& v : w) v = rs.normal();
    const double b = rs.normal();
    std::vector<double> gw;
    double gb = 0;
    logistic_objective(Z, y, w, b, 0.01, &gw, &gb);
    const double h = 1e-6;
    for (std::size_t j = 0; j <= d; ++j) {
      auto wp = w, wm = w;
      double bp = b, bm = b;
      if (j < d) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double fd = (logistic_objective(Z, y, wp, bp, 0.01) - logistic_objective(Z, y, wm, bm, 0.01)) / (2 * h);
      const double an = j < d ? gw[j] : gb;
      EXPECT_LE(std::abs(fd - an) / std::max(1e-8, std::max(std::abs(fd), std::abs(an))), 1e-5);
    }
  }
}

TEST(Accuracy, AllCorrectConstantCase) {
  const auto b = make_batch({{0}, {1}, {2}}, {1, 1, 1});
  EXPECT_EQ(accuracy(ConstantModel(0.9), b), 1.0);
}

TEST(Accuracy, CoinFlipLabels) {
  LabeledBatch b;
  b.X = Matrix(10000, 1);
  rng::Stream rs(5, "coin");
  for (int i = 0; i < 10000; ++i) b.y.push_back(rs.bernoulli(0.5));
  // 5 SE of a binomial proportion at n = 1e4
  EXPECT_NEAR(accuracy(ConstantModel(0.7), b), 0.5, 0.025);
}

TEST(Accuracy, EmptyThrows) { EXPECT_THROW(accuracy(ConstantModel(0.5), LabeledBatch{}), ConfigError); }

TEST(Accuracy, FrozenPreModelOnCorruptedShiftedStream) {
  const auto s = build_stream(diabetes_scenario(3, 0.05, 10.0, 42), 500);
  const auto m = fit_logistic(s.train);
  std::vector<LabeledBatch> after(s.batches.begin() + static_cast<long>(s.shift_index), s.batches.end());
  EXPECT_NEAR(accuracy(*m, concat(after)), 0.44, 0.05);
}

TEST(Ensemble, SingleMemberIsIdentity) {
  const auto b = phase_batch(500, diabetes_pre_dgp(), 2, "ens");
  const auto m = fit_logistic(b);
  const WeightedEnsemble e({m}, {3.0});
  EXPECT_EQ(ensemble_predict(e, b.X), m->predict(b.X));
}

TEST(Ensemble, DegenerateWeightSelectsFirst) {
  const auto b = phase_batch(500, diabetes_pre_dgp(), 2, "ens2");
  const auto m = fit_logistic(b);
  const WeightedEnsemble e({m, std::make_shared<ConstantModel>(1.0)}, {1.0, 0.0});
  EXPECT_EQ(ensemble_predict(e, b.X), m->predict(b.X));
}

TEST(Ensemble, ThreeMemberMeanVote) {
  // (0.9 + 0.9 + 0.1) / 3 = 0.6333 >= 0.5
  const WeightedEnsemble e({std::make_shared<ConstantModel>(0.9), std::make_shared<ConstantModel>(0.9),
                            std::make_shared<ConstantModel>(0.1)},
                           {1, 1, 1});
  Matrix X(1, 1);
  EXPECT_NEAR(e.predict_proba(X)[0], 1.9 / 3.0, 1e-12);
  EXPECT_EQ(ensemble_predict(e, X)[0], 1);
}

TEST(Ensemble, InvalidConstruction) {
  EXPECT_THROW(WeightedEnsemble({}, {}), ConfigError);
  EXPECT_THROW(WeightedEnsemble({std::make_shared<ConstantModel>(0.5)}, {-1.0}), ConfigError);
}

TEST(ModelJson, RoundTrip) {
  const auto b = phase_batch(500, diabetes_pre_dgp(), 2, "json");
  const auto m = fit_logistic(b);
  const WeightedEnsemble e({m, std::make_shared<ConstantModel>(0.3)}, {0.7, 0.3});
  const auto back = predictor_from_json(e.to_json());
  EXPECT_EQ(back->predict_proba(b.X), e.predict_proba(b.X));
  EXPECT_THROW(predictor_from_json({{"kind", "tree"}}), ConfigError);
}
