#include <gtest/gtest.h>

#include <cmath>

#include "shml/datagen.hpp"
#include "shml/diagnosis.hpp"
#include "shml/models.hpp"

using namespace shml;

namespace {

const Schema& diabetes_schema() {
  static const Schema s = [] {
    Schema out;
    for (const auto& f : diabetes_features()) out.names.push_back(f.name);
    return out;
  }();
  return s;
}

LabeledBatch pre_batch(std::size_t n, std::uint64_t seed, std::string_view name) {
  LabeledBatch b;
  b.X = generate_features(n, diabetes_features(), seed, std::string(name) + ".x");
  b.y = generate_labels(b.X, diabetes_pre_dgp(), seed, LabelMode::Threshold, std::string(name) + ".y");
  return b;
}

struct Fixture {
  LabeledBatch before, after;
  PredictorPtr model;
};

Fixture fixture(std::uint64_t seed) {
  Fixture f;
  f.before = pre_batch(3000, seed, "before");
  f.after = pre_batch(1000, seed, "after");
  f.model = fit_logistic(pre_batch(5000, seed, "train"));
  return f;
}

LabeledBatch corrupt_columns(const LabeledBatch& b, std::vector<std::string> cols, double factor, double tau,
                             std::uint64_t seed) {
  CorruptionSpec spec;
  spec.columns = std::move(cols);
  spec.fraction = tau;
  spec.outlier_factor = factor;
  return corrupt(b, spec, diabetes_schema(), seed);
}

DiagnosisVector paper_uniform8() { return DiagnosisVector::uniform(8); }

// Age, HbA1c, FastingGlucose, BMI, BloodPressure, Cholesterol, Insulin,
// PhysicalActivity reordered to schema order.
DiagnosisVector paper_estimate() {
  std::vector<double> p(8, 0.0);
  const auto& s = diabetes_schema();
  p[s.index_of("Age")] = 0.4;
  p[s.index_of("HbA1c")] = 0.2;
  p[s.index_of("FastingGlucose")] = 0.15;
  for (auto name : {"BMI", "BloodPressure", "Cholesterol", "Insulin", "PhysicalActivity"}) p[s.index_of(name)] = 0.05;
  return {p};
}

}  // namespace

TEST(Entropy, ClosedForms) {
  EXPECT_EQ(entropy(DiagnosisVector::one_hot(8, 3)), 0.0);
  EXPECT_NEAR(entropy(paper_uniform8()), 2.0794415, 1e-6);
  EXPECT_NEAR(entropy({{0.5, 0.5}}), 0.6931472, 1e-6);
}

TEST(Entropy, BoundedByLogSize) {
  rng::Stream rs(5, "entropy.bounds");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> w(6);
    for (auto& v : w) v = rs.uniform();
    const auto z = DiagnosisVector::normalized(w);
    const double h = entropy(z);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(6.0) + 1e-12);
  }
}

TEST(KlDivergence, ClosedForms) {
  const auto truth = DiagnosisVector::one_hot(8, diabetes_schema().index_of("Age"));
  EXPECT_EQ(kl_divergence(truth, truth), 0.0);
  EXPECT_NEAR(kl_divergence(truth, paper_uniform8()), 2.0794415, 1e-6);
  EXPECT_NEAR(kl_divergence(truth, paper_estimate()), 0.9162907, 1e-6);
}

TEST(KlDivergence, SmoothingKeepsItFinite) {
  const auto truth = DiagnosisVector::one_hot(3, 0);
  const auto est = DiagnosisVector::one_hot(3, 1);
  EXPECT_NEAR(kl_divergence(truth, est), -std::log(1e-6), 1e-9);
}

TEST(KlDivergence, NonnegativeOnRandomPairs) {
  rng::Stream rs(6, "kl.random");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = rs.uniform();
    for (auto& v : b) v = rs.uniform() + 1e-3;
    EXPECT_GE(kl_divergence(DiagnosisVector::normalized(a), DiagnosisVector::normalized(b)), -1e-12);
  }
}

TEST(KlDivergence, SizeMismatchThrows) {
  EXPECT_THROW(kl_divergence(DiagnosisVector::uniform(2), DiagnosisVector::uniform(3)), DimensionError);
}

TEST(Aggregate, IdenticalOneHots) {
  std::vector<DiagnosisVector> s(4, DiagnosisVector::one_hot(3, 2));
  EXPECT_EQ(aggregate_mc(s).probs, DiagnosisVector::one_hot(3, 2).probs);
}

TEST(Aggregate, SymmetricPair) {
  std::vector<DiagnosisVector> s = {{{1.0, 0.0}}, {{0.0, 1.0}}};
  EXPECT_EQ(aggregate_mc(s).probs, (std::vector<double>{0.5, 0.5}));
}

TEST(Aggregate, DrawsConcentrate) {
  const std::vector<double> zeta = {0.5, 0.3, 0.15, 0.05};
  rng::Stream rs(7, "aggregate.draws");
  std::vector<std::size_t> draws;
  for (int i = 0; i < 1000; ++i) draws.push_back(sample_index(zeta, rs));
  const auto agg = aggregate_draws(draws, zeta.size());
  for (std::size_t i = 0; i < zeta.size(); ++i) EXPECT_NEAR(agg[i], zeta[i], 0.05);
}

TEST(Aggregate, EmptyThrows) {
  EXPECT_THROW(aggregate_mc(std::span<const DiagnosisVector>{}), ConfigError);
  EXPECT_THROW(aggregate_draws(std::span<const std::size_t>{}, 3), ConfigError);
}

TEST(ReasonSpaceTest, CanonicalLayout) {
  const auto space = ReasonSpace::canonical(diabetes_schema());
  ASSERT_EQ(space.size(), 10u);
  EXPECT_EQ(space.label(0), "FeatureCorrupted(HbA1c)");
  EXPECT_EQ(space.label(8), "ConceptDrift");
  EXPECT_EQ(space.label(9), "NoIssue");
  EXPECT_EQ(ReasonSpace::features_only(diabetes_schema()).size(), 8u);
}

TEST(ReasonSpaceTest, RejectsDuplicatesAndEmpty) {
  EXPECT_THROW(ReasonSpace({}, diabetes_schema()), ConfigError);
  EXPECT_THROW(ReasonSpace({{ReasonKind::NoIssue, 0}, {ReasonKind::NoIssue, 0}}, diabetes_schema()), ConfigError);
  EXPECT_THROW(ReasonSpace({{ReasonKind::FeatureCorrupted, 99}}, diabetes_schema()), ConfigError);
}

TEST(DiagnosisVectorTest, Validation) {
  EXPECT_NO_THROW(DiagnosisVector({0.25, 0.75}).validate());
  EXPECT_THROW(DiagnosisVector({0.5, 0.6}).validate(), ConfigError);
  EXPECT_THROW(DiagnosisVector({-0.1, 1.1}).validate(), ConfigError);
  EXPECT_EQ(DiagnosisVector::normalized({0, 0, 0}).probs, DiagnosisVector::uniform(3).probs);
}

TEST(Evidence, NullComparisonHasNoShift) {
  const auto f = fixture(11);
  const auto ev = extract_evidence(f.before, f.before, *f.model, diabetes_schema());
  for (std::size_t j = 0; j < ev.features.size(); ++j) {
    EXPECT_NEAR(ev.scale_ratio[j], 1.0, 1e-12);
    EXPECT_NEAR(ev.mean_shift_z[j], 0.0, 1e-12);
    EXPECT_EQ(ev.out_of_range[j], 0.0);
  }
  EXPECT_EQ(ev.accuracy_before, ev.accuracy_after);
}

TEST(Evidence, NegativeInsulinFlagged) {
  auto f = fixture(12);
  const auto ins = diabetes_schema().index_of("Insulin");
  for (std::size_t i = 0; i < 200; ++i) f.after.X(i, ins) = -10.0 * std::abs(f.after.X(i, ins)) - 500.0;
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  EXPECT_GT(ev.out_of_range[ins], 0.0);
  EXPECT_GT(ev.below_fraction[ins], 0.0);
  EXPECT_LT(ev.after[ins].min, 0.0);
}

TEST(Evidence, ScaledColumnRatio) {
  const auto f = fixture(13);
  CorruptionSpec spec;
  spec.columns = {"Cholesterol"};
  spec.fraction = 1.0;
  spec.outlier_factor = 10.0;
  spec.mode = CorruptionMode::ScaleColumn;
  const auto after = corrupt(f.after, spec, diabetes_schema(), 13);
  const auto ev = extract_evidence(f.before, after, *f.model, diabetes_schema());
  EXPECT_NEAR(ev.scale_ratio[diabetes_schema().index_of("Cholesterol")], 10.0, 0.5);
}

TEST(Evidence, FieldsInRangeAndBinned) {
  auto f = fixture(14);
  f.after = corrupt_columns(f.after, {"Age", "BMI"}, 10.0, 0.2, 14);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema(), std::string("clinic data"));
  EXPECT_EQ(ev.bin_count, 10u);
  for (std::size_t j = 0; j < ev.features.size(); ++j) {
    for (double v : {ev.below_fraction[j], ev.above_fraction[j], ev.out_of_range[j]}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(ev.bins[j].acc_before.size(), 10u);
    EXPECT_EQ(ev.bins[j].acc_after.size(), 10u);
  }
  const auto j = to_json_value(ev);
  EXPECT_EQ(j.at("context"), "clinic data");
}

TEST(Evidence, SmallWindowReducesBins) {
  const auto f = fixture(15);
  const auto ev = extract_evidence(tail_rows(f.before, 40), tail_rows(f.after, 40), *f.model, diabetes_schema());
  EXPECT_LT(ev.bin_count, 10u);
  EXPECT_GE(ev.bin_count, 1u);
  EXPECT_FALSE(ev.bin_note.empty());
}

TEST(Evidence, EmptyWindowThrows) {
  const auto f = fixture(16);
  EXPECT_THROW(extract_evidence(LabeledBatch{}, f.after, *f.model, diabetes_schema()), ConfigError);
}

TEST(Evidence, DescribeTableShape) {
  const auto f = fixture(17);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  const auto table = describe_table(ev.features, ev.before);
  for (auto row : {"count", "mean", "std", "min", "25%", "50%", "75%", "max"})
    EXPECT_NE(table.find(std::string("\n") + row), std::string::npos) << row;
  EXPECT_NE(table.find("HbA1c"), std::string::npos);
}

TEST(StatisticalDiagnoser, NullCaseArgmaxIsNoIssue) {
  const auto space = ReasonSpace::canonical(diabetes_schema());
  for (std::uint64_t seed = 21; seed < 24; ++seed) {
    const auto f = fixture(seed);
    const auto z = diagnose_statistical(extract_evidence(f.before, f.after, *f.model, diabetes_schema()), space);
    EXPECT_NO_THROW(z.validate());
    EXPECT_EQ(z.argmax(), *space.find_kind(ReasonKind::NoIssue)) << "seed " << seed;
  }
}

TEST(StatisticalDiagnoser, SingleCorruptedColumnLeadsFeatures) {
  const auto space = ReasonSpace::canonical(diabetes_schema());
  for (const auto* col : {"Age", "Insulin", "HbA1c"}) {
    auto f = fixture(31);
    f.after = corrupt_columns(f.after, {col}, 10.0, 0.2, 31);
    const auto z = diagnose_statistical(extract_evidence(f.before, f.after, *f.model, diabetes_schema()), space);
    const auto target = *space.find_feature(diabetes_schema().index_of(col));
    for (std::size_t j = 0; j < 8; ++j) {
      if (j == target) continue;
      EXPECT_GT(z[target], z[j]) << col;
    }
  }
}

TEST(StatisticalDiagnoser, AllColumnsCorruptedIsNearUniform) {
  const auto space = ReasonSpace::features_only(diabetes_schema());
  auto f = fixture(41);
  f.after = corrupt_columns(f.after, diabetes_schema().names, 10.0, 0.2, 41);
  const auto z = diagnose_statistical(extract_evidence(f.before, f.after, *f.model, diabetes_schema()), space);
  const auto [lo, hi] = std::minmax_element(z.probs.begin(), z.probs.end());
  EXPECT_LE(*hi - *lo, 0.02);
}

TEST(StatisticalDiagnoser, KlNonIncreasingInFactor) {
  const auto space = ReasonSpace::features_only(diabetes_schema());
  const auto age = diabetes_schema().index_of("Age");
  double mean_prev = 1e9;
  for (double factor : {2.0, 5.0, 10.0, 50.0}) {
    double total = 0.0;
    for (std::uint64_t seed = 51; seed < 54; ++seed) {
      auto f = fixture(seed);
      f.after = corrupt_columns(f.after, {"Age"}, factor, 0.2, seed);
      const auto z = diagnose_statistical(extract_evidence(f.before, f.after, *f.model, diabetes_schema()), space);
      total += kl_divergence(DiagnosisVector::one_hot(8, age), z);
    }
    const double mean = total / 3.0;
    EXPECT_LE(mean, mean_prev + 1e-9) << "factor " << factor;
    mean_prev = mean;
  }
}

TEST(StatisticalDiagnoser, PureFunctionOfEvidence) {
  auto f = fixture(61);
  f.after = corrupt_columns(f.after, {"BMI"}, 5.0, 0.2, 61);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  const auto space = ReasonSpace::canonical(diabetes_schema());
  EXPECT_EQ(diagnose_statistical(ev, space).probs, diagnose_statistical(ev, space).probs);
}

TEST(ParseListing, ProbabilityLines) {
  const auto hyps = parse_probability_listing(
      "1. Hypothesis: [Age]; Probability: 40%\n"
      "2. Hypothesis: [HbA1c, FastingGlucose]; Probability: 30%\n"
      "noise line\n"
      "3. Hypothesis: ['BMI']; Probability: 30.0%");
  ASSERT_EQ(hyps.size(), 3u);
  EXPECT_EQ(hyps[1].names, (std::vector<std::string>{"HbA1c", "FastingGlucose"}));
  EXPECT_EQ(hyps[2].names, (std::vector<std::string>{"BMI"}));
  EXPECT_EQ(hyps[0].probability, 40.0);
}

TEST(ParseListing, UnparseableResponseCarriesText) {
  try {
    parse_probability_listing("I cannot help with that.");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.text(), "I cannot help with that.");
  }
}

TEST(ParseListing, ConfidenceWords) {
  EXPECT_EQ(confidence_score("Extremely Confident"), 10.0);
  EXPECT_EQ(confidence_score("confident"), 8.0);
  EXPECT_EQ(confidence_score("Somewhat confident"), 6.0);
  EXPECT_EQ(confidence_score("Unsure"), 4.0);
  EXPECT_EQ(confidence_score("Completely unsure"), 2.0);
  EXPECT_FALSE(confidence_score("maybe"));
  const auto hyps = parse_confidence_listing(
      "Covariate: Age; Hypothesis: shifted; Evidence: mean moved; Strength of belief: Extremely Confident\n"
      "Covariate: BMI; Hypothesis: shifted; Evidence: none; Strength of belief: Unsure\n");
  ASSERT_EQ(hyps.size(), 2u);
  const auto z = hypotheses_to_diagnosis(hyps, ReasonSpace::features_only(diabetes_schema()));
  EXPECT_NEAR(z[diabetes_schema().index_of("Age")], 10.0 / 14.0, 1e-12);
}

TEST(ParseListing, CombinationSplitsMass) {
  const auto space = ReasonSpace::features_only(diabetes_schema());
  const auto z = hypotheses_to_diagnosis({{{"Age", "BMI"}, 50.0}, {{"Insulin"}, 50.0}}, space);
  EXPECT_NEAR(z[diabetes_schema().index_of("Age")], 0.25, 1e-12);
  EXPECT_NEAR(z[diabetes_schema().index_of("BMI")], 0.25, 1e-12);
  EXPECT_NEAR(z[diabetes_schema().index_of("Insulin")], 0.5, 1e-12);
}

namespace {

std::string listing_for(const DiagnosisVector& z, const char* suffix = "%") {
  std::string out;
  for (std::size_t j = 0; j < z.size(); ++j)
    out += std::to_string(j + 1) + ". Hypothesis: [" + diabetes_schema().names[j] + "]; Probability: " +
           shortest(100.0 * z[j]) + suffix + "\n";
  return out;
}

}  // namespace

TEST(LlmDiagnoser, UniformListingGivesUniform) {
  const auto f = fixture(71);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  ScriptedProvider mock;
  mock.script(TemplateId::CovariateCombinations, {std::string("[Age]\n[BMI]")});
  mock.script(TemplateId::DiagnosisProbability, {listing_for(paper_uniform8())});
  const auto z = diagnose_llm(ev, ReasonSpace::features_only(diabetes_schema()), mock);
  for (double p : z.probs) EXPECT_NEAR(p, 0.125, 1e-12);
  const auto reqs = mock.requests();
  ASSERT_EQ(reqs.size(), 3u);  // combinations + two reflection passes
  EXPECT_EQ(reqs[1].prompt.find("[Age]\n[BMI]") != std::string::npos, true);
  EXPECT_NE(reqs[2].prompt.find("Hypothesis: [Age]; Probability: 12.5%"), std::string::npos);
  EXPECT_NE(reqs[0].prompt.find("hypothesize 10 possible covariates"), std::string::npos);
}

TEST(LlmDiagnoser, RenormalizesNinetyPercent) {
  const auto f = fixture(72);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  ScriptedProvider mock;
  mock.script(TemplateId::CovariateCombinations, {std::string("[Age]")});
  mock.script(TemplateId::DiagnosisProbability,
              {std::string("Hypothesis: [Age]; Probability: 60%\nHypothesis: [BMI]; Probability: 30%")});
  const auto z = diagnose_llm(ev, ReasonSpace::canonical(diabetes_schema()), mock);
  EXPECT_NO_THROW(z.validate());
  EXPECT_NEAR(z[diabetes_schema().index_of("Age")], 2.0 / 3.0, 1e-12);
}

TEST(LlmDiagnoser, UnknownNameGoesToNoIssueWithWarning) {
  const auto f = fixture(73);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  ScriptedProvider mock;
  mock.script(TemplateId::CovariateCombinations, {std::string("[Weather]")});
  mock.script(TemplateId::DiagnosisProbability,
              {std::string("Hypothesis: [Weather]; Probability: 50%\nHypothesis: [Age]; Probability: 50%")});
  std::vector<std::string> warnings;
  const auto space = ReasonSpace::canonical(diabetes_schema());
  const auto z = diagnose_llm(ev, space, mock, {}, &warnings);
  EXPECT_NEAR(z[*space.find_kind(ReasonKind::NoIssue)], 0.5, 1e-12);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings.front().find("Weather"), std::string::npos);
}

TEST(LlmDiagnoser, ProviderFailureSurfaces) {
  const auto f = fixture(74);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  ScriptedProvider mock;
  mock.script(TemplateId::CovariateCombinations, {ScriptedProvider::Failure::Timeout});
  EXPECT_THROW(diagnose_llm(ev, ReasonSpace::canonical(diabetes_schema()), mock), TimeoutError);
}

TEST(LlmDiagnoser, McChainsAverage) {
  const auto f = fixture(75);
  const auto ev = extract_evidence(f.before, f.after, *f.model, diabetes_schema());
  ScriptedProvider mock;
  mock.script(TemplateId::CovariateCombinations, {std::string("[Age]")});
  mock.script(TemplateId::DiagnosisProbability,
              {std::string("Hypothesis: [Age]; Probability: 100%"), std::string("Hypothesis: [Age]; Probability: 100%"),
               std::string("Hypothesis: [BMI]; Probability: 100%")});
  LlmDiagnoserConfig cfg;
  cfg.samples = 2;
  const auto z = diagnose_llm(ev, ReasonSpace::features_only(diabetes_schema()), mock, cfg);
  EXPECT_NEAR(z[diabetes_schema().index_of("Age")], 0.5, 1e-12);
  EXPECT_NEAR(z[diabetes_schema().index_of("BMI")], 0.5, 1e-12);
}

TEST(StatisticalConfigJson, RoundTrip) {
  StatisticalConfig c;
  c.temperature = 0.9;
  const nlohmann::json j = c;
  const auto back = j.get<StatisticalConfig>();
  EXPECT_EQ(back.temperature, 0.9);
  EXPECT_EQ(back.w_range, c.w_range);
}
