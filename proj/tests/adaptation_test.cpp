#include <gtest/gtest.h>

#include <cmath>

#include "shml/adaptation.hpp"
#include "shml/datagen.hpp"

using namespace shml;

namespace {

const Schema& schema() {
  static const Schema s = [] {
    Schema out;
    for (const auto& f : diabetes_features()) out.names.push_back(f.name);
    return out;
  }();
  return s;
}

std::size_t col(std::string_view name) { return schema().index_of(name); }

LabeledBatch phase(std::size_t n, const DGPParams& dgp, std::uint64_t seed, std::string_view name) {
  LabeledBatch b;
  b.X = generate_features(n, diabetes_features(), seed, std::string(name) + ".x");
  b.y = generate_labels(b.X, dgp, seed, LabelMode::Threshold, std::string(name) + ".y");
  return b;
}

// 20% of rows get the column multiplied by -factor, so they land below zero.
LabeledBatch negative_values(LabeledBatch b, std::string_view column, double factor, std::uint64_t seed) {
  rng::Stream rs(seed, "negative.values");
  const auto j = col(column);
  for (std::size_t i = 0; i < b.size(); ++i)
    if (rs.bernoulli(0.2)) b.X(i, j) = -factor * std::abs(b.X(i, j)) - 1.0;
  return b;
}

}  // namespace

TEST(Grammar, BareSubgroupLine) {
  const auto a = parse_action_text("Insulin < 0", schema());
  const auto* r = std::get_if<RemoveSubgroupRetrain>(&a);
  ASSERT_NE(r, nullptr);
  ASSERT_EQ(r->predicates.size(), 1u);
  EXPECT_EQ(r->predicates[0].clauses, (std::vector<Clause>{{col("Insulin"), Comparator::Less, 0.0}}));
}

TEST(Grammar, RemovalWindow) {
  const auto a = parse_action_text("RemoveSubgroupRetrain(Insulin < 0 | Age > 90; 2)", schema());
  const auto& r = std::get<RemoveSubgroupRetrain>(a);
  EXPECT_EQ(r.predicates.size(), 2u);
  EXPECT_EQ(r.window, 2u);
  EXPECT_EQ(render(a, schema()), "RemoveSubgroupRetrain(Insulin < 0 | Age > 90; 2)");
  EXPECT_EQ(render(RemoveSubgroupRetrain{r.predicates, 0}, schema()), "RemoveSubgroupRetrain(Insulin < 0 | Age > 90)");
  EXPECT_THROW(parse_action_text("RemoveSubgroupRetrain(Insulin < 0; 0)", schema()), ParseError);
}

TEST(Grammar, ParenthesisedConjunction) {
  const auto a = parse_action_text("(HbA1c > 21.55) & (FastingGlucose > 376.14)", schema());
  const auto& p = std::get<RemoveSubgroupRetrain>(a).predicates.at(0);
  EXPECT_EQ(p.clauses, (std::vector<Clause>{{col("HbA1c"), Comparator::Greater, 21.55},
                                            {col("FastingGlucose"), Comparator::Greater, 376.14}}));
}

TEST(Grammar, MalformedComparatorCarriesSpan) {
  try {
    parse_action_text("Age >> 5", schema());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
    EXPECT_EQ(e.length(), 1u);
    EXPECT_EQ(e.span(), ">");
  }
}

TEST(Grammar, UnknownFeatureIsParseError) {
  try {
    parse_action_text("Weather > 3", schema());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("Weather"), std::string::npos);
  }
}

TEST(Grammar, ListingLineForms) {
  const auto a = parse_action_text(
      "3. Subgroup: Individuals with Insulin < 0; Reason: Negative values for insulin are not possible", schema());
  EXPECT_EQ(std::get<RemoveSubgroupRetrain>(a).predicates.at(0).clauses.at(0).feature, col("Insulin"));
  const auto b = parse_action_text("Individuals with Blood Pressure > 166.85 and age <= 20", schema());
  const auto& cl = std::get<RemoveSubgroupRetrain>(b).predicates.at(0).clauses;
  ASSERT_EQ(cl.size(), 2u);
  EXPECT_EQ(cl[0].feature, col("BloodPressure"));
  EXPECT_EQ(cl[1], (Clause{col("Age"), Comparator::LessEq, 20.0}));
  const auto c = parse_action_text("PhysicalActivity \xE2\x89\xA5 -1e-3", schema());
  EXPECT_EQ(std::get<RemoveSubgroupRetrain>(c).predicates.at(0).clauses.at(0).cmp, Comparator::GreaterEq);
}

TEST(Grammar, StructuredForms) {
  EXPECT_EQ(parse_action_text("NoOp", schema()), Action{NoOp{}});
  EXPECT_EQ(parse_action_text("RetrainNew(3)", schema()), Action{RetrainNew{3}});
  EXPECT_EQ(parse_action_text(" PartialUpdate( 2 ) ", schema()), Action{PartialUpdate{2}});
  EXPECT_EQ(parse_action_text("DecorruptFeature(Insulin, 9.5)", schema()), (Action{DecorruptFeature{col("Insulin"), 9.5}}));
  EXPECT_THROW(parse_action_text("RetrainNew(0)", schema()), ParseError);
  EXPECT_THROW(parse_action_text("DecorruptFeature(Insulin, -2)", schema()), ParseError);
  EXPECT_THROW(parse_action_text("NoOp extra", schema()), ParseError);
  EXPECT_THROW(parse_action_text("SubgroupModel(Age > 5", schema()), ParseError);
}

TEST(Grammar, RenderParseIdentity) {
  rng::Stream rs(3, "grammar.roundtrip");
  auto rand_pred = [&] {
    Predicate p;
    const auto n = 1 + rs.below(3);
    for (std::size_t k = 0; k < n; ++k)
      p.clauses.push_back({static_cast<std::size_t>(rs.below(8)), static_cast<Comparator>(rs.below(4)),
                           rs.normal() * std::pow(10.0, static_cast<double>(rs.below(6)) - 2.0)});
    return p;
  };
  for (int trial = 0; trial < 300; ++trial) {
    Action a;
    switch (rs.below(7)) {
      case 0: a = NoOp{}; break;
      case 1: a = RetrainNew{1 + rs.below(20)}; break;
      case 2: a = PartialUpdate{1 + rs.below(20)}; break;
      case 3: a = AddEnsembleMember{1 + rs.below(20)}; break;
      case 4: {
        RemoveSubgroupRetrain r;
        for (std::size_t k = 0, n = 1 + rs.below(3); k < n; ++k) r.predicates.push_back(rand_pred());
        r.window = rs.below(3);
        a = r;
        break;
      }
      case 5: a = DecorruptFeature{static_cast<std::size_t>(rs.below(8)), 0.01 + 20.0 * rs.uniform()}; break;
      default: a = SubgroupModel{rand_pred()}; break;
    }
    const auto text = render(a, schema());
    EXPECT_EQ(parse_action_text(text, schema()), a) << text;
    EXPECT_EQ(action_from_json(action_json(a, schema()), schema()), a) << text;
  }
}

TEST(Grammar, ListingSkipsBadLines) {
  std::vector<std::string> warnings;
  const auto acts = parse_subgroup_listing(
      "1. Subgroup: Individuals with Insulin < 0; Reason: impossible\n"
      "2. Subgroup: Individuals with Age >> 5; Reason: typo\n"
      "\n"
      "3. Subgroup: Individuals with BMI > 60; Reason: extreme\n",
      schema(), true, &warnings);
  ASSERT_EQ(acts.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<SubgroupModel>(acts[0]));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Policy, MixtureLawOnRandomInstances) {
  rng::Stream rs(10, "policy.law");
  for (int inst = 0; inst < 5; ++inst) {
    MixturePolicy pol;
    std::vector<double> zw(3);
    for (auto& v : zw) v = rs.uniform();
    const auto zeta = DiagnosisVector::normalized(zw);
    for (int z = 0; z < 3; ++z) {
      std::vector<double> w(4);
      for (auto& v : w) v = rs.uniform();
      pol.components.push_back(DiagnosisVector::normalized(w).probs);
    }
    const auto expect = pol.mixture(zeta);
    std::vector<double> freq(4, 0.0);
    auto draw_rs = rs.child("draws", static_cast<std::uint64_t>(inst));
    for (int d = 0; d < 10000; ++d) freq[pol.sample(zeta, draw_rs).second] += 1e-4;
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(freq[a], expect[a], 0.02);
  }
}

TEST(Policy, DataQualityDominatesDraws) {
  // reasons: data quality, concept drift, overfitting; actions: removal+retrain,
  // retrain, switch model
  MixturePolicy pol{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  const DiagnosisVector zeta{{0.95, 0.03, 0.02}};
  rng::Stream rs(11, "policy.dq");
  int data_quality = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // m = 2 draws per trial
    for (int d = 0; d < 2; ++d) data_quality += pol.sample(zeta, rs).second == 0;
  }
  EXPECT_NEAR(data_quality / 2000.0, 0.95, 0.02);
}

TEST(Policy, ExpectedRiskIsLinear) {
  MixturePolicy pol{{{0.5, 0.5}, {1.0, 0.0}}};
  const std::vector<double> risks = {0.2, 0.6};
  EXPECT_NEAR(pol.expected_risk({{1.0, 0.0}}, risks), 0.4, 1e-12);
  EXPECT_NEAR(pol.expected_risk({{0.0, 1.0}}, risks), 0.2, 1e-12);
  EXPECT_NEAR(pol.expected_risk({{0.5, 0.5}}, risks), 0.3, 1e-12);
}

TEST(Policy, ConfigValidationAndJson) {
  PolicyConfig c;
  c.m = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.menus[ReasonKind::NoIssue] = {{ActionTemplate::NoOp, 0.7}};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.m = 7;
  const nlohmann::json j = c;
  const auto back = j.get<PolicyConfig>();
  EXPECT_EQ(back.m, 7u);
  EXPECT_EQ(back.menus.at(ReasonKind::FeatureCorrupted).size(), 3u);
  EXPECT_EQ(back.menus.at(ReasonKind::FeatureCorrupted)[1].action, ActionTemplate::DecorruptFeature);
}

namespace {

struct ProposalFixture {
  LabeledBatch before, after;
  PredictorPtr model;
  EvidenceReport ev;
  ReasonSpace space = ReasonSpace::canonical(schema());
};

ProposalFixture proposal_fixture(std::uint64_t seed) {
  ProposalFixture f;
  f.before = phase(3000, diabetes_pre_dgp(), seed, "before");
  f.model = fit_logistic(f.before);
  f.after = negative_values(phase(1000, diabetes_pre_dgp(), seed, "after"), "Insulin", 10.0, seed);
  f.ev = extract_evidence(f.before, f.after, *f.model, schema());
  return f;
}

}  // namespace

TEST(Propose, NoIssueGivesOnlyNoOp) {
  const auto f = proposal_fixture(20);
  const auto z = DiagnosisVector::one_hot(f.space.size(), *f.space.find_kind(ReasonKind::NoIssue));
  const auto acts = propose_actions(z, f.space, f.ev, {}, {}, rng::Stream(20, "propose"));
  EXPECT_EQ(acts, (std::vector<Action>{NoOp{}}));
}

TEST(Propose, InsulinReasonYieldsNonnegativityPredicate) {
  const auto f = proposal_fixture(21);
  const auto z = DiagnosisVector::one_hot(f.space.size(), *f.space.find_feature(col("Insulin")));
  const auto acts = propose_actions(z, f.space, f.ev, {}, {}, rng::Stream(21, "propose"));
  bool found = false;
  for (const auto& a : acts)
    if (render(a, schema()).find("Insulin < 0") != std::string::npos &&
        std::holds_alternative<RemoveSubgroupRetrain>(a))
      found = true;
  EXPECT_TRUE(found);
}

TEST(Propose, ListInvariants) {
  const auto f = proposal_fixture(22);
  rng::Stream rs(22, "propose.invariants");
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> w(f.space.size());
    for (auto& v : w) v = rs.uniform();
    PolicyConfig cfg;
    cfg.m = 1 + rs.below(25);
    const ProposalContext ctx{3, 30, trial % 2 ? std::size_t{1} : std::size_t{0}};
    const auto acts = propose_actions(DiagnosisVector::normalized(w), f.space, f.ev, cfg, ctx, rs.child("p", trial));
    EXPECT_LE(acts.size(), cfg.m);
    ASSERT_FALSE(acts.empty());
    EXPECT_EQ(acts.front(), Action{NoOp{}});
    for (std::size_t i = 0; i < acts.size(); ++i) {
      EXPECT_NO_THROW(validate(acts[i], schema()));
      for (std::size_t k = 0; k < i; ++k) EXPECT_FALSE(acts[i] == acts[k]);
    }
  }
}

TEST(Propose, DeterministicGivenSeed) {
  const auto f = proposal_fixture(23);
  const auto z = DiagnosisVector::uniform(f.space.size());
  const auto a = propose_actions(z, f.space, f.ev, {}, {2, 30}, rng::Stream(5, "propose"));
  const auto b = propose_actions(z, f.space, f.ev, {}, {2, 30}, rng::Stream(5, "propose"));
  EXPECT_EQ(a, b);
}

TEST(Propose, EarlyWarningAddsSinceDriftScope) {
  const auto f = proposal_fixture(25);
  const auto z = DiagnosisVector::one_hot(f.space.size(), *f.space.find_feature(col("Insulin")));
  const auto acts = propose_actions(z, f.space, f.ev, {}, {3, 30, 1}, rng::Stream(25, "propose"));
  bool onset = false, drift = false;
  for (const auto& a : acts)
    if (const auto* r = std::get_if<RemoveSubgroupRetrain>(&a)) {
      onset = onset || r->window == 0;
      drift = drift || r->window == 1;
    }
  EXPECT_TRUE(onset);
  EXPECT_TRUE(drift);
  const auto plain = propose_actions(z, f.space, f.ev, {}, {3, 30, 0}, rng::Stream(25, "propose"));
  for (const auto& a : plain) {
    if (const auto* r = std::get_if<RemoveSubgroupRetrain>(&a)) {
      EXPECT_EQ(r->window, 0u);
    }
  }
}

TEST(Apply, RemovalWindowLimitsFitRows) {
  auto old_rows = phase(1000, diabetes_pre_dgp(), 26, "old");
  auto new_rows = phase(500, diabetes_post_dgp(), 26, "new");
  const auto history = concat(std::vector<LabeledBatch>{old_rows, new_rows});
  const auto model = fit_logistic(old_rows);
  const auto eval = phase(2000, diabetes_post_dgp(), 26, "eval");
  const Predicate none{{{col("Age"), Comparator::Greater, 1e9}}};
  const AdaptationBuffers buf{history, 1500, 500};
  const auto wide = apply(RemoveSubgroupRetrain{{none}, 0}, model, buf);
  const auto narrow = apply(RemoveSubgroupRetrain{{none}, 1}, model, buf);
  EXPECT_GT(accuracy(*narrow.model, eval), accuracy(*wide.model, eval) + 0.05);
}

TEST(Propose, WithoutEvidenceOnlyRetrainsOverHistory) {
  const auto f = proposal_fixture(24);
  PolicyConfig cfg;
  cfg.instantiate_from_evidence = false;
  const auto acts = propose_actions(DiagnosisVector::uniform(f.space.size()), f.space, f.ev, cfg, {2, 30},
                                    rng::Stream(24, "propose"));
  for (const auto& a : acts) {
    EXPECT_LE(a.index(), 3u);
    if (const auto* r = std::get_if<RetrainNew>(&a)) {
      EXPECT_EQ(r->window, 30u);
    }
  }
}

TEST(Apply, NoOpIsBitIdentical) {
  const auto data = phase(2000, diabetes_pre_dgp(), 30, "noop");
  const auto model = fit_logistic(data);
  const auto res = apply(NoOp{}, model, {data, 0, 500});
  ASSERT_TRUE(res.feasible);
  EXPECT_EQ(res.model->predict_proba(data.X), model->predict_proba(data.X));
}

TEST(Apply, DecorruptInvertsColumnScale) {
  const auto train = phase(5000, diabetes_pre_dgp(), 31, "train");
  const auto test = phase(3000, diabetes_pre_dgp(), 31, "test");
  const auto model = fit_logistic(train);
  CorruptionSpec spec;
  spec.columns = {"Cholesterol"};
  spec.fraction = 1.0;
  spec.outlier_factor = 10.0;
  spec.mode = CorruptionMode::ScaleColumn;
  const auto bad = corrupt(test, spec, schema(), 31);
  const auto res = apply(DecorruptFeature{col("Cholesterol"), 10.0}, model, {bad, 0, 500});
  EXPECT_LT(accuracy(*model, bad), accuracy(*model, test) - 0.02);
  EXPECT_NEAR(accuracy(*res.model, bad), accuracy(*model, test), 0.02);
}

// Insulin carries too little signal in the post-shift concept for removal to
// matter (gap ~0.001), so the nonnegativity example uses PhysicalActivity.
TEST(Apply, RemovalBeatsNaiveRetrainOnNegativeValues) {
  double removal = 0.0, retrain = 0.0;
  for (std::uint64_t seed = 32; seed < 35; ++seed) {
    const auto fit = negative_values(phase(2000, diabetes_post_dgp(), seed, "fit"), "PhysicalActivity", 10.0, seed);
    const auto eval =
        negative_values(phase(2000, diabetes_post_dgp(), seed, "eval"), "PhysicalActivity", 10.0, seed + 100);
    const auto incumbent = fit_logistic(phase(2000, diabetes_pre_dgp(), seed, "pre"));
    const AdaptationBuffers buf{fit, fit.size(), 500};
    Predicate p{{{col("PhysicalActivity"), Comparator::Less, 0.0}}};
    removal += accuracy(*apply(RemoveSubgroupRetrain{{p}}, incumbent, buf).model, eval);
    retrain += accuracy(*apply(RetrainNew{4}, incumbent, buf).model, eval);
  }
  EXPECT_GE(removal / 3.0, retrain / 3.0 + 0.05);
}

TEST(Apply, RemovingEverythingIsInfeasible) {
  const auto data = phase(500, diabetes_pre_dgp(), 36, "inf");
  const auto model = fit_logistic(data);
  Predicate all{{{col("Age"), Comparator::Greater, -1e9}}};
  const auto res = apply(RemoveSubgroupRetrain{{all}}, model, {data, 0, 500});
  EXPECT_FALSE(res.feasible);
  EXPECT_EQ(res.model, nullptr);
  Predicate none{{{col("Age"), Comparator::Greater, 1e9}}};
  EXPECT_FALSE(apply(SubgroupModel{none}, model, {data, 0, 500}).feasible);
  EXPECT_FALSE(apply(RetrainNew{1}, model, {LabeledBatch{}, 0, 500}).feasible);
}

TEST(Apply, SingleClassRemainderFallsBackToConstant) {
  auto data = phase(400, diabetes_pre_dgp(), 37, "single");
  const auto age = col("Age");
  for (std::size_t i = 0; i < data.size(); ++i) data.X(i, age) = data.y[i] ? 100.0 : 10.0;
  const auto model = fit_logistic(data);
  Predicate young{{{age, Comparator::Less, 50.0}}};
  const auto res = apply(RemoveSubgroupRetrain{{young}}, model, {data, 0, 500});
  ASSERT_TRUE(res.feasible);
  const auto j = res.model->to_json();
  EXPECT_EQ(j.at("base").at("kind"), "constant");
}

TEST(Apply, EnsembleWeightsAndInputUntouched) {
  const auto pre = phase(2000, diabetes_pre_dgp(), 38, "pre");
  const auto post = phase(1000, diabetes_post_dgp(), 38, "post");
  const auto model = fit_logistic(pre);
  const auto before = model->predict_proba(post.X);
  const auto res = apply(AddEnsembleMember{2}, model, {post, 0, 500});
  const auto* ens = dynamic_cast<const WeightedEnsemble*>(res.model.get());
  ASSERT_NE(ens, nullptr);
  ASSERT_EQ(ens->members().size(), 2u);
  EXPECT_GT(ens->weights()[1], ens->weights()[0]);
  EXPECT_EQ(model->predict_proba(post.X), before);
  const auto again = apply(AddEnsembleMember{2}, res.model, {post, 0, 500});
  EXPECT_EQ(dynamic_cast<const WeightedEnsemble&>(*again.model).members().size(), 3u);
}

TEST(Apply, RetrainAndPartialUseWindow) {
  const auto pre = phase(2000, diabetes_pre_dgp(), 39, "pre");
  const auto post = phase(1000, diabetes_post_dgp(), 39, "post");
  LabeledBatch hist = concat(std::vector<LabeledBatch>{pre, post});
  const auto model = fit_logistic(pre);
  const AdaptationBuffers buf{hist, 1000, 500};
  const auto fresh = apply(RetrainNew{2}, model, buf);
  const auto partial = apply(PartialUpdate{2}, model, buf);
  EXPECT_GT(accuracy(*fresh.model, post), accuracy(*model, post) + 0.2);
  EXPECT_GT(accuracy(*partial.model, post), accuracy(*model, post) + 0.1);
  const auto all = apply(RetrainNew{100}, model, buf);
  EXPECT_LT(accuracy(*all.model, post), accuracy(*fresh.model, post));
}

TEST(Apply, SubgroupModelRoutes) {
  const auto pre = phase(3000, diabetes_pre_dgp(), 40, "pre");
  auto post = phase(3000, diabetes_post_dgp(), 40, "post");
  const auto model = fit_logistic(pre);
  // the shifted concept only applies to older individuals
  auto mixed = pre;
  const auto age = col("Age");
  for (std::size_t i = 0; i < mixed.size(); ++i)
    if (post.X(i, age) > 55.0) {
      for (std::size_t j = 0; j < mixed.X.cols; ++j) mixed.X(i, j) = post.X(i, j);
      mixed.y[i] = post.y[i];
    }
  Predicate old{{{age, Comparator::Greater, 55.0}}};
  const auto res = apply(SubgroupModel{old}, model, {mixed, 0, 500});
  ASSERT_TRUE(res.feasible);
  EXPECT_GT(accuracy(*res.model, mixed), accuracy(*model, mixed) + 0.05);
}

TEST(LlmProposal, ParsesScriptedSubgroups) {
  const auto f = proposal_fixture(41);
  ScriptedProvider mock;
  mock.script(TemplateId::SubgroupRemoval,
              {std::string("1. Subgroup: Individuals with Insulin < 0; Reason: Negative values indicate data errors\n"
                           "2. Subgroup: Individuals with Age > 120; Reason: implausible\n")});
  mock.script(TemplateId::SubgroupRetrain,
              {std::string("1. Subgroup: Individuals with BMI > 40; Reason: different physiology\n")});
  const auto z = DiagnosisVector::one_hot(f.space.size(), *f.space.find_feature(col("Insulin")));
  const auto acts = propose_actions_llm(z, f.space, f.ev, mock);
  ASSERT_EQ(acts.size(), 4u);
  EXPECT_EQ(acts[0], Action{NoOp{}});
  EXPECT_EQ(render(acts[1], schema()), "RemoveSubgroupRetrain(Insulin < 0)");
  EXPECT_EQ(render(acts[3], schema()), "SubgroupModel(BMI > 40)");
  const auto prompt = mock.requests().at(0).prompt;
  EXPECT_NE(prompt.find("Suggest 10 possible subgroups"), std::string::npos);
  EXPECT_NE(prompt.find("FeatureCorrupted(Insulin): 100.0%"), std::string::npos);
}
