#pragma once
// Structured adaptation actions: predicates, the action catalog with its
// textual grammar (docs/action_grammar.md), the hierarchical policy that
// samples a reason and then an action template, and the interpreter that
// turns an action into a new predictor.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "shml/data.hpp"
#include "shml/diagnosis.hpp"
#include "shml/error.hpp"
#include "shml/format.hpp"
#include "shml/json_enum.hpp"
#include "shml/llm.hpp"
#include "shml/models.hpp"
#include "shml/rng.hpp"

namespace shml {

// ---------------------------------------------------------------------------
// Predicates

enum class Comparator { Less, Greater, LessEq, GreaterEq };

inline std::string_view comparator_text(Comparator c) {
  switch (c) {
    case Comparator::Less: return "<";
    case Comparator::Greater: return ">";
    case Comparator::LessEq: return "<=";
    case Comparator::GreaterEq: return ">=";
  }
  return "?";
}

struct Clause {
  std::size_t feature = 0;
  Comparator cmp = Comparator::Less;
  double threshold = 0.0;

  bool matches(std::span<const double> row) const {
    const double x = row[feature];
    switch (cmp) {
      case Comparator::Less: return x < threshold;
      case Comparator::Greater: return x > threshold;
      case Comparator::LessEq: return x <= threshold;
      case Comparator::GreaterEq: return x >= threshold;
    }
    return false;
  }
  friend bool operator==(const Clause&, const Clause&) = default;
};

// Conjunction of clauses.
struct Predicate {
  std::vector<Clause> clauses;

  bool matches(std::span<const double> row) const {
    for (const auto& c : clauses)
      if (!c.matches(row)) return false;
    return !clauses.empty();
  }
  friend bool operator==(const Predicate&, const Predicate&) = default;
};

inline bool any_match(std::span<const Predicate> preds, std::span<const double> row) {
  for (const auto& p : preds)
    if (p.matches(row)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Actions

struct NoOp {
  friend bool operator==(const NoOp&, const NoOp&) = default;
};
struct RetrainNew {
  std::size_t window = 1;
  friend bool operator==(const RetrainNew&, const RetrainNew&) = default;
};
struct PartialUpdate {
  std::size_t window = 1;
  friend bool operator==(const PartialUpdate&, const PartialUpdate&) = default;
};
struct AddEnsembleMember {
  std::size_t window = 1;
  friend bool operator==(const AddEnsembleMember&, const AddEnsembleMember&) = default;
};
struct RemoveSubgroupRetrain {
  std::vector<Predicate> predicates;
  std::size_t window = 0;  // batches to fit on; 0 = since the estimated onset
  friend bool operator==(const RemoveSubgroupRetrain&, const RemoveSubgroupRetrain&) = default;
};
struct DecorruptFeature {
  std::size_t feature = 0;
  double scale = 1.0;
  friend bool operator==(const DecorruptFeature&, const DecorruptFeature&) = default;
};
struct SubgroupModel {
  Predicate predicate;
  friend bool operator==(const SubgroupModel&, const SubgroupModel&) = default;
};

// Alternative order is the catalog order used for tie-breaking (NoOp first).
using Action =
    std::variant<NoOp, RetrainNew, PartialUpdate, AddEnsembleMember, RemoveSubgroupRetrain, DecorruptFeature, SubgroupModel>;

inline constexpr std::array<std::string_view, 7> kActionNames = {
    "NoOp", "RetrainNew", "PartialUpdate", "AddEnsembleMember", "RemoveSubgroupRetrain", "DecorruptFeature", "SubgroupModel"};

inline std::string_view action_name(const Action& a) { return kActionNames[a.index()]; }

inline void validate(const Action& a, const Schema& schema) {
  auto check_pred = [&](const Predicate& p) {
    if (p.clauses.empty()) throw ConfigError("predicate needs at least one clause");
    for (const auto& c : p.clauses)
      if (c.feature >= schema.size()) throw ConfigError("predicate refers to unknown feature");
  };
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RetrainNew> || std::is_same_v<T, PartialUpdate> ||
                      std::is_same_v<T, AddEnsembleMember>) {
          if (v.window < 1) throw ConfigError("action window must be >= 1");
        } else if constexpr (std::is_same_v<T, RemoveSubgroupRetrain>) {
          if (v.predicates.empty()) throw ConfigError("RemoveSubgroupRetrain needs a predicate");
          for (const auto& p : v.predicates) check_pred(p);
        } else if constexpr (std::is_same_v<T, DecorruptFeature>) {
          if (v.feature >= schema.size()) throw ConfigError("DecorruptFeature refers to unknown feature");
          if (!(v.scale > 0.0)) throw ConfigError("DecorruptFeature scale must be > 0");
        } else if constexpr (std::is_same_v<T, SubgroupModel>) {
          check_pred(v.predicate);
        }
      },
      a);
}

// ---------------------------------------------------------------------------
// Textual form

inline std::string render(const Predicate& p, const Schema& schema) {
  std::string out;
  for (std::size_t i = 0; i < p.clauses.size(); ++i) {
    const auto& c = p.clauses[i];
    if (i) out += " & ";
    out += schema.names.at(c.feature);
    out += ' ';
    out += comparator_text(c.cmp);
    out += ' ';
    out += shortest(c.threshold);
  }
  return out;
}

inline std::string render(const Action& a, const Schema& schema) {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, NoOp>) {
          return "NoOp";
        } else if constexpr (std::is_same_v<T, RetrainNew> || std::is_same_v<T, PartialUpdate> ||
                             std::is_same_v<T, AddEnsembleMember>) {
          return std::string(kActionNames[Action(v).index()]) + "(" + std::to_string(v.window) + ")";
        } else if constexpr (std::is_same_v<T, RemoveSubgroupRetrain>) {
          std::string s = "RemoveSubgroupRetrain(";
          for (std::size_t i = 0; i < v.predicates.size(); ++i) {
            if (i) s += " | ";
            s += render(v.predicates[i], schema);
          }
          if (v.window) s += "; " + std::to_string(v.window);
          return s + ")";
        } else if constexpr (std::is_same_v<T, DecorruptFeature>) {
          return "DecorruptFeature(" + schema.names.at(v.feature) + ", " + shortest(v.scale) + ")";
        } else {
          return "SubgroupModel(" + render(v.predicate, schema) + ")";
        }
      },
      a);
}

namespace detail {

class ActionParser {
 public:
  ActionParser(std::string_view text, const Schema& schema) : text_(text), schema_(schema) {}

  Action parse() {
    skip_ws();
    for (std::size_t k = 0; k < kActionNames.size(); ++k) {
      const auto name = kActionNames[k];
      if (text_.substr(pos_, name.size()) != name) continue;
      const std::size_t after = pos_ + name.size();
      if (after < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[after])) || text_[after] == '_'))
        continue;
      pos_ = after;
      Action a = parse_structured(k);
      skip_ws();
      if (pos_ != text_.size()) fail("unexpected trailing text", pos_, text_.size() - pos_);
      return a;
    }
    return parse_subgroup_line();
  }

  Predicate parse_predicate_only() {
    skip_ws();
    auto p = parse_predicate();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing text", pos_, text_.size() - pos_);
    return p;
  }

 private:
  [[noreturn]] void fail(const std::string& what, std::size_t at, std::size_t len = 1) const {
    const std::size_t off = std::min(at, text_.size());
    const std::size_t n = std::min(len, text_.size() - off);
    throw ParseError(what + " at offset " + std::to_string(off) + (n ? " ('" + std::string(text_.substr(off, n)) + "')" : ""),
                     std::string(text_), off, n);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(std::string_view tok) {
    skip_ws();
    if (text_.substr(pos_, tok.size()) == tok) {
      pos_ += tok.size();
      return true;
    }
    return false;
  }

  bool eat_word_ci(std::string_view word) {
    skip_ws();
    if (pos_ + word.size() > text_.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i)
      if (std::tolower(static_cast<unsigned char>(text_[pos_ + i])) != std::tolower(static_cast<unsigned char>(word[i])))
        return false;
    const std::size_t end = pos_ + word.size();
    if (end < text_.size() && std::isalnum(static_cast<unsigned char>(text_[end])) &&
        std::isalnum(static_cast<unsigned char>(word.back())))
      return false;
    pos_ = end;
    return true;
  }

  void expect(std::string_view tok) {
    if (!eat(tok)) fail("expected '" + std::string(tok) + "'", pos_);
  }

  std::size_t parse_count() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (start == pos_) fail("expected a positive integer", start);
    const auto v = parse_double(text_.substr(start, pos_ - start));
    if (!v || *v < 1) fail("expected a positive integer", start, pos_ - start);
    return static_cast<std::size_t>(*v);
  }

  double parse_number() {
    skip_ws();
    const std::size_t start = pos_;
    std::size_t end = pos_;
    if (end < text_.size() && (text_[end] == '-' || text_[end] == '+')) ++end;
    while (end < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.' ||
                                  text_[end] == 'e' || text_[end] == 'E' ||
                                  ((text_[end] == '-' || text_[end] == '+') && (text_[end - 1] == 'e' || text_[end - 1] == 'E'))))
      ++end;
    const auto v = parse_double(text_.substr(start, end - start));
    if (!v) {
      std::size_t len = std::max<std::size_t>(1, end - start);
      fail("expected a number", start, len);
    }
    pos_ = end;
    return *v;
  }

  static bool is_feature_stop(char c) {
    return c == '<' || c == '>' || c == '(' || c == ')' || c == '&' || c == ';' || c == '|' || c == ',' ||
           c == '\xE2';  // first byte of the UTF-8 sequences for the unicode comparators
  }

  std::size_t parse_feature() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_feature_stop(text_[pos_])) ++pos_;
    const auto name = trim(text_.substr(start, pos_ - start));
    if (name.empty()) fail("expected a feature name", start);
    if (auto j = schema_.find(name)) return *j;
    fail("unknown feature '" + std::string(name) + "'", start, pos_ - start);
  }

  Comparator parse_comparator() {
    skip_ws();
    if (eat("<=") || eat("\xE2\x89\xA4")) return Comparator::LessEq;
    if (eat(">=") || eat("\xE2\x89\xA5")) return Comparator::GreaterEq;
    if (eat("<")) return Comparator::Less;
    if (eat(">")) return Comparator::Greater;
    fail("expected a comparator", pos_);
  }

  void parse_clause(std::vector<Clause>& out) {
    if (eat("(")) {
      parse_conjunction(out);
      expect(")");
      return;
    }
    Clause c;
    c.feature = parse_feature();
    c.cmp = parse_comparator();
    c.threshold = parse_number();
    out.push_back(c);
  }

  void parse_conjunction(std::vector<Clause>& out) {
    parse_clause(out);
    while (eat("&&") || eat("&") || eat_word_ci("and")) parse_clause(out);
  }

  Predicate parse_predicate() {
    Predicate p;
    parse_conjunction(p.clauses);
    return p;
  }

  Action parse_structured(std::size_t k) {
    if (k == 0) return NoOp{};
    expect("(");
    Action a;
    switch (k) {
      case 1: a = RetrainNew{parse_count()}; break;
      case 2: a = PartialUpdate{parse_count()}; break;
      case 3: a = AddEnsembleMember{parse_count()}; break;
      case 4: {
        RemoveSubgroupRetrain r;
        r.predicates.push_back(parse_predicate());
        while (eat("|")) r.predicates.push_back(parse_predicate());
        if (eat(";")) r.window = parse_count();
        a = std::move(r);
        break;
      }
      case 5: {
        DecorruptFeature d;
        d.feature = parse_feature();
        expect(",");
        const std::size_t at = pos_;
        d.scale = parse_number();
        if (!(d.scale > 0.0)) fail("scale must be > 0", at, pos_ - at);
        a = d;
        break;
      }
      default: a = SubgroupModel{parse_predicate()}; break;
    }
    expect(")");
    return a;
  }

  // [N.] [Subgroup:] [Individuals with] predicate [; free text]
  Action parse_subgroup_line() {
    skip_ws();
    std::size_t p = pos_;
    while (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) ++p;
    if (p > pos_ && p < text_.size() && (text_[p] == '.' || text_[p] == ')')) pos_ = p + 1;
    eat_word_ci("subgroup:");
    eat_word_ci("individuals with");
    Predicate pred = parse_predicate();
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] != ';') fail("unexpected text after predicate", pos_, text_.size() - pos_);
    return RemoveSubgroupRetrain{{std::move(pred)}};
  }

  std::string_view text_;
  const Schema& schema_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Parses the documented action grammar, including bare subgroup lines such
// as "Subgroup: Individuals with Insulin < 0" (read as a removal).
inline Action parse_action_text(std::string_view text, const Schema& schema) {
  return detail::ActionParser(text, schema).parse();
}

inline Predicate parse_predicate(std::string_view text, const Schema& schema) {
  return detail::ActionParser(text, schema).parse_predicate_only();
}

// Parses a numbered listing of subgroup lines. Unparseable lines are skipped
// and reported through `warnings`. With as_model the predicates become
// SubgroupModel actions instead of removals.
inline std::vector<Action> parse_subgroup_listing(const std::string& text, const Schema& schema, bool as_model = false,
                                                  std::vector<std::string>* warnings = nullptr) {
  std::vector<Action> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    if (line.empty() || line == "\"\"\"") continue;
    try {
      auto a = parse_action_text(line, schema);
      if (as_model)
        if (auto* r = std::get_if<RemoveSubgroupRetrain>(&a); r && r->predicates.size() == 1)
          a = SubgroupModel{r->predicates.front()};
      out.push_back(std::move(a));
    } catch (const ParseError& e) {
      if (warnings) warnings->push_back(std::string("skipped line: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json predicate_json(const Predicate& p, const Schema& schema) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : p.clauses)
    j.push_back({{"feature", schema.names.at(c.feature)}, {"op", comparator_text(c.cmp)}, {"value", c.threshold}});
  return j;
}

inline Predicate predicate_from_json(const nlohmann::json& j, const Schema& schema) {
  Predicate p;
  for (const auto& c : j) {
    Clause cl;
    cl.feature = schema.index_of(c.at("feature").get<std::string>());
    const auto op = c.at("op").get<std::string>();
    if (op == "<") cl.cmp = Comparator::Less;
    else if (op == ">") cl.cmp = Comparator::Greater;
    else if (op == "<=") cl.cmp = Comparator::LessEq;
    else if (op == ">=") cl.cmp = Comparator::GreaterEq;
    else throw ConfigError("unknown comparator '" + op + "'");
    cl.threshold = c.at("value").get<double>();
    p.clauses.push_back(cl);
  }
  if (p.clauses.empty()) throw ConfigError("predicate needs at least one clause");
  return p;
}

inline nlohmann::json action_json(const Action& a, const Schema& schema) {
  nlohmann::json j = {{"type", action_name(a)}, {"text", render(a, schema)}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RetrainNew> || std::is_same_v<T, PartialUpdate> ||
                      std::is_same_v<T, AddEnsembleMember>) {
          j["window"] = v.window;
        } else if constexpr (std::is_same_v<T, RemoveSubgroupRetrain>) {
          j["predicates"] = nlohmann::json::array();
          for (const auto& p : v.predicates) j["predicates"].push_back(predicate_json(p, schema));
          if (v.window) j["window"] = v.window;
        } else if constexpr (std::is_same_v<T, DecorruptFeature>) {
          j["feature"] = schema.names.at(v.feature);
          j["scale"] = v.scale;
        } else if constexpr (std::is_same_v<T, SubgroupModel>) {
          j["predicate"] = predicate_json(v.predicate, schema);
        }
      },
      a);
  return j;
}

inline Action action_from_json(const nlohmann::json& j, const Schema& schema) {
  const auto type = j.at("type").get<std::string>();
  Action a;
  if (type == "NoOp") a = NoOp{};
  else if (type == "RetrainNew") a = RetrainNew{j.at("window").get<std::size_t>()};
  else if (type == "PartialUpdate") a = PartialUpdate{j.at("window").get<std::size_t>()};
  else if (type == "AddEnsembleMember") a = AddEnsembleMember{j.at("window").get<std::size_t>()};
  else if (type == "RemoveSubgroupRetrain") {
    RemoveSubgroupRetrain r;
    for (const auto& p : j.at("predicates")) r.predicates.push_back(predicate_from_json(p, schema));
    r.window = j.value("window", std::size_t{0});
    a = std::move(r);
  } else if (type == "DecorruptFeature") a = DecorruptFeature{schema.index_of(j.at("feature").get<std::string>()), j.at("scale").get<double>()};
  else if (type == "SubgroupModel") a = SubgroupModel{predicate_from_json(j.at("predicate"), schema)};
  else throw ConfigError("unknown action type '" + type + "'");
  validate(a, schema);
  return a;
}

// ---------------------------------------------------------------------------
// Hierarchical policy

// components[z][a] = pi(a | z). Sampling draws z ~ zeta, then a ~ pi(.|z), so
// the marginal over actions is sum_z zeta(z) pi(a|z).
struct MixturePolicy {
  std::vector<std::vector<double>> components;

  void validate() const {
    if (components.empty()) throw ConfigError("policy has no components");
    const auto width = components.front().size();
    for (const auto& c : components) {
      if (c.size() != width || width == 0) throw ConfigError("policy components differ in width");
      double total = 0.0;
      for (double v : c) {
        if (!(v >= 0.0)) throw ConfigError("policy weights must be nonnegative");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError("policy component does not sum to 1");
    }
  }

  std::size_t actions() const { return components.empty() ? 0 : components.front().size(); }

  std::vector<double> mixture(const DiagnosisVector& zeta) const {
    if (zeta.size() != components.size()) throw DimensionError("diagnosis and policy sizes differ");
    std::vector<double> out(actions(), 0.0);
    for (std::size_t z = 0; z < components.size(); ++z)
      for (std::size_t a = 0; a < out.size(); ++a) out[a] += zeta[z] * components[z][a];
    return out;
  }

  std::pair<std::size_t, std::size_t> sample(const DiagnosisVector& zeta, rng::Stream& rs) const {
    const auto z = sample_index(zeta.probs, rs);
    return {z, sample_index(components[z], rs)};
  }

  double expected_risk(const DiagnosisVector& zeta, std::span<const double> risks) const {
    const auto mix = mixture(zeta);
    if (risks.size() != mix.size()) throw DimensionError("risk vector size differs from action count");
    double r = 0.0;
    for (std::size_t a = 0; a < mix.size(); ++a) r += mix[a] * risks[a];
    return r;
  }
};

// Action templates are the catalog entries before instantiation.
enum class ActionTemplate {
  NoOp,
  RetrainNew,
  PartialUpdate,
  AddEnsembleMember,
  RemoveSubgroupRetrain,
  DecorruptFeature,
  SubgroupModel
};

SHML_JSON_ENUM(ActionTemplate, {{ActionTemplate::NoOp, "NoOp"},
                                              {ActionTemplate::RetrainNew, "RetrainNew"},
                                              {ActionTemplate::PartialUpdate, "PartialUpdate"},
                                              {ActionTemplate::AddEnsembleMember, "AddEnsembleMember"},
                                              {ActionTemplate::RemoveSubgroupRetrain, "RemoveSubgroupRetrain"},
                                              {ActionTemplate::DecorruptFeature, "DecorruptFeature"},
                                              {ActionTemplate::SubgroupModel, "SubgroupModel"}})

SHML_JSON_ENUM(ReasonKind, {{ReasonKind::FeatureCorrupted, "FeatureCorrupted"},
                                          {ReasonKind::ConceptDrift, "ConceptDrift"},
                                          {ReasonKind::NoIssue, "NoIssue"}})

inline constexpr std::size_t kTemplateCount = 7;

struct MenuItem {
  ActionTemplate action = ActionTemplate::NoOp;
  double weight = 0.0;
};

using Menus = std::map<ReasonKind, std::vector<MenuItem>>;

inline Menus default_menus() {
  return {{ReasonKind::FeatureCorrupted,
           {{ActionTemplate::RemoveSubgroupRetrain, 0.5}, {ActionTemplate::DecorruptFeature, 0.3},
            {ActionTemplate::SubgroupModel, 0.2}}},
          {ReasonKind::ConceptDrift,
           {{ActionTemplate::RetrainNew, 0.5}, {ActionTemplate::PartialUpdate, 0.3},
            {ActionTemplate::AddEnsembleMember, 0.2}}},
          {ReasonKind::NoIssue, {{ActionTemplate::NoOp, 1.0}}}};
}

struct PolicyConfig {
  std::size_t m = 40;
  Menus menus = default_menus();
  std::uint64_t seed = 0;
  // Domain lower bounds; a removal predicate below the plausible range uses
  // the bound itself ("Insulin < 0") when it is tighter.
  std::map<std::string, double> hard_lower = {{"Insulin", 0.0}, {"PhysicalActivity", 0.0}};
  // Off = diagnosis ablation: no evidence-derived predicates or scales, and
  // retraining actions span the whole history.
  bool instantiate_from_evidence = true;
  // Adds one removal whose predicate list unions every sampled removal.
  bool merge_removals = true;

  void validate() const {
    if (m < 1) throw ConfigError("policy m must be >= 1");
    for (const auto& [kind, items] : menus) {
      double total = 0.0;
      for (const auto& it : items) {
        if (!(it.weight >= 0.0)) throw ConfigError("menu weights must be nonnegative");
        total += it.weight;
      }
      if (!items.empty() && std::abs(total - 1.0) > 1e-9) throw ConfigError("menu weights must sum to 1");
    }
  }
};

inline void to_json(nlohmann::json& j, const PolicyConfig& c) {
  nlohmann::json menus = nlohmann::json::object();
  for (const auto& [kind, items] : c.menus) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& it : items) arr.push_back({{"action", it.action}, {"weight", it.weight}});
    menus[nlohmann::json(kind).get<std::string>()] = arr;
  }
  j = {{"m", c.m},
       {"menus", menus},
       {"seed", c.seed},
       {"hard_lower", c.hard_lower},
       {"instantiate_from_evidence", c.instantiate_from_evidence},
       {"merge_removals", c.merge_removals}};
}

inline void from_json(const nlohmann::json& j, PolicyConfig& c) {
  const PolicyConfig d;
  c.m = j.value("m", d.m);
  c.seed = j.value("seed", d.seed);
  c.hard_lower = j.value("hard_lower", d.hard_lower);
  c.instantiate_from_evidence = j.value("instantiate_from_evidence", d.instantiate_from_evidence);
  c.merge_removals = j.value("merge_removals", d.merge_removals);
  if (j.contains("menus")) {
    c.menus.clear();
    for (const auto& [key, arr] : j["menus"].items()) {
      const auto kind = nlohmann::json(key).get<ReasonKind>();
      for (const auto& it : arr) c.menus[kind].push_back({it.at("action").get<ActionTemplate>(), it.at("weight").get<double>()});
    }
  } else {
    c.menus = d.menus;
  }
  c.validate();
}

// Policy components over the template catalog for a given reason space.
inline MixturePolicy policy_for(const ReasonSpace& space, const Menus& menus) {
  MixturePolicy pol;
  for (std::size_t i = 0; i < space.size(); ++i) {
    std::vector<double> row(kTemplateCount, 0.0);
    const auto it = menus.find(space[i].kind);
    if (it == menus.end() || it->second.empty()) {
      row[static_cast<std::size_t>(ActionTemplate::NoOp)] = 1.0;
    } else {
      for (const auto& item : it->second) row[static_cast<std::size_t>(item.action)] += item.weight;
    }
    pol.components.push_back(std::move(row));
  }
  pol.validate();
  return pol;
}

// Sizes the proposal needs beyond the evidence report.
struct ProposalContext {
  std::size_t onset_batches = 1;    // batches since the estimated shift onset
  std::size_t history_batches = 1;  // everything the buffers hold
  std::size_t drift_batches = 0;    // batches since the drift batch when a warning moved the onset earlier
};

// Removal predicates for feature j at the edge of its plausible range.
inline std::vector<Predicate> plausibility_predicates(const EvidenceReport& ev, std::size_t j,
                                                      const std::map<std::string, double>& hard_lower) {
  std::vector<Predicate> out;
  if (ev.below_fraction[j] > 0.0) {
    double thr = ev.lower[j];
    for (const auto& [name, bound] : hard_lower)
      if (Schema::normalize(name) == Schema::normalize(ev.features[j]) && bound > thr) thr = bound;
    out.push_back({{{j, Comparator::Less, thr}}});
  }
  if (ev.above_fraction[j] > 0.0 || out.empty()) out.push_back({{{j, Comparator::Greater, ev.upper[j]}}});
  return out;
}

// Samples m (reason, template) pairs and instantiates them. The result starts
// with NoOp, has no duplicates and holds at most m actions.
inline std::vector<Action> propose_actions(const DiagnosisVector& zeta, const ReasonSpace& space,
                                           const EvidenceReport& ev, const PolicyConfig& cfg,
                                           const ProposalContext& ctx, rng::Stream rs) {
  cfg.validate();
  zeta.validate(1e-6);
  if (zeta.size() != space.size()) throw DimensionError("diagnosis does not match reason space");
  const auto policy = policy_for(space, cfg.menus);
  const std::size_t retrain_window =
      std::max<std::size_t>(1, cfg.instantiate_from_evidence ? ctx.onset_batches : ctx.history_batches);
  // an early warning leaves the onset uncertain: offer the shorter scope too
  std::vector<std::size_t> windows{retrain_window};
  if (cfg.instantiate_from_evidence && ctx.drift_batches > 0 && ctx.drift_batches < retrain_window)
    windows.push_back(ctx.drift_batches);

  std::vector<Action> drawn;
  auto add_unique = [](std::vector<Action>& v, Action a) {
    if (std::find(v.begin(), v.end(), a) == v.end()) v.push_back(std::move(a));
  };
  for (std::size_t draw = 0; draw < cfg.m; ++draw) {
    const auto [z, t] = policy.sample(zeta, rs);
    const auto& reason = space[z];
    const auto tmpl = static_cast<ActionTemplate>(t);
    switch (tmpl) {
      case ActionTemplate::NoOp: break;
      case ActionTemplate::RetrainNew:
        for (auto w : windows) add_unique(drawn, RetrainNew{w});
        break;
      case ActionTemplate::PartialUpdate:
        for (auto w : windows) add_unique(drawn, PartialUpdate{w});
        break;
      case ActionTemplate::AddEnsembleMember:
        for (auto w : windows) add_unique(drawn, AddEnsembleMember{w});
        break;
      case ActionTemplate::RemoveSubgroupRetrain:
      case ActionTemplate::DecorruptFeature:
      case ActionTemplate::SubgroupModel: {
        if (!cfg.instantiate_from_evidence || reason.kind != ReasonKind::FeatureCorrupted) break;
        const std::size_t j = reason.feature;
        auto preds = plausibility_predicates(ev, j, cfg.hard_lower);
        if (tmpl == ActionTemplate::RemoveSubgroupRetrain) {
          add_unique(drawn, RemoveSubgroupRetrain{preds, 0});
          if (windows.size() > 1) add_unique(drawn, RemoveSubgroupRetrain{std::move(preds), windows.back()});
        } else if (tmpl == ActionTemplate::DecorruptFeature) {
          const double scale = ev.scale_ratio[j];
          if (scale > 0.0 && std::isfinite(scale)) add_unique(drawn, DecorruptFeature{j, scale});
        } else {
          // route the side holding more implausible rows
          const bool low = preds.front().clauses.front().cmp == Comparator::Less &&
                           (preds.size() == 1 || ev.below_fraction[j] >= ev.above_fraction[j]);
          add_unique(drawn, SubgroupModel{low ? preds.front() : preds.back()});
        }
        break;
      }
    }
  }

  std::vector<Action> out{NoOp{}};
  std::vector<Action> merged;
  if (cfg.merge_removals) {
    for (std::size_t k = 0; k < windows.size(); ++k) {
      RemoveSubgroupRetrain all;
      all.window = k == 0 ? 0 : windows[k];
      std::size_t sources = 0;
      for (const auto& a : drawn)
        if (const auto* r = std::get_if<RemoveSubgroupRetrain>(&a); r && r->window == all.window) {
          ++sources;
          for (const auto& p : r->predicates)
            if (std::find(all.predicates.begin(), all.predicates.end(), p) == all.predicates.end())
              all.predicates.push_back(p);
        }
      if (sources >= 2) merged.push_back(std::move(all));
    }
  }
  if (cfg.m < 3) merged.clear();
  const std::size_t reserved = std::min(merged.size(), cfg.m - 1);
  const std::size_t room = cfg.m - 1 - reserved;
  for (std::size_t i = 0; i < drawn.size() && i < room; ++i) out.push_back(drawn[i]);
  for (std::size_t i = 0; i < reserved; ++i) add_unique(out, std::move(merged[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Wrapper predictors

// Rows matching a predicate have the predicate's features replaced by
// replacement values before the base model sees them.
class ImputingPredictor final : public Predictor {
 public:
  ImputingPredictor(PredictorPtr base, std::vector<Predicate> predicates, std::vector<double> replacement)
      : base_(std::move(base)), predicates_(std::move(predicates)), replacement_(std::move(replacement)) {}

  std::vector<double> predict_proba(const Matrix& X) const override {
    Matrix Y = X;
    for (std::size_t i = 0; i < X.rows; ++i) {
      const auto row = X.row(i);
      for (const auto& p : predicates_)
        if (p.matches(row))
          for (const auto& c : p.clauses) Y(i, c.feature) = replacement_[c.feature];
    }
    return base_->predict_proba(Y);
  }

  std::string_view kind() const override { return "imputing"; }
  nlohmann::json to_json() const override {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : predicates_) {
      nlohmann::json cl = nlohmann::json::array();
      for (const auto& c : p.clauses)
        cl.push_back({{"feature", c.feature}, {"op", comparator_text(c.cmp)}, {"value", c.threshold}});
      preds.push_back(cl);
    }
    return {{"kind", "imputing"}, {"base", base_->to_json()}, {"predicates", preds}, {"replacement", replacement_}};
  }

 private:
  PredictorPtr base_;
  std::vector<Predicate> predicates_;
  std::vector<double> replacement_;
};

class DecorruptingPredictor final : public Predictor {
 public:
  DecorruptingPredictor(PredictorPtr base, std::size_t feature, double scale)
      : base_(std::move(base)), feature_(feature), scale_(scale) {}

  std::vector<double> predict_proba(const Matrix& X) const override {
    if (feature_ >= X.cols) throw DimensionError("decorrupted feature out of range");
    Matrix Y = X;
    for (std::size_t i = 0; i < Y.rows; ++i) Y(i, feature_) /= scale_;
    return base_->predict_proba(Y);
  }

  std::string_view kind() const override { return "decorrupting"; }
  nlohmann::json to_json() const override {
    return {{"kind", "decorrupting"}, {"base", base_->to_json()}, {"feature", feature_}, {"scale", scale_}};
  }

 private:
  PredictorPtr base_;
  std::size_t feature_;
  double scale_;
};

// Rows matching the predicate go to `inside`, the rest to `outside`.
class RoutingPredictor final : public Predictor {
 public:
  RoutingPredictor(Predicate predicate, PredictorPtr inside, PredictorPtr outside)
      : predicate_(std::move(predicate)), inside_(std::move(inside)), outside_(std::move(outside)) {}

  std::vector<double> predict_proba(const Matrix& X) const override {
    auto out = outside_->predict_proba(X);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < X.rows; ++i)
      if (predicate_.matches(X.row(i))) rows.push_back(i);
    if (rows.empty()) return out;
    Matrix sub(rows.size(), X.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto src = X.row(rows[k]);
      std::copy(src.begin(), src.end(), sub.row(k).begin());
    }
    const auto p = inside_->predict_proba(sub);
    for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = p[k];
    return out;
  }

  std::string_view kind() const override { return "routing"; }
  nlohmann::json to_json() const override {
    nlohmann::json cl = nlohmann::json::array();
    for (const auto& c : predicate_.clauses)
      cl.push_back({{"feature", c.feature}, {"op", comparator_text(c.cmp)}, {"value", c.threshold}});
    return {{"kind", "routing"}, {"predicate", cl}, {"inside", inside_->to_json()}, {"outside", outside_->to_json()}};
  }

 private:
  Predicate predicate_;
  PredictorPtr inside_;
  PredictorPtr outside_;
};

// ---------------------------------------------------------------------------
// Interpreter

// Data the interpreter may fit on: the full history in time order, the number
// of trailing rows since the estimated onset, and the batch size that turns
// action windows into row counts.
struct AdaptationBuffers {
  LabeledBatch history;
  std::size_t recent_rows = 0;  // 0 = unknown onset, use the whole history
  std::size_t batch_size = 500;

  LabeledBatch last_batches(std::size_t window) const { return tail_rows(history, window * batch_size); }
  LabeledBatch recent() const { return recent_rows == 0 ? history : tail_rows(history, recent_rows); }
};

struct ApplyResult {
  PredictorPtr model;  // null when infeasible
  bool feasible = true;
  std::string note;
};

struct ApplyOptions {
  LogisticConfig fit = {};
  int partial_iterations = 50;
};

inline ApplyResult apply(const Action& action, const PredictorPtr& model, const AdaptationBuffers& buffers,
                         const ApplyOptions& opt = {}) {
  return std::visit(
      [&](const auto& v) -> ApplyResult {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, NoOp>) {
          return {model, true, {}};
        } else {
          if (buffers.history.empty()) return {nullptr, false, "no buffered data"};
          if constexpr (std::is_same_v<T, RetrainNew>) {
            return {fit_logistic(buffers.last_batches(v.window), opt.fit), true, {}};
          } else if constexpr (std::is_same_v<T, PartialUpdate>) {
            const auto data = buffers.last_batches(v.window);
            const auto* base = dynamic_cast<const LogisticModel*>(model.get());
            if (!base) return {fit_logistic(data, opt.fit), true, "incumbent not logistic; fresh fit"};
            LogisticConfig cfg = opt.fit;
            cfg.max_iter = opt.partial_iterations;
            return {fit_logistic(data, cfg, base), true, {}};
          } else if constexpr (std::is_same_v<T, AddEnsembleMember>) {
            const auto data = buffers.last_batches(v.window);
            std::vector<PredictorPtr> members;
            if (const auto* e = dynamic_cast<const WeightedEnsemble*>(model.get()))
              members = e->members();
            else
              members.push_back(model);
            members.push_back(fit_logistic(data, opt.fit));
            std::vector<double> weights;
            for (const auto& m : members) weights.push_back(accuracy(*m, data));
            return {std::make_shared<WeightedEnsemble>(std::move(members), std::move(weights)), true, {}};
          } else if constexpr (std::is_same_v<T, RemoveSubgroupRetrain>) {
            const auto data = v.window ? buffers.last_batches(v.window) : buffers.recent();
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < data.size(); ++i)
              if (!any_match(v.predicates, data.X.row(i))) keep.push_back(i);
            if (keep.empty()) return {nullptr, false, "predicates remove every row"};
            const auto rest = select_rows(data, keep);
            std::vector<double> means(rest.X.cols, 0.0);
            for (std::size_t i = 0; i < rest.size(); ++i)
              for (std::size_t j = 0; j < rest.X.cols; ++j) means[j] += rest.X(i, j);
            for (auto& m : means) m /= static_cast<double>(rest.size());
            return {std::make_shared<ImputingPredictor>(fit_logistic(rest, opt.fit), v.predicates, std::move(means)), true,
                    std::to_string(data.size() - rest.size()) + " rows removed"};
          } else if constexpr (std::is_same_v<T, DecorruptFeature>) {
            return {std::make_shared<DecorruptingPredictor>(model, v.feature, v.scale), true, {}};
          } else {
            const auto data = buffers.recent();
            std::vector<std::size_t> inside;
            for (std::size_t i = 0; i < data.size(); ++i)
              if (v.predicate.matches(data.X.row(i))) inside.push_back(i);
            if (inside.empty()) return {nullptr, false, "subgroup is empty"};
            return {std::make_shared<RoutingPredictor>(v.predicate, fit_logistic(select_rows(data, inside), opt.fit), model),
                    true, std::to_string(inside.size()) + " rows in subgroup"};
          }
        }
      },
      action);
}

// ---------------------------------------------------------------------------
// Language-model proposals

// "<reason>: <pct>%" per line, largest first, for the {issues} placeholder.
inline std::string describe_issues(const DiagnosisVector& zeta, const ReasonSpace& space) {
  std::vector<std::size_t> order(space.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return zeta[a] > zeta[b]; });
  std::string out;
  for (auto i : order) {
    if (zeta[i] <= 0.0) continue;
    out += space.label(i) + ": " + fixed(100.0 * zeta[i], 1) + "%\n";
  }
  return out;
}

struct LlmProposalConfig {
  std::size_t n = 10;  // {self.n}
  double temperature = 0.7;
  bool subgroup_models = true;
};

// Removal candidates from the subgroup_removal template and, optionally,
// subgroup models from subgroup_retrain. NoOp is always first.
inline std::vector<Action> propose_actions_llm(const DiagnosisVector& zeta, const ReasonSpace& space,
                                               const EvidenceReport& ev, ChatProvider& provider,
                                               const LlmProposalConfig& cfg = {},
                                               std::vector<std::string>* warnings = nullptr) {
  Bindings b = evidence_bindings(ev);
  b["issues"] = describe_issues(zeta, space);
  b["n"] = std::to_string(cfg.n);
  std::vector<Action> out{NoOp{}};
  auto add = [&](std::vector<Action> as) {
    for (auto& a : as)
      if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(std::move(a));
  };
  const auto removal = provider.complete({TemplateId::SubgroupRemoval, render(TemplateId::SubgroupRemoval, b), cfg.temperature});
  add(parse_subgroup_listing(removal, space.schema(), false, warnings));
  if (cfg.subgroup_models) {
    const auto retrain = provider.complete({TemplateId::SubgroupRetrain, render(TemplateId::SubgroupRetrain, b), cfg.temperature});
    add(parse_subgroup_listing(retrain, space.schema(), true, warnings));
  }
  return out;
}

}  // namespace shml
