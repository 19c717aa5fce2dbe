#include "tltrade/recommender.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

using nlohmann::json;

std::string_view to_string(Priority p) { return p == Priority::cost ? "cost" : "performance"; }

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::FE: return "FE";
    case Choice::FT: return "FT";
    case Choice::probe_both: return "probe_both";
  }
  return "probe_both";
}

Priority parse_priority(std::string_view text) {
  if (text == "performance") return Priority::performance;
  if (text == "cost") return Priority::cost;
  throw ConfigError(fmt::format("unknown priority '{}' (performance|cost)", text));
}

Choice parse_choice(std::string_view text) {
  if (text == "FE") return Choice::FE;
  if (text == "FT") return Choice::FT;
  if (text == "probe_both") return Choice::probe_both;
  throw ConfigError(fmt::format("unknown choice '{}' (FE|FT|probe_both)", text));
}

bool Predicate::matches(const RecommendationContext& ctx) const {
  if (priority && *priority != ctx.priority) return false;
  if (!overlap.empty() && std::find(overlap.begin(), overlap.end(), ctx.overlap) == overlap.end()) return false;
  if (pretrained && *pretrained != ctx.pretrained_available) return false;
  if (ic_min && ctx.ic < *ic_min) return false;
  if (ic_max && ctx.ic > *ic_max) return false;
  if (!any_of.empty()) {
    return std::any_of(any_of.begin(), any_of.end(), [&](const Predicate& p) { return p.matches(ctx); });
  }
  return true;
}

namespace {

const char* const kDefaultRules = R"json({
  "fallback": "probe_both",
  "rules": [
    {"id": "R1", "question": "Is compute, energy or analyst cost the priority?",
     "when": {"priority": "cost"}, "choice": "FE",
     "rationale": "cost first: FE has no training loop and a small grid"},
    {"id": "R2", "question": "Are there 5 or fewer samples per class?",
     "when": {"ic_max": 5}, "choice": "FE",
     "rationale": "tiny training set; a linear model on fixed features"},
    {"id": "R3", "question": "Pretrained model, labels overlapping the source, and 25 or more samples per class?",
     "when": {"pretrained": true, "overlap": ["subset", "intersect"], "ic_min": 25}, "choice": "FT",
     "rationale": "related labels and enough data per class to train the network"},
    {"id": "R4", "question": "Pretrained model, labels overlapping the source, and 6 to 24 samples per class?",
     "when": {"pretrained": true, "overlap": ["subset", "intersect"], "ic_min": 6, "ic_max": 24},
     "choice": "probe_both",
     "rationale": "undecided range: run both at this size, keep FE unless FT is ahead"},
    {"id": "R5", "question": "Pretrained model, labels disjoint from the source, and at most 100 samples per class?",
     "when": {"pretrained": true, "overlap": ["disjoint"], "ic_max": 100}, "choice": "FE",
     "rationale": "unrelated labels, moderate data: FE"},
    {"id": "R6", "question": "Pretrained model, labels disjoint from the source, and more than 100 samples per class?",
     "when": {"pretrained": true, "overlap": ["disjoint"], "ic_min": 101}, "choice": "probe_both",
     "rationale": "unrelated labels, large data: measure both"},
    {"id": "R7", "question": "Is the overlap unknown or no pretrained model available?",
     "when": {"any_of": [{"overlap": ["unknown"]}, {"pretrained": false}]}, "choice": "probe_both",
     "rationale": "missing information: FE as baseline, probe FT"}
  ]
})json";

Predicate predicate_from_json(const json& j) {
  Predicate p;
  if (!j.is_object()) throw ConfigError("rule predicate must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "priority") {
      p.priority = parse_priority(value.get<std::string>());
    } else if (key == "overlap") {
      for (const auto& o : value) p.overlap.push_back(parse_overlap(o.get<std::string>()));
    } else if (key == "pretrained") {
      p.pretrained = value.get<bool>();
    } else if (key == "ic_min") {
      p.ic_min = value.get<std::size_t>();
    } else if (key == "ic_max") {
      p.ic_max = value.get<std::size_t>();
    } else if (key == "any_of") {
      for (const auto& sub : value) p.any_of.push_back(predicate_from_json(sub));
    } else {
      throw ConfigError(fmt::format("unknown predicate field '{}'", key));
    }
  }
  return p;
}

}  // namespace

const nlohmann::json& default_rules_json() {
  static const json j = json::parse(kDefaultRules);
  return j;
}

const RuleTable& default_rules() {
  static const RuleTable table = rules_from_json(default_rules_json());
  return table;
}

RuleTable rules_from_json(const json& j) {
  RuleTable table;
  try {
    table.fallback = parse_choice(j.value("fallback", std::string("probe_both")));
    for (const json& r : j.at("rules")) {
      Rule rule;
      rule.id = r.at("id").get<std::string>();
      rule.question = r.at("question").get<std::string>();
      rule.when = predicate_from_json(r.at("when"));
      rule.choice = parse_choice(r.at("choice").get<std::string>());
      rule.rationale = r.value("rationale", std::string{});
      table.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("rules: {}", e.what()));
  } catch (const Error& e) {
    throw ConfigError(fmt::format("rules: {}", e.what()));
  }
  return table;
}

RuleTable load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open rules file {}", path.string()));
  try {
    return rules_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Recommendation recommend(const RecommendationContext& ctx, const RuleTable& rules) {
  if (ctx.ic == 0) throw ConfigError("ic must be at least 1");
  Recommendation out;
  for (const Rule& rule : rules.rules) {
    const bool hit = rule.when.matches(ctx);
    out.path.push_back({rule.question, hit});
    if (hit) {
      out.choice = rule.choice;
      out.rule = rule.id;
      out.rationale = fmt::format("{}: {}", rule.id, rule.rationale);
      return out;
    }
  }
  out.choice = rules.fallback;
  out.path.push_back({"No rule matched; use the fallback?", true});
  out.rationale = "fallback";
  return out;
}

}  // namespace tlt
