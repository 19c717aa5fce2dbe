#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tltrade/task_registry.hpp"

namespace tlt {

enum class Priority { performance, cost };
enum class Choice { FE, FT, probe_both };

std::string_view to_string(Priority p);
std::string_view to_string(Choice c);
Priority parse_priority(std::string_view text);
Choice parse_choice(std::string_view text);

struct RecommendationContext {
  bool pretrained_available = true;
  Overlap overlap = Overlap::unknown;
  std::size_t ic = 1;
  Priority priority = Priority::performance;
};

// All present fields must hold; any_of holds when one of its members does.
struct Predicate {
  std::optional<Priority> priority;
  std::vector<Overlap> overlap;
  std::optional<bool> pretrained;
  std::optional<std::size_t> ic_min;
  std::optional<std::size_t> ic_max;
  std::vector<Predicate> any_of;

  bool matches(const RecommendationContext& ctx) const;
};

struct Rule {
  std::string id;
  std::string question;
  Predicate when;
  Choice choice = Choice::probe_both;
  std::string rationale;
};

struct RuleTable {
  std::vector<Rule> rules;
  Choice fallback = Choice::probe_both;
};

struct PathStep {
  std::string question;
  bool answer = false;
  friend bool operator==(const PathStep&, const PathStep&) = default;
};

struct Recommendation {
  Choice choice = Choice::probe_both;
  std::vector<PathStep> path;
  std::string rule;  // id of the rule that fired, empty for the fallback
  std::string rationale;
};

// Built-in table (R1..R7), also available as JSON via default_rules_json().
const RuleTable& default_rules();
const nlohmann::json& default_rules_json();
// Throws ConfigError on malformed rules.
RuleTable rules_from_json(const nlohmann::json& j);
RuleTable load_rules(const std::filesystem::path& path);

// First matching rule wins; the path lists every rule question asked.
// Throws ConfigError when ic == 0.
Recommendation recommend(const RecommendationContext& ctx, const RuleTable& rules = default_rules());

}  // namespace tlt
