#include "tltrade/cli.hpp"

#include <algorithm>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "tltrade/errors.hpp"
#include "tltrade/plan.hpp"
#include "tltrade/recommender.hpp"
#include "tltrade/report.hpp"

namespace tlt {

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<double> time_limit_hours;
  std::optional<std::string> ledger;

  PlanOverrides overrides() const {
    PlanOverrides o;
    o.seed = seed;
    o.jobs = jobs;
    o.time_limit_hours = time_limit_hours;
    if (ledger) o.ledger = *ledger;
    return o;
  }
};

void print_best(std::ostream& out, const SearchLedger& ledger) {
  for (const auto& [task, best] : ledger.best_per_task) {
    fmt::print(out, "  {}: {} from {} (V_ACC {:.2f}, T_ACC {:.2f}) {}\n", task, to_string(best.approach),
               best.source_tag, best.v_acc, best.t_acc, best.config.dump());
  }
}

int cmd_search(const std::string& plan_path, const Globals& g, std::ostream& out) {
  const LoadedPlan plan = load_plan(plan_path, g.overrides());
  const std::size_t planned = plan_requests(plan.search).size();
  fmt::print(out, "plan: {} experiments, ledger {}\n", planned, plan.search.ledger.string());
  const SearchOutcome o = run_search(plan.search, plan.resources, make_pipeline_runner(plan.runner));
  fmt::print(out, "executed {}, skipped {} already in the ledger\n", o.executed, o.skipped);
  fmt::print(out, "n_exp {}, total {:.6f} h, {:.6f} kg CO2\n", o.ledger.n_exp, o.ledger.total_hours,
             o.ledger.total_co2_kg);
  print_best(out, o.ledger);
  return 0;
}

SearchLedger search_results(const LoadedPlan& plan) {
  SearchLedger ledger = load_search_ledger(plan.search.ledger);
  if (ledger.best_per_task_approach.empty()) {
    throw ConfigError(fmt::format("no search results in {}; run `search` first", plan.search.ledger.string()));
  }
  return ledger;
}

int cmd_fewshot(const std::string& plan_path, const Globals& g, const std::string& out_dir, std::ostream& out) {
  const LoadedPlan plan = load_plan(plan_path, g.overrides());
  if (!plan.fewshot) throw ConfigError("plan has no \"fewshot\" section");
  const SearchLedger search = search_results(plan);
  const FewshotOutcome o = run_fewshot_protocol(*plan.fewshot, search.best_per_task_approach, plan.resources,
                                                make_pipeline_runner(plan.runner));
  fmt::print(out, "executed {}, {} fewshot records in {}\n", o.executed, o.records.size(),
             plan.fewshot->ledger.string());
  for (const std::string& s : o.skipped) fmt::print(out, "skipped {}\n", s);
  const Table t = fewshot_table(o);
  out << t.to_text();
  if (!out_dir.empty()) {
    write_report(render_report(summarize_ledger(o.records)), out_dir);
    fmt::print(out, "wrote {}\n", out_dir);
  }
  return 0;
}

int cmd_reselect(const std::string& plan_path, const Globals& g, const std::string& out_dir, std::ostream& out) {
  const LoadedPlan plan = load_plan(plan_path, g.overrides());
  if (!plan.reselect) throw ConfigError("plan has no \"reselect\" section");
  const SearchLedger search = search_results(plan);
  const ReselectOutcome o = run_reselection(*plan.reselect, plan.search, search.best_per_task_approach,
                                            plan.resources, make_pipeline_runner(plan.runner));
  fmt::print(out, "executed {}\n", o.executed);
  for (const std::string& s : o.skipped) fmt::print(out, "skipped {}\n", s);
  const Table t = drop_table(o.rows);
  out << t.to_text();
  if (!out_dir.empty()) {
    write_table(t, out_dir, "drop");
    fmt::print(out, "wrote {}\n", out_dir);
  }
  return 0;
}

int cmd_recommend(const RecommendationContext& ctx, const std::string& rules_path, std::ostream& out) {
  const RuleTable rules = rules_path.empty() ? default_rules() : load_rules(rules_path);
  const Recommendation r = recommend(ctx, rules);
  fmt::print(out, "{}\n", to_string(r.choice));
  fmt::print(out, "path:\n");
  for (const PathStep& s : r.path) fmt::print(out, "  [{}] {}\n", s.answer ? "yes" : "no ", s.question);
  fmt::print(out, "rule: {}\n", r.rationale);
  return 0;
}

std::string ledger_argument(const std::string& positional, const Globals& g) {
  if (!positional.empty()) return positional;
  if (g.ledger) return *g.ledger;
  throw ConfigError("no ledger given (argument, --ledger or TLTRADE_LEDGER)");
}

int cmd_report(const std::string& ledger_path, const std::string& out_dir, std::ostream& out) {
  if (!std::filesystem::exists(ledger_path)) throw ReportError(fmt::format("ledger {} not found", ledger_path));
  const ReportBundle b = render_report(load_search_ledger(ledger_path));
  write_report(b, out_dir);
  out << b.summary.to_text() << '\n' << b.per_task.to_text();
  fmt::print(out, "wrote {}\n", out_dir);
  return 0;
}

int cmd_annotate(const std::string& ledger_path, double hours, const std::string& approach, std::ostream& out) {
  if (!std::filesystem::exists(ledger_path)) throw LedgerError(fmt::format("ledger {} not found", ledger_path));
  if (!(hours >= 0.0)) throw ConfigError("analyst hours must be non-negative");
  const std::string key = approach.empty() ? "total" : std::string(to_string(parse_approach(approach)));
  LedgerMeta meta = read_meta(ledger_path);
  meta.analyst_hours[key] = hours;
  write_meta(ledger_path, meta);
  fmt::print(out, "analyst hours ({}) = {} in {}\n", key, hours, meta_path(ledger_path).string());
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compare fine-tuning and feature extraction on image tasks", "tltrade"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Override the plan's seeds");
  app.add_option("--jobs", g.jobs, "Parallel experiment workers")->envname("TLTRADE_JOBS")->check(CLI::PositiveNumber);
  app.add_option("--time-limit-hours", g.time_limit_hours, "Per-experiment time limit")->check(CLI::PositiveNumber);
  app.add_option("--ledger", g.ledger, "Ledger path")->envname("TLTRADE_LEDGER");

  std::string plan_path;
  std::string out_dir;
  auto* search = app.add_subcommand("search", "Grid search over every (source, task) pair of a plan");
  search->add_option("plan", plan_path, "Plan file")->required();
  auto* fewshot = app.add_subcommand("fewshot", "Few-shot protocol with the best search configurations");
  fewshot->add_option("plan", plan_path, "Plan file")->required();
  fewshot->add_option("--out", out_dir, "Directory for CSV output");
  auto* reselect = app.add_subcommand("reselect", "Repeat model selection on smaller training sets");
  reselect->add_option("plan", plan_path, "Plan file")->required();
  reselect->add_option("--out", out_dir, "Directory for the drop table");

  RecommendationContext ctx;
  std::string overlap;
  std::string priority = "performance";
  std::string rules_path;
  auto* rec = app.add_subcommand("recommend", "Suggest FE, FT or probing both");
  rec->add_option("--overlap", overlap, "subset|intersect|disjoint|unknown")->required();
  rec->add_option("--ic", ctx.ic, "Training samples per class")->required()->check(CLI::PositiveNumber);
  rec->add_option("--priority", priority, "performance|cost");
  rec->add_flag("--pretrained,!--no-pretrained", ctx.pretrained_available, "Pretrained model available");
  rec->add_option("--rules", rules_path, "Rules file (JSON)");

  std::string ledger_pos;
  auto* report = app.add_subcommand("report", "Render tables and CSVs from a ledger");
  report->add_option("ledger", ledger_pos, "Ledger file");
  report->add_option("--out", out_dir, "Output directory")->required();

  double hours = 0.0;
  std::string approach;
  auto* annotate = app.add_subcommand("annotate", "Record analyst hours for a ledger");
  annotate->add_option("ledger", ledger_pos, "Ledger file");
  annotate->add_option("--analyst-hours", hours, "Hours spent by people")->required();
  annotate->add_option("--approach", approach, "FE|FT (default: total)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (search->parsed()) return cmd_search(plan_path, g, out);
    if (fewshot->parsed()) return cmd_fewshot(plan_path, g, out_dir, out);
    if (reselect->parsed()) return cmd_reselect(plan_path, g, out_dir, out);
    if (rec->parsed()) {
      try {
        ctx.overlap = parse_overlap(overlap);
        ctx.priority = parse_priority(priority);
      } catch (const Error& e) {
        err << e.name() << ": " << e.what() << '\n' << app.help();
        return 1;
      }
      return cmd_recommend(ctx, rules_path, out);
    }
    if (report->parsed()) return cmd_report(ledger_argument(ledger_pos, g), out_dir, out);
    if (annotate->parsed()) return cmd_annotate(ledger_argument(ledger_pos, g), hours, approach, out);
  } catch (const Error& e) {
    err << e.name() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "Error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace tlt
