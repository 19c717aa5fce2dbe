#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tltrade/approach.hpp"
#include "tltrade/backbone.hpp"
#include "tltrade/metrics.hpp"
#include "tltrade/pipelines.hpp"
#include "tltrade/record.hpp"
#include "tltrade/task_registry.hpp"

namespace tlt {

struct GridConfig {
  Approach approach = Approach::FE;
  std::size_t index = 0;  // position in its grid
  nlohmann::json config;  // FtConfig / FeConfig fields, seed excluded
};

// Default search domains. FT: frozen fraction {0.25, 0.5, 0.75} x learning
// rate {0.01, 0.001} x weight decay {0.001, 0.0001} x momentum {0.75, 0.9}
// (fraction outermost, momentum innermost). FE: extracted fraction
// {0.25, 0.5, 0.75, 1.0}.
std::vector<GridConfig> enumerate_grid(Approach approach);

struct TaskPair {
  std::string source;  // key into Resources::sources, recorded as source_tag
  std::string task;
  friend bool operator==(const TaskPair&, const TaskPair&) = default;
};

struct SearchPlan {
  std::vector<TaskPair> pairs;
  std::vector<GridConfig> ft_grid = enumerate_grid(Approach::FT);
  std::vector<GridConfig> fe_grid = enumerate_grid(Approach::FE);
  std::vector<Approach> approaches{Approach::FE, Approach::FT};
  std::vector<std::uint64_t> seeds{0};
  double time_limit_hours = 24.0;
  std::size_t parallel_workers = 1;
  std::filesystem::path ledger = "ledger.jsonl";
};

struct ExperimentRequest {
  TaskPair pair;
  Approach approach = Approach::FE;
  nlohmann::json config;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::search;
  std::optional<std::size_t> ic;
  std::optional<std::size_t> subset;
  std::size_t plan_order = 0;  // index of the pair in the plan
  std::size_t grid_index = 0;
};

// Content hash of (pair, approach, config, seed, protocol, ic, subset).
std::string resume_key(const ExperimentRequest& request);

// Every (pair, approach, config, seed) of a plan in deterministic order.
// Throws ConfigError on an empty plan or grid.
std::vector<ExperimentRequest> plan_requests(const SearchPlan& plan);

struct Resources {
  std::map<std::string, LayeredBackbone> sources;
  std::map<std::string, TaskDataset> tasks;
};

using Runner = std::function<ExperimentRecord(const ExperimentRequest&, const LayeredBackbone&,
                                              const TaskDataset&)>;

struct RunnerOptions {
  const Clock* clock = nullptr;
  // Called once per experiment; null means a constant estimate.
  std::function<std::shared_ptr<PowerSource>()> power;
  double intensity_g_per_kwh = kDefaultGridIntensity;
  std::chrono::milliseconds sample_period{0};
  double time_limit_hours = 24.0;
};

// Runs the FE or FT pipeline named by the request.
Runner make_pipeline_runner(RunnerOptions options);

struct BestEntry {
  std::string task;
  Approach approach = Approach::FE;
  std::string source_tag;
  nlohmann::json config;
  std::uint64_t seed = 0;
  double v_acc = 0.0;
  double t_acc = 0.0;
  std::string record_id;
  std::size_t plan_order = 0;
  std::size_t grid_index = 0;
};

struct ApproachTotals {
  std::size_t n_exp = 0;
  double total_hours = 0.0;
  double total_co2_kg = 0.0;
  double total_energy_kwh = 0.0;
  std::optional<double> analyst_hours;
};

struct SearchLedger {
  std::vector<ExperimentRecord> records;
  std::size_t n_exp = 0;
  double total_hours = 0.0;
  double total_co2_kg = 0.0;
  double total_energy_kwh = 0.0;
  std::optional<double> analyst_hours;
  std::map<Approach, ApproachTotals> by_approach;
  // Highest V_ACC among non-failed search records; ties go to the earlier
  // (plan_order, approach, grid_index, seed).
  std::map<std::string, BestEntry> best_per_task;
  std::map<std::pair<std::string, Approach>, BestEntry> best_per_task_approach;
};

SearchLedger summarize_ledger(std::vector<ExperimentRecord> records, const LedgerMeta& meta = {});
SearchLedger load_search_ledger(const std::filesystem::path& ledger);

struct SearchOutcome {
  SearchLedger ledger;
  std::size_t executed = 0;
  std::size_t skipped = 0;  // already present in the ledger
};

// Records are appended as experiments finish. A request whose key is already
// in the ledger is skipped whatever its status. A runner exception becomes a
// failed record; the search carries on.
SearchOutcome run_search(const SearchPlan& plan, const Resources& resources, const Runner& runner);

struct FewshotPlan {
  std::vector<std::string> tasks;
  std::vector<std::size_t> ic_grid{1, 2, 5, 10, 20, 50};
  std::size_t n_subsets = 5;
  std::uint64_t base_seed = 0;
  std::vector<Approach> approaches{Approach::FE, Approach::FT};
  std::size_t parallel_workers = 1;
  std::filesystem::path ledger = "fewshot.jsonl";
};

struct FewshotOutcome {
  std::vector<ExperimentRecord> records;  // fewshot records of the plan's tasks
  std::map<std::string, std::vector<CurvePoint>> curves;
  std::map<std::pair<std::string, Approach>, std::vector<RangePoint>> timing;  // wall hours by ic
  std::vector<std::string> skipped;  // (task, ic) without enough samples
  std::size_t executed = 0;
};

// Each (task, ic, subset) runs every approach with that approach's best
// search configuration for the task.
FewshotOutcome run_fewshot_protocol(const FewshotPlan& plan,
                                    const std::map<std::pair<std::string, Approach>, BestEntry>& best,
                                    const Resources& resources, const Runner& runner);

// Curves and timing ranges from already-recorded fewshot rows.
void fewshot_summaries(FewshotOutcome& outcome);

struct ReselectPlan {
  std::vector<std::string> tasks;
  std::vector<std::size_t> ic_values{5, 10};
  std::uint64_t base_seed = 0;
  std::vector<Approach> approaches{Approach::FE, Approach::FT};
  std::size_t parallel_workers = 1;
  std::filesystem::path ledger = "reselect.jsonl";
};

struct DropRow {
  std::string task;
  std::size_t ic = 0;
  Approach approach = Approach::FE;
  nlohmann::json best_config;
  double v_acc = 0.0;
  nlohmann::json original_config;
  double original_v_acc = 0.0;  // original best configuration on this subset
  double drop = 0.0;
};

struct ReselectOutcome {
  std::vector<DropRow> rows;
  std::vector<std::string> skipped;
  std::size_t executed = 0;
};

// Full grid search on subset 0 of each ic; the original configuration is run
// as well when it is not part of the grid.
ReselectOutcome run_reselection(const ReselectPlan& plan, const SearchPlan& grids,
                                const std::map<std::pair<std::string, Approach>, BestEntry>& best,
                                const Resources& resources, const Runner& runner);

}  // namespace tlt
