#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "tltrade/orchestrator.hpp"
#include "tltrade/synthetic.hpp"

namespace tlt {

// Plan file (JSON). Relative paths resolve against the plan's directory.
//
// {
//   "ledger": "runs/ledger.jsonl",
//   "sources": {
//     "IN": {"architecture": "toy" | "vgg16", "input": [14, 14, 3], "n_outputs": 10,
//            "seed": 1, "tag": "IN", "initializer": "he_uniform",
//            "weights": "in.bin",                       optional container
//            "pretrain": {"task": {<synthetic>}, "epochs": 5, "learning_rate": 0.01}}
//   },
//   "tasks": {"name": {"manifest": "path/manifest.json"} | {"synthetic": {<synthetic>}}},
//   "pairs": [["IN", "name"], ...],
//   "approaches": ["FE", "FT"],
//   "ft_grid": "default" | [{<FtConfig fields>}, ...],
//   "fe_grid": "default" | [{<FeConfig fields>}, ...],
//   "ft": {<FtConfig fields applied under every FT grid entry>},
//   "fe": {<FeConfig fields applied under every FE grid entry>},
//   "seeds": [0], "time_limit_hours": 24, "parallel_workers": 1,
//   "power": {"source": "auto" | "constant" | "rapl", "watts": 65,
//             "intensity_g_per_kwh": 230.7, "sample_period_ms": 0},
//   "fewshot": {"tasks": [...], "ic_grid": [1, 2, 5, 10], "n_subsets": 5,
//               "base_seed": 0, "ledger": "fewshot.jsonl"},
//   "reselect": {"tasks": [...], "ic_values": [5, 10], "base_seed": 0,
//                "ledger": "reselect.jsonl"}
// }
//
// <synthetic>: {"name", "n_classes", "train_per_class", "val_per_class",
// "test_per_class", "image": [h, w, c], "noise", "max_shift", "bank_seed",
// "first_prototype", "prototypes", "sample_seed", "overlap", "source_ref"}

struct PlanOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<double> time_limit_hours;
  std::optional<std::filesystem::path> ledger;
};

struct LoadedPlan {
  SearchPlan search;
  Resources resources;
  RunnerOptions runner;
  std::optional<FewshotPlan> fewshot;
  std::optional<ReselectPlan> reselect;
};

SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j);

// Throws ConfigError for schema problems; dataset and weight loading errors
// propagate with their own types.
LoadedPlan load_plan(const std::filesystem::path& path, const PlanOverrides& overrides = {});
LoadedPlan plan_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                          const PlanOverrides& overrides = {});

}  // namespace tlt
