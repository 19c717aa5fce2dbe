#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tltrade/task_registry.hpp"

namespace tlt {

// Procedural image tasks used in place of real datasets. Each class is a
// "prototype" drawn from a seeded bank; tasks that share prototype ids share
// classes, which is how subset/intersect/disjoint relations are modelled.
struct SyntheticTaskSpec {
  std::string name = "synthetic";
  std::size_t n_classes = 3;
  std::size_t train_per_class = 20;
  std::size_t val_per_class = 5;
  std::size_t test_per_class = 5;
  Shape3 image{16, 16, 3};
  double noise = 0.05;
  std::size_t max_shift = 2;
  std::uint64_t bank_seed = 7;
  std::size_t first_prototype = 0;
  std::vector<std::size_t> prototypes;  // overrides first_prototype when non-empty
  std::uint64_t sample_seed = 1;
  Overlap overlap = Overlap::unknown;
  std::optional<std::string> source_ref;
};

Tensor synthetic_prototype(std::uint64_t bank_seed, std::size_t prototype_id, Shape3 shape);
TaskDataset make_synthetic_task(const SyntheticTaskSpec& spec);

}  // namespace tlt
