#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tltrade/tensor.hpp"

namespace tlt {

// Relation of a task's label space to the pretraining source.
enum class Overlap { subset, intersect, disjoint, unknown };

std::string_view to_string(Overlap overlap);
Overlap parse_overlap(std::string_view text);

struct Sample {
  std::string id;  // relative path of the image; unique within a dataset
  Tensor image;    // height x width x channels, values in [0, 1]
  std::size_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split { train, val, test };

struct TaskDataset {
  std::string name;
  std::vector<std::string> classes;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  Overlap overlap = Overlap::unknown;
  std::optional<std::string> source_ref;

  const std::vector<Sample>& split(Split which) const;
  Shape3 image_shape() const;
  std::vector<std::size_t> train_counts() const;

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

// Throws IngestError when a class index is out of range, a sample id is
// shared between splits, a class is missing from train, or image shapes differ.
void validate_dataset(const TaskDataset& ds);

// Manifest (JSON):
//   { "name": "...", "overlap": "subset|intersect|disjoint|unknown",
//     "source_ref": "IN" | null, "classes": [...], "root": ".",
//     "splits": {"train": "train.txt", "val": "val.txt", "test": "test.txt"},
//     "resize": [h, w] }
// Split listings hold one "<class>/<file>" path per line, relative to root.
TaskDataset load_dataset(const std::filesystem::path& manifest_path);

// Writes images, listings and manifest.json under dir; returns the manifest
// path. Every sample id must start with "<class>/".
std::filesystem::path save_dataset(const TaskDataset& ds, const std::filesystem::path& dir);

struct FewShotSpec {
  std::size_t ic = 1;
  std::size_t n_subsets = 5;
  std::uint64_t base_seed = 0;
};

// Subset k of the train split: ic samples per class, drawn without
// replacement, kept in their original relative order. val/test are copied.
TaskDataset make_fewshot_subset(const TaskDataset& ds, std::size_t ic, std::uint64_t base_seed,
                                std::size_t k);
std::vector<TaskDataset> make_fewshot_subsets(const TaskDataset& ds, const FewShotSpec& spec);

struct CropSet {
  // 0-3: corners (top-left, top-right, bottom-left, bottom-right), 4: centre,
  // 5-9: horizontal mirrors of 0-4 in the same order.
  std::array<Tensor, 10> crops;
  std::string origin;
};

CropSet ten_crop(const Tensor& image, std::size_t crop, std::string origin = {});
Tensor crop_region(const Tensor& image, std::size_t top, std::size_t left, std::size_t side);
Tensor mirror_horizontal(const Tensor& image);

// 87.5% of the shorter image side.
std::size_t default_crop_side(Shape3 image_shape);

}  // namespace tlt
