#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tltrade/backbone.hpp"
#include "tltrade/clock.hpp"
#include "tltrade/task_registry.hpp"
#include "tltrade/tensor.hpp"

namespace tlt {

struct Standardizer {
  std::vector<double> means;
  std::vector<double> stds;  // population standard deviation; 0 for constant features
  std::size_t fitted_on = 0;
};

struct Thresholds {
  double lo = -0.25;
  double hi = 0.15;
};

struct TernaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> data;

  std::int8_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  Matrix to_real() const;
  friend bool operator==(const TernaryMatrix&, const TernaryMatrix&) = default;
};

struct FeatureRef {
  std::size_t layer = 0;  // backbone layer index
  std::size_t channel = 0;
  friend bool operator==(const FeatureRef&, const FeatureRef&) = default;
};

struct FnEmbedding {
  TernaryMatrix matrix;
  std::vector<FeatureRef> feature_map;
  Standardizer standardizer;
  Thresholds thresholds;
  std::vector<std::size_t> origin;  // row -> sample index within its split
};

struct FneTriple {
  FnEmbedding train;
  FnEmbedding val;
  FnEmbedding test;
};

// Pooled (not yet standardised) features of one split: 10 rows per sample.
struct PooledFeatures {
  Matrix features;
  std::vector<std::size_t> origin;
  std::vector<FeatureRef> feature_map;
};

// Conv (rank 3): mean over spatial positions per channel. Dense (rank 1):
// unchanged. Other ranks throw ShapeError.
std::vector<double> spatial_average_pool(const Tensor& activation);

// Throws FitError for fewer than two rows.
Standardizer fit_standardizer(const Matrix& train_features);
// Zero-variance features standardise to 0.
Matrix standardize(const Matrix& features, const Standardizer& s);
// x <= lo -> -1, x >= hi -> +1, otherwise 0. Throws ConfigError if lo >= hi.
TernaryMatrix discretize(const Matrix& standardized, double lo, double hi);

// Feature order: selected layers deepest first, channels ascending.
PooledFeatures pool_split(const LayeredBackbone& b, const std::vector<Sample>& samples,
                          std::size_t layer_count, std::size_t crop,
                          const Deadline* deadline = nullptr);

// Standardiser fitted on train rows only, applied to every split.
FneTriple fne_from_pooled(const PooledFeatures& train, const PooledFeatures& val,
                          const PooledFeatures& test, Thresholds thresholds);

// crop == 0 selects the default side (87.5% of the shorter image side).
FneTriple build_fne(const LayeredBackbone& b, const TaskDataset& ds, double fraction,
                    Thresholds thresholds, std::size_t crop = 0,
                    const Deadline* deadline = nullptr);

// Container entries: matrix [rows x cols], means, stds, thresholds [lo, hi],
// feature map [cols x 2], origin [rows], fitted_on [1].
void export_embedding(const FnEmbedding& e, const std::filesystem::path& path);
FnEmbedding import_embedding(const std::filesystem::path& path);

// Pooled features exported by another framework: one tensor entry per
// layer, each [rows x channels], plus a trailing [rows] origin entry.
PooledFeatures import_pooled_features(const std::filesystem::path& path);
void export_pooled_features(const PooledFeatures& f, const std::filesystem::path& path);

}  // namespace tlt
