#include "tltrade/fne.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tltrade/container.hpp"
#include "tltrade/errors.hpp"

namespace tlt {

Matrix TernaryMatrix::to_real() const {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = data[i];
  return m;
}

std::vector<double> spatial_average_pool(const Tensor& activation) {
  if (activation.rank() == 1) return {activation.data.begin(), activation.data.end()};
  if (activation.rank() != 3) {
    throw ShapeError(fmt::format("cannot pool a rank-{} activation", activation.rank()));
  }
  const Shape3 s = activation.shape3();
  std::vector<double> sums(s.channels, 0.0);
  const std::size_t positions = s.height * s.width;
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < s.channels; ++c) sums[c] += activation.data[p * s.channels + c];
  }
  for (double& v : sums) v /= static_cast<double>(positions);
  return sums;
}

Standardizer fit_standardizer(const Matrix& train) {
  if (train.rows < 2) {
    throw FitError(fmt::format("standardizer needs at least 2 samples, got {}", train.rows));
  }
  Standardizer s;
  s.fitted_on = train.rows;
  s.means.assign(train.cols, 0.0);
  s.stds.assign(train.cols, 0.0);
  const double n = static_cast<double>(train.rows);
  for (std::size_t r = 0; r < train.rows; ++r) {
    for (std::size_t c = 0; c < train.cols; ++c) s.means[c] += train(r, c);
  }
  for (double& m : s.means) m /= n;
  for (std::size_t r = 0; r < train.rows; ++r) {
    for (std::size_t c = 0; c < train.cols; ++c) {
      const double d = train(r, c) - s.means[c];
      s.stds[c] += d * d;
    }
  }
  for (double& v : s.stds) v = std::sqrt(v / n);
  return s;
}

Matrix standardize(const Matrix& features, const Standardizer& s) {
  if (features.cols != s.means.size()) {
    throw ShapeError(fmt::format("standardizer fitted on {} features, got {}", s.means.size(),
                                 features.cols));
  }
  Matrix out(features.rows, features.cols);
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t c = 0; c < features.cols; ++c) {
      out(r, c) = s.stds[c] > 0.0 ? (features(r, c) - s.means[c]) / s.stds[c] : 0.0;
    }
  }
  return out;
}

TernaryMatrix discretize(const Matrix& standardized, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError(fmt::format("discretization needs lo < hi, got ({}, {})", lo, hi));
  TernaryMatrix t{standardized.rows, standardized.cols,
                  std::vector<std::int8_t>(standardized.data.size(), 0)};
  for (std::size_t i = 0; i < standardized.data.size(); ++i) {
    const double x = standardized.data[i];
    t.data[i] = x >= hi ? 1 : (x <= lo ? -1 : 0);
  }
  return t;
}

PooledFeatures pool_split(const LayeredBackbone& b, const std::vector<Sample>& samples,
                          std::size_t layer_count, std::size_t crop, const Deadline* deadline) {
  PooledFeatures out;
  const std::size_t deepest = b.layer_count() - 2;
  for (std::size_t k = 0; k < layer_count; ++k) {
    const auto& layer = b.layers().at(deepest - k);
    for (std::size_t c = 0; c < layer.activation.channels; ++c) {
      out.feature_map.push_back({deepest - k, c});
    }
  }
  out.features = Matrix(samples.size() * 10, out.feature_map.size());
  out.origin.reserve(samples.size() * 10);
  std::size_t row = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (deadline != nullptr) deadline->check();
    const CropSet crops = ten_crop(samples[i].image, crop, samples[i].id);
    for (const Tensor& c : crops.crops) {
      const auto acts = b.collect(c, layer_count);
      std::size_t col = 0;
      for (const Tensor& a : acts) {
        for (const double v : spatial_average_pool(a)) out.features(row, col++) = v;
      }
      out.origin.push_back(i);
      ++row;
    }
  }
  return out;
}

namespace {

FnEmbedding embed(const PooledFeatures& pooled, const Standardizer& s, Thresholds t) {
  FnEmbedding e;
  e.matrix = discretize(standardize(pooled.features, s), t.lo, t.hi);
  e.feature_map = pooled.feature_map;
  e.standardizer = s;
  e.thresholds = t;
  e.origin = pooled.origin;
  return e;
}

}  // namespace

FneTriple fne_from_pooled(const PooledFeatures& train, const PooledFeatures& val,
                          const PooledFeatures& test, Thresholds thresholds) {
  if (!(thresholds.lo < thresholds.hi)) throw ConfigError("discretization needs lo < hi");
  const Standardizer s = fit_standardizer(train.features);
  return {embed(train, s, thresholds), embed(val, s, thresholds), embed(test, s, thresholds)};
}

FneTriple build_fne(const LayeredBackbone& b, const TaskDataset& ds, double fraction,
                    Thresholds thresholds, std::size_t crop, const Deadline* deadline) {
  if (!(thresholds.lo < thresholds.hi)) throw ConfigError("discretization needs lo < hi");
  const std::size_t count =
      layers_for_fraction(b.layer_count(), SelectionMode::extract_suffix, fraction);
  if (crop == 0) crop = default_crop_side(ds.image_shape());
  return fne_from_pooled(pool_split(b, ds.train, count, crop, deadline),
                         pool_split(b, ds.val, count, crop, deadline),
                         pool_split(b, ds.test, count, crop, deadline), thresholds);
}

namespace {

ContainerEntry tensor_entry(std::vector<std::uint32_t> dims, std::vector<float> values) {
  return {EntryKind::tensor, std::move(dims), std::move(values), {}};
}

template <typename T>
std::vector<float> as_floats(const std::vector<T>& values) {
  return {values.begin(), values.end()};
}

}  // namespace

void export_embedding(const FnEmbedding& e, const std::filesystem::path& path) {
  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  std::vector<float> fmap;
  for (const FeatureRef& f : e.feature_map) {
    fmap.push_back(static_cast<float>(f.layer));
    fmap.push_back(static_cast<float>(f.channel));
  }
  const std::vector<ContainerEntry> entries = {
      tensor_entry({u(e.matrix.rows), u(e.matrix.cols)}, as_floats(e.matrix.data)),
      tensor_entry({u(e.standardizer.means.size())}, as_floats(e.standardizer.means)),
      tensor_entry({u(e.standardizer.stds.size())}, as_floats(e.standardizer.stds)),
      tensor_entry({2}, {static_cast<float>(e.thresholds.lo), static_cast<float>(e.thresholds.hi)}),
      tensor_entry({u(e.feature_map.size()), 2}, std::move(fmap)),
      tensor_entry({u(e.origin.size())}, as_floats(e.origin)),
      tensor_entry({1}, {static_cast<float>(e.standardizer.fitted_on)}),
  };
  write_container(path, entries);
}

FnEmbedding import_embedding(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.entries.size() != 7 || c.entries[0].dims.size() != 2) {
    throw ImportError(fmt::format("{} is not an embedding container", path.string()));
  }
  FnEmbedding e;
  const auto& m = c.entries[0];
  e.matrix.rows = m.dims[0];
  e.matrix.cols = m.dims[1];
  for (const float v : m.weights) {
    if (v != -1.0f && v != 0.0f && v != 1.0f) throw ImportError("embedding entry outside {-1,0,1}");
    e.matrix.data.push_back(static_cast<std::int8_t>(v));
  }
  e.standardizer.means.assign(c.entries[1].weights.begin(), c.entries[1].weights.end());
  e.standardizer.stds.assign(c.entries[2].weights.begin(), c.entries[2].weights.end());
  if (c.entries[3].weights.size() != 2) throw ImportError("embedding thresholds malformed");
  e.thresholds = {c.entries[3].weights[0], c.entries[3].weights[1]};
  const auto& fmap = c.entries[4].weights;
  for (std::size_t i = 0; i + 1 < fmap.size(); i += 2) {
    e.feature_map.push_back({static_cast<std::size_t>(fmap[i]), static_cast<std::size_t>(fmap[i + 1])});
  }
  for (const float v : c.entries[5].weights) e.origin.push_back(static_cast<std::size_t>(v));
  e.standardizer.fitted_on = static_cast<std::size_t>(c.entries[6].weights.at(0));
  if (e.feature_map.size() != e.matrix.cols || e.origin.size() != e.matrix.rows ||
      e.standardizer.means.size() != e.matrix.cols) {
    throw ImportError("embedding container entries disagree on shape");
  }
  return e;
}

void export_pooled_features(const PooledFeatures& f, const std::filesystem::path& path) {
  std::vector<ContainerEntry> entries;
  std::size_t start = 0;
  while (start < f.feature_map.size()) {
    std::size_t end = start;
    while (end < f.feature_map.size() && f.feature_map[end].layer == f.feature_map[start].layer) ++end;
    const std::size_t width = end - start;
    std::vector<float> values;
    values.reserve(f.features.rows * width);
    for (std::size_t r = 0; r < f.features.rows; ++r) {
      for (std::size_t c = start; c < end; ++c) values.push_back(static_cast<float>(f.features(r, c)));
    }
    entries.push_back(tensor_entry({static_cast<std::uint32_t>(f.features.rows),
                                    static_cast<std::uint32_t>(width)},
                                   std::move(values)));
    start = end;
  }
  entries.push_back(tensor_entry({static_cast<std::uint32_t>(f.origin.size())}, as_floats(f.origin)));
  write_container(path, entries);
}

PooledFeatures import_pooled_features(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.entries.size() < 2) throw ImportError(fmt::format("{} holds no feature layers", path.string()));
  PooledFeatures f;
  const ContainerEntry& origin = c.entries.back();
  const std::size_t rows = origin.weights.size();
  std::size_t cols = 0;
  for (std::size_t l = 0; l + 1 < c.entries.size(); ++l) {
    const auto& e = c.entries[l];
    if (e.dims.size() != 2 || e.dims[0] != rows) {
      throw ImportError(fmt::format("feature entry {} is not a [{} x channels] matrix", l, rows));
    }
    for (std::uint32_t ch = 0; ch < e.dims[1]; ++ch) f.feature_map.push_back({l, ch});
    cols += e.dims[1];
  }
  f.features = Matrix(rows, cols);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < c.entries.size(); ++l) {
    const auto& e = c.entries[l];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t ch = 0; ch < e.dims[1]; ++ch) f.features(r, offset + ch) = e.weights[r * e.dims[1] + ch];
    }
    offset += e.dims[1];
  }
  for (const float v : origin.weights) f.origin.push_back(static_cast<std::size_t>(v));
  return f;
}

}  // namespace tlt
