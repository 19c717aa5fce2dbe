#include "tltrade/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tltrade/errors.hpp"
#include "tltrade/rng.hpp"

namespace tlt {

Tensor synthetic_prototype(std::uint64_t bank_seed, std::size_t prototype_id, Shape3 shape) {
  Rng rng(derive_seed(bank_seed, prototype_id));
  Tensor image(shape, 0.15f);
  const double h = static_cast<double>(shape.height);
  const double w = static_cast<double>(shape.width);
  for (int bump = 0; bump < 3; ++bump) {
    const double cy = rng.uniform(0.15, 0.85) * h;
    const double cx = rng.uniform(0.15, 0.85) * w;
    const double sigma = rng.uniform(0.08, 0.2) * std::min(h, w);
    std::vector<double> amplitude(shape.channels);
    for (double& a : amplitude) a = rng.uniform(0.2, 0.75);
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double g = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
        for (std::size_t c = 0; c < shape.channels; ++c) {
          image.at(y, x, c) += static_cast<float>(amplitude[c] * g);
        }
      }
    }
  }
  for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
  return image;
}

TaskDataset make_synthetic_task(const SyntheticTaskSpec& spec) {
  if (spec.n_classes < 2 && spec.prototypes.size() < 2) {
    throw ConfigError("a synthetic task needs at least two classes");
  }
  std::vector<std::size_t> protos = spec.prototypes;
  if (protos.empty()) {
    for (std::size_t c = 0; c < spec.n_classes; ++c) protos.push_back(spec.first_prototype + c);
  }

  TaskDataset ds;
  ds.name = spec.name;
  ds.overlap = spec.overlap;
  ds.source_ref = spec.source_ref;
  const char* ext = spec.image.channels == 1 ? "pgm" : "ppm";
  Rng rng(spec.sample_seed);
  const auto shift_range = static_cast<std::ptrdiff_t>(spec.max_shift);
  const Shape3 s = spec.image;

  std::vector<Tensor> bank;
  for (const std::size_t id : protos) {
    ds.classes.push_back(fmt::format("p{}", id));
    bank.push_back(synthetic_prototype(spec.bank_seed, id, s));
  }

  const std::tuple<const char*, std::size_t, std::vector<Sample>*> splits[] = {
      {"train", spec.train_per_class, &ds.train},
      {"val", spec.val_per_class, &ds.val},
      {"test", spec.test_per_class, &ds.test}};
  for (const auto& [split_name, per_class, target] : splits) {
    for (std::size_t n = 0; n < per_class; ++n) {
      for (std::size_t c = 0; c < protos.size(); ++c) {
        const std::ptrdiff_t dy =
            static_cast<std::ptrdiff_t>(rng.below(2 * spec.max_shift + 1)) - shift_range;
        const std::ptrdiff_t dx =
            static_cast<std::ptrdiff_t>(rng.below(2 * spec.max_shift + 1)) - shift_range;
        Tensor image(s);
        for (std::size_t y = 0; y < s.height; ++y) {
          const auto sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
              static_cast<std::ptrdiff_t>(y) + dy, 0, static_cast<std::ptrdiff_t>(s.height) - 1));
          for (std::size_t x = 0; x < s.width; ++x) {
            const auto sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(x) + dx, 0, static_cast<std::ptrdiff_t>(s.width) - 1));
            for (std::size_t ch = 0; ch < s.channels; ++ch) {
              const double v = bank[c].at(sy, sx, ch) + spec.noise * rng.normal();
              image.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
          }
        }
        target->push_back(Sample{fmt::format("{}/{}_{:04d}.{}", ds.classes[c], split_name, n, ext),
                                 std::move(image), c});
      }
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace tlt
