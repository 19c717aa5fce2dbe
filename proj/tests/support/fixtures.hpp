#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tltrade/backbone.hpp"
#include "tltrade/footprint.hpp"
#include "tltrade/synthetic.hpp"
#include "tltrade/task_registry.hpp"

namespace fixtures {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("tltrade_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline tlt::TaskDataset toy_task(const std::string& name = "toy", std::uint64_t sample_seed = 3,
                                 std::size_t train_per_class = 20, std::size_t n_classes = 3,
                                 std::size_t first_prototype = 0) {
  tlt::SyntheticTaskSpec s;
  s.name = name;
  s.n_classes = n_classes;
  s.train_per_class = train_per_class;
  s.sample_seed = sample_seed;
  s.first_prototype = first_prototype;
  s.overlap = tlt::Overlap::subset;
  return tlt::make_synthetic_task(s);
}

inline tlt::LayeredBackbone toy_backbone(std::uint64_t seed = 1, std::size_t n_outputs = 10) {
  tlt::BackboneSpec spec = tlt::toy_backbone_spec(n_outputs);
  spec.id = "toy";
  spec.source = tlt::SourceTag::IN;
  return tlt::LayeredBackbone(spec, seed);
}

// Epoch at which training ends under the early-stopping policy, computed from
// the whole loss history: epoch j is non-improving when its loss is not below
// the minimum of all earlier losses.
inline std::size_t stop_epoch_oracle(const std::vector<double>& losses, std::size_t min_epochs,
                                     std::size_t max_epochs, std::size_t patience) {
  for (std::size_t e = 1; e <= losses.size(); ++e) {
    std::size_t run = 0;
    for (std::size_t j = e; j >= 1; --j) {
      const double earlier = j == 1 ? std::numeric_limits<double>::infinity()
                                    : *std::min_element(losses.begin(), losses.begin() + (j - 1));
      if (losses[j - 1] >= earlier) {
        ++run;
      } else {
        break;
      }
    }
    if (e == max_epochs) return e;
    if (e >= min_epochs && run >= patience) return e;
  }
  return losses.size();
}

// Balanced accuracy in percent via an explicit confusion matrix.
inline double balanced_accuracy_oracle(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                                       std::size_t k) {
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) m[truth[i]][pred[i]] += 1.0;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double row = 0.0;
    for (const double v : m[c]) row += v;
    if (row == 0.0) continue;
    sum += m[c][c] / row;
    ++present;
  }
  return 100.0 * sum / static_cast<double>(present);
}

// kWh of a piecewise-linear power trace by the midpoint rule on a grid
// `refine` times finer than the samples.
inline double energy_midpoint_oracle(const std::vector<tlt::PowerSample>& s, int refine = 100) {
  double joules = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double dt = (s[i].t - s[i - 1].t) / refine;
    for (int k = 0; k < refine; ++k) {
      const double frac = (k + 0.5) / refine;
      joules += dt * (s[i - 1].watts + frac * (s[i].watts - s[i - 1].watts));
    }
  }
  return joules / 3.6e6;
}

}  // namespace fixtures
