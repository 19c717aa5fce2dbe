#include "tltrade/metrics.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

std::string_view to_string(Approach approach) { return approach == Approach::FE ? "FE" : "FT"; }

Approach parse_approach(std::string_view text) {
  if (text == "FE") return Approach::FE;
  if (text == "FT") return Approach::FT;
  throw ConfigError(fmt::format("unknown approach '{}'", text));
}

double balanced_accuracy(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                         std::size_t n_classes) {
  if (y_true.empty()) throw MetricError("balanced accuracy of an empty prediction set");
  if (y_true.size() != y_pred.size()) {
    throw MetricError(fmt::format("{} labels but {} predictions", y_true.size(), y_pred.size()));
  }
  std::vector<std::size_t> support(n_classes, 0);
  std::vector<std::size_t> hits(n_classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= n_classes || y_pred[i] >= n_classes) {
      throw MetricError(fmt::format("class index outside [0, {})", n_classes));
    }
    ++support[y_true[i]];
    if (y_true[i] == y_pred[i]) ++hits[y_true[i]];
  }
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (support[c] == 0) continue;
    recall_sum += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
    ++present;
  }
  return 100.0 * recall_sum / static_cast<double>(present);
}

double relative_difference(double ft_acc, double fe_acc) {
  if (fe_acc == 0.0) throw MetricError("relative difference is undefined for a zero FE accuracy");
  return 100.0 * (ft_acc - fe_acc) / fe_acc;
}

double compute_drop(double best_for_subset_vacc, double original_config_vacc) {
  return best_for_subset_vacc - original_config_vacc;
}

std::vector<CurvePoint> fewshot_curve(std::span<const FewshotObservation> observations) {
  // ic -> subset -> (fe, ft)
  std::map<std::size_t, std::map<std::size_t, std::pair<const double*, const double*>>> grouped;
  for (const FewshotObservation& o : observations) {
    auto& slot = grouped[o.ic][o.subset];
    const double*& target = o.approach == Approach::FE ? slot.first : slot.second;
    if (target != nullptr) {
      throw MetricError(fmt::format("duplicate {} observation for ic={} subset={}", to_string(o.approach),
                                    o.ic, o.subset));
    }
    target = &o.t_acc;
  }
  std::vector<CurvePoint> curve;
  for (const auto& [ic, subsets] : grouped) {
    CurvePoint point;
    point.ic = ic;
    for (const auto& [subset, pair] : subsets) {
      if (pair.first == nullptr || pair.second == nullptr) {
        throw MetricError(fmt::format("ic={} subset={} has no matching {} run", ic, subset,
                                      pair.first == nullptr ? "FE" : "FT"));
      }
      point.per_subset.push_back(relative_difference(*pair.second, *pair.first));
    }
    double sum = 0.0;
    for (const double v : point.per_subset) sum += v;
    point.rel_diff_mean = sum / static_cast<double>(point.per_subset.size());
    const auto [lo, hi] = std::minmax_element(point.per_subset.begin(), point.per_subset.end());
    point.rel_diff_min = *lo;
    point.rel_diff_max = *hi;
    // Guard the documented ordering against round-off in the mean.
    point.rel_diff_mean = std::clamp(point.rel_diff_mean, point.rel_diff_min, point.rel_diff_max);
    curve.push_back(std::move(point));
  }
  return curve;
}

std::vector<RangePoint> summarize_by_ic(std::span<const std::pair<std::size_t, double>> values) {
  std::map<std::size_t, std::vector<double>> grouped;
  for (const auto& [ic, v] : values) grouped[ic].push_back(v);
  std::vector<RangePoint> out;
  for (const auto& [ic, vs] : grouped) {
    double sum = 0.0;
    for (const double v : vs) sum += v;
    const auto [lo, hi] = std::minmax_element(vs.begin(), vs.end());
    out.push_back({ic, std::clamp(sum / static_cast<double>(vs.size()), *lo, *hi), *lo, *hi});
  }
  return out;
}

}  // namespace tlt
