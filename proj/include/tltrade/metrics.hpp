#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tltrade/approach.hpp"

namespace tlt {

// Mean per-class recall in percent. Classes that never occur in y_true are
// left out of the mean. Throws MetricError on empty or mismatched input.
double balanced_accuracy(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                         std::size_t n_classes);

// 100 * (ft - fe) / fe. Throws MetricError when fe == 0.
double relative_difference(double ft_acc, double fe_acc);

// Validation accuracy lost by reusing the original configuration instead of
// the one selected on the subset itself.
double compute_drop(double best_for_subset_vacc, double original_config_vacc);

struct FewshotObservation {
  Approach approach = Approach::FE;
  std::size_t ic = 0;
  std::size_t subset = 0;
  double t_acc = 0.0;
};

struct CurvePoint {
  std::size_t ic = 0;
  double rel_diff_mean = 0.0;
  double rel_diff_min = 0.0;
  double rel_diff_max = 0.0;
  std::vector<double> per_subset;  // ordered by subset index
};

// FT and FE observations are paired by (ic, subset). Points come back in
// ascending ic. Throws MetricError for an unpaired or duplicated subset.
std::vector<CurvePoint> fewshot_curve(std::span<const FewshotObservation> observations);

struct RangePoint {
  std::size_t ic = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

// Mean/min/max of values grouped by ic, ascending.
std::vector<RangePoint> summarize_by_ic(std::span<const std::pair<std::size_t, double>> values);

}  // namespace tlt
