#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tltrade/backbone.hpp"
#include "tltrade/clock.hpp"
#include "tltrade/fne.hpp"
#include "tltrade/footprint.hpp"
#include "tltrade/linear_svm.hpp"
#include "tltrade/record.hpp"
#include "tltrade/task_registry.hpp"

namespace tlt {

struct FtConfig {
  double frozen_fraction = 0.5;
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t min_epochs = 10;
  std::size_t max_epochs = 25;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  Initializer initializer = Initializer::he_uniform;
  std::size_t crop = 0;  // 0: 87.5% of the shorter side
};

struct FeConfig {
  double extract_fraction = 1.0;
  Thresholds thresholds;
  SvmOptions svm;
  std::uint64_t seed = 0;
  std::size_t crop = 0;
};

nlohmann::json to_json(const FtConfig& cfg);
nlohmann::json to_json(const FeConfig& cfg);
// Missing keys keep their defaults; throws ConfigError on bad values.
FtConfig ft_config_from_json(const nlohmann::json& j, FtConfig base = {});
FeConfig fe_config_from_json(const nlohmann::json& j, FeConfig base = {});

struct EarlyStopState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  std::size_t epoch = 0;  // epochs completed
};

enum class StopDecision { proceed, stop };

// Folds in the validation loss of epoch state.epoch + 1. A loss that is not
// strictly below the best so far counts as non-improving. Patience may build
// up before min_epochs; the stop is then deferred to min_epochs.
std::pair<StopDecision, EarlyStopState> early_stop_decision(EarlyStopState state, double new_val_loss,
                                                            std::size_t min_epochs = 10,
                                                            std::size_t max_epochs = 25,
                                                            std::size_t patience = 3);

struct CropVote {
  std::size_t label = 0;
  std::vector<double> scores;
};

// Plurality of ten crop predictions. Ties: larger summed score of the tied
// classes, then the lowest class index. Throws ShapeError unless given 10.
std::size_t aggregate_crops(std::span<const CropVote> votes);

struct RunContext {
  const Clock* clock = nullptr;            // null: steady clock
  std::shared_ptr<PowerSource> power;      // null: constant estimate
  double time_limit_hours = 24.0;
  double intensity_g_per_kwh = kDefaultGridIntensity;
  std::chrono::milliseconds sample_period{0};
};

// Assumed draw of one desktop CPU when no power counter is available.
inline constexpr double kFallbackWatts = 65.0;

// RAPL counters when readable, otherwise a constant estimate.
std::shared_ptr<PowerSource> default_power_source(double fallback_watts = kFallbackWatts);

// Majority-vote balanced accuracy (%) of a backbone's logits over ten crops.
double evaluate_backbone(const LayeredBackbone& b, const std::vector<Sample>& samples,
                         std::size_t n_classes, std::size_t crop);

struct SgdParams {
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  double momentum = 0.9;
  std::size_t batch_size = 64;
};

// Plain training of every non-frozen layer over ten-crop samples for a fixed
// number of epochs; used to give synthetic source backbones some pretraining.
void train_epochs(LayeredBackbone& b, const std::vector<Sample>& train, std::size_t crop,
                  const SgdParams& sgd, std::size_t epochs, std::uint64_t seed);

// `trained`, when given, receives the parameters used for evaluation (the
// best-validation-loss epoch).
ExperimentRecord run_ft_experiment(const LayeredBackbone& b, const TaskDataset& ds, const FtConfig& cfg,
                                   const RunContext& ctx = {}, LayeredBackbone* trained = nullptr);
ExperimentRecord run_fe_experiment(const LayeredBackbone& b, const TaskDataset& ds, const FeConfig& cfg,
                                   const RunContext& ctx = {});

}  // namespace tlt
