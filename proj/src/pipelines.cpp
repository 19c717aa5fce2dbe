#include "tltrade/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "tltrade/errors.hpp"
#include "tltrade/metrics.hpp"
#include "tltrade/rng.hpp"

namespace tlt {

using nlohmann::json;

json to_json(const FtConfig& cfg) {
  return json{{"frozen_fraction", cfg.frozen_fraction},
              {"learning_rate", cfg.learning_rate},
              {"weight_decay", cfg.weight_decay},
              {"momentum", cfg.momentum},
              {"batch_size", cfg.batch_size},
              {"min_epochs", cfg.min_epochs},
              {"max_epochs", cfg.max_epochs},
              {"patience", cfg.patience},
              {"initializer", std::string(to_string(cfg.initializer))},
              {"crop", cfg.crop}};
}

json to_json(const FeConfig& cfg) {
  return json{{"extract_fraction", cfg.extract_fraction},
              {"thresholds", {{"lo", cfg.thresholds.lo}, {"hi", cfg.thresholds.hi}}},
              {"svm", {{"c", cfg.svm.c}, {"tol", cfg.svm.tol}, {"max_iter", cfg.svm.max_iter}}},
              {"crop", cfg.crop}};
}

namespace {

void check_ft(const FtConfig& c) {
  if (!(c.frozen_fraction > 0.0 && c.frozen_fraction < 1.0)) {
    throw ConfigError(fmt::format("frozen_fraction {} outside (0, 1)", c.frozen_fraction));
  }
  if (!(c.learning_rate >= 0.0) || !(c.weight_decay >= 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw ConfigError("learning_rate and weight_decay must be >= 0, momentum in [0, 1)");
  }
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.min_epochs > c.max_epochs || c.max_epochs == 0) {
    throw ConfigError(fmt::format("bad epoch bounds [{}, {}]", c.min_epochs, c.max_epochs));
  }
}

void check_fe(const FeConfig& c) {
  if (!(c.extract_fraction > 0.0 && c.extract_fraction <= 1.0)) {
    throw ConfigError(fmt::format("extract_fraction {} outside (0, 1]", c.extract_fraction));
  }
  if (!(c.thresholds.lo < c.thresholds.hi)) throw ConfigError("thresholds need lo < hi");
  if (!(c.svm.c > 0.0) || !(c.svm.tol > 0.0) || c.svm.max_iter == 0) {
    throw ConfigError("SVM needs C > 0, tol > 0 and max_iter > 0");
  }
}

}  // namespace

FtConfig ft_config_from_json(const json& j, FtConfig c) {
  try {
    c.frozen_fraction = j.value("frozen_fraction", c.frozen_fraction);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.min_epochs = j.value("min_epochs", c.min_epochs);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.crop = j.value("crop", c.crop);
    if (j.contains("initializer")) c.initializer = parse_initializer(j.at("initializer").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("FT config: {}", e.what()));
  }
  check_ft(c);
  return c;
}

FeConfig fe_config_from_json(const json& j, FeConfig c) {
  try {
    c.extract_fraction = j.value("extract_fraction", c.extract_fraction);
    if (j.contains("thresholds")) {
      c.thresholds.lo = j.at("thresholds").value("lo", c.thresholds.lo);
      c.thresholds.hi = j.at("thresholds").value("hi", c.thresholds.hi);
    }
    if (j.contains("svm")) {
      const json& s = j.at("svm");
      c.svm.c = s.value("c", c.svm.c);
      c.svm.tol = s.value("tol", c.svm.tol);
      c.svm.max_iter = s.value("max_iter", c.svm.max_iter);
    }
    c.crop = j.value("crop", c.crop);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("FE config: {}", e.what()));
  }
  check_fe(c);
  return c;
}

std::pair<StopDecision, EarlyStopState> early_stop_decision(EarlyStopState s, double new_val_loss,
                                                            std::size_t min_epochs, std::size_t max_epochs,
                                                            std::size_t patience) {
  s.epoch += 1;
  if (new_val_loss < s.best_val_loss) {
    s.best_val_loss = new_val_loss;
    s.epochs_since_improvement = 0;
  } else {
    s.epochs_since_improvement += 1;
  }
  const bool stop = (s.epoch >= min_epochs && s.epochs_since_improvement >= patience) || s.epoch >= max_epochs;
  return {stop ? StopDecision::stop : StopDecision::proceed, s};
}

std::size_t aggregate_crops(std::span<const CropVote> votes) {
  if (votes.size() != 10) throw ShapeError(fmt::format("expected 10 crop predictions, got {}", votes.size()));
  std::size_t n = 0;
  for (const CropVote& v : votes) n = std::max({n, v.label + 1, v.scores.size()});
  std::vector<std::size_t> count(n, 0);
  std::vector<double> score(n, 0.0);
  for (const CropVote& v : votes) {
    ++count[v.label];
    for (std::size_t c = 0; c < v.scores.size(); ++c) score[c] += v.scores[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (count[c] > count[best] || (count[c] == count[best] && score[c] > score[best])) best = c;
  }
  return best;
}

std::shared_ptr<PowerSource> default_power_source(double fallback_watts) {
  if (RaplPowerSource::available()) return std::make_shared<RaplPowerSource>(fallback_watts);
  return std::make_shared<ConstantPowerSource>(fallback_watts);
}

namespace {

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(const std::vector<float>& z) {
  std::vector<double> p(z.begin(), z.end());
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) sum += (v = std::exp(v - m));
  for (double& v : p) v /= sum;
  return p;
}

struct CropSample {
  Tensor image;
  std::size_t label;
};

std::vector<CropSample> expand_crops(const std::vector<Sample>& samples, std::size_t crop) {
  std::vector<CropSample> out;
  out.reserve(samples.size() * 10);
  for (const Sample& s : samples) {
    CropSet set = ten_crop(s.image, crop, s.id);
    for (Tensor& t : set.crops) out.push_back({std::move(t), s.label});
  }
  return out;
}

struct Trainer {
  LayeredBackbone& net;
  SgdParams sgd;
  Gradients<float> velocity;
  Gradients<float> grads;

  Trainer(LayeredBackbone& b, const SgdParams& p)
      : net(b), sgd(p), velocity(b.zero_gradients()), grads(b.zero_gradients()) {}

  // Mean training loss of the epoch.
  double epoch(const std::vector<CropSample>& data, Rng& rng, const Deadline* deadline) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += sgd.batch_size) {
      if (deadline) deadline->check();
      const std::size_t end = std::min(order.size(), start + sgd.batch_size);
      for (auto& g : grads.weights) std::fill(g.begin(), g.end(), 0.0f);
      for (auto& g : grads.bias) std::fill(g.begin(), g.end(), 0.0f);
      for (std::size_t i = start; i < end; ++i) {
        const CropSample& s = data[order[i]];
        total += net.loss_and_gradient(s.image, s.label, grads);
      }
      if (!std::isfinite(total)) return total;
      step(static_cast<float>(end - start));
    }
    return total / static_cast<double>(data.size());
  }

  void step(float batch) {
    const auto lr = static_cast<float>(sgd.learning_rate);
    const auto wd = static_cast<float>(sgd.weight_decay);
    const auto mom = static_cast<float>(sgd.momentum);
    auto update = [&](std::vector<float>& theta, const std::vector<float>& g, std::vector<float>& v) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        v[i] = mom * v[i] - lr * (g[i] / batch + wd * theta[i]);
        theta[i] += v[i];
      }
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      WeightLayer<float>& layer = net.layers()[l];
      if (layer.frozen) continue;
      update(layer.weights, grads.weights[l], velocity.weights[l]);
      update(layer.bias, grads.bias[l], velocity.bias[l]);
    }
  }
};

double mean_loss(const LayeredBackbone& b, const std::vector<CropSample>& data, const Deadline* deadline) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (deadline && i % 64 == 0) deadline->check();
    total += b.loss(data[i].image, data[i].label);
  }
  return total / static_cast<double>(data.size());
}

// Wraps clock, power sampling and the time limit of one run.
class RunMeter {
 public:
  explicit RunMeter(const RunContext& ctx)
      : ctx_(ctx),
        clock_(ctx.clock ? ctx.clock : &steady_),
        sampler_(ctx.power ? ctx.power : std::make_shared<ConstantPowerSource>(kFallbackWatts), *clock_,
                 ctx.sample_period),
        started_(utc_timestamp()) {
    if (!(ctx.time_limit_hours > 0.0)) throw ConfigError("time limit must be positive");
    sampler_.start();
    deadline_.emplace(*clock_, ctx.time_limit_hours * 3600.0);
  }

  const Deadline* deadline() const { return &*deadline_; }
  void mark() { sampler_.mark(); }

  void finish(ExperimentRecord& r) {
    const double elapsed = deadline_->elapsed_seconds();
    const std::vector<PowerSample> samples = sampler_.stop();
    const FootprintReport f = make_footprint(samples, ctx_.intensity_g_per_kwh, sampler_.estimated());
    r.wall_time_hours = r.status == RunStatus::timeout ? ctx_.time_limit_hours : elapsed / 3600.0;
    r.energy_kwh = f.energy_kwh;
    r.e_co2_kg = f.e_co2_kg;
    r.p_avg_watts = f.p_avg_watts;
    r.intensity_g_per_kwh = f.intensity_g_per_kwh;
    r.energy_estimated = f.estimated;
    r.overfit_gap = r.v_acc - r.t_acc;
    r.started_at = started_;
    r.finished_at = utc_timestamp();
  }

 private:
  RunContext ctx_;
  SteadyClock steady_;
  const Clock* clock_;
  PowerSampler sampler_;
  std::optional<Deadline> deadline_;
  std::string started_;
};

ExperimentRecord base_record(Approach approach, const LayeredBackbone& b, const TaskDataset& ds, json config,
                             std::uint64_t seed) {
  ExperimentRecord r;
  r.id = new_record_id();
  r.approach = approach;
  r.source_tag = std::string(to_string(b.source_tag()));
  r.task = ds.name;
  r.config = std::move(config);
  r.seed = seed;
  return r;
}

double vote_accuracy(const LinearSvmModel& model, const FnEmbedding& e, const std::vector<Sample>& samples,
                     std::size_t n_classes) {
  const SvmPrediction p = predict(model, e.matrix.to_real());
  std::vector<std::size_t> truth;
  std::vector<std::size_t> pred;
  std::vector<CropVote> votes;
  for (std::size_t r = 0; r < e.matrix.rows; ++r) {
    votes.push_back({p.labels[r], std::vector<double>(p.scores.row(r).begin(), p.scores.row(r).end())});
    if (votes.size() == 10) {
      truth.push_back(samples.at(e.origin[r]).label);
      pred.push_back(aggregate_crops(votes));
      votes.clear();
    }
  }
  return balanced_accuracy(truth, pred, n_classes);
}

}  // namespace

double evaluate_backbone(const LayeredBackbone& b, const std::vector<Sample>& samples, std::size_t n_classes,
                         std::size_t crop) {
  std::vector<std::size_t> truth;
  std::vector<std::size_t> pred;
  for (const Sample& s : samples) {
    const CropSet set = ten_crop(s.image, crop, s.id);
    std::vector<CropVote> votes;
    for (const Tensor& c : set.crops) {
      std::vector<double> scores = softmax(b.forward(c));
      const std::size_t label = argmax_lowest(scores);
      votes.push_back({label, std::move(scores)});
    }
    truth.push_back(s.label);
    pred.push_back(aggregate_crops(votes));
  }
  return balanced_accuracy(truth, pred, n_classes);
}

void train_epochs(LayeredBackbone& b, const std::vector<Sample>& train, std::size_t crop, const SgdParams& sgd,
                  std::size_t epochs, std::uint64_t seed) {
  const std::vector<CropSample> data = expand_crops(train, crop);
  Trainer trainer(b, sgd);
  Rng rng(seed);
  for (std::size_t e = 0; e < epochs; ++e) {
    if (!std::isfinite(trainer.epoch(data, rng, nullptr))) throw TrainError("training loss diverged");
  }
}

ExperimentRecord run_ft_experiment(const LayeredBackbone& b, const TaskDataset& ds, const FtConfig& cfg,
                                   const RunContext& ctx, LayeredBackbone* trained) {
  check_ft(cfg);
  if (ds.val.empty() || ds.test.empty()) throw ConfigError("FT needs non-empty val and test splits");
  ExperimentRecord rec = base_record(Approach::FT, b, ds, to_json(cfg), cfg.seed);
  const std::size_t crop = cfg.crop ? cfg.crop : default_crop_side(ds.image_shape());
  const std::size_t k = ds.classes.size();

  LayeredBackbone net =
      freeze_prefix(reinit_last_two(b, k, derive_seed(cfg.seed, 1), cfg.initializer), cfg.frozen_fraction);
  LayeredBackbone best = net;
  const std::vector<CropSample> train = expand_crops(ds.train, crop);
  const std::vector<CropSample> val = expand_crops(ds.val, crop);

  RunMeter meter(ctx);
  Trainer trainer(net, {cfg.learning_rate, cfg.weight_decay, cfg.momentum, cfg.batch_size});
  Rng rng(derive_seed(cfg.seed, 2));
  EarlyStopState state;
  try {
    for (;;) {
      const double train_loss = trainer.epoch(train, rng, meter.deadline());
      const double val_loss = std::isfinite(train_loss) ? mean_loss(net, val, meter.deadline()) : train_loss;
      if (!std::isfinite(val_loss)) {
        rec.status = RunStatus::failed;
        rec.error = fmt::format("non-finite loss in epoch {}", state.epoch + 1);
        break;
      }
      const auto [decision, next] = early_stop_decision(state, val_loss, cfg.min_epochs, cfg.max_epochs,
                                                        cfg.patience);
      if (next.epochs_since_improvement == 0) best = net;
      state = next;
      rec.epochs_run = state.epoch;
      meter.mark();
      if (decision == StopDecision::stop) break;
    }
  } catch (const DeadlineExceeded&) {
    rec.status = RunStatus::timeout;
  }
  if (rec.status != RunStatus::failed) {
    rec.v_acc = evaluate_backbone(best, ds.val, k, crop);
    rec.t_acc = evaluate_backbone(best, ds.test, k, crop);
  }
  meter.finish(rec);
  if (trained) *trained = std::move(best);
  return rec;
}

ExperimentRecord run_fe_experiment(const LayeredBackbone& b, const TaskDataset& ds, const FeConfig& cfg,
                                   const RunContext& ctx) {
  check_fe(cfg);
  if (ds.val.empty() || ds.test.empty()) throw ConfigError("FE needs non-empty val and test splits");
  ExperimentRecord rec = base_record(Approach::FE, b, ds, to_json(cfg), cfg.seed);
  const std::size_t k = ds.classes.size();

  RunMeter meter(ctx);
  try {
    const FneTriple e = build_fne(b, ds, cfg.extract_fraction, cfg.thresholds, cfg.crop, meter.deadline());
    meter.mark();
    std::vector<std::size_t> labels(e.train.matrix.rows);
    for (std::size_t r = 0; r < labels.size(); ++r) labels[r] = ds.train.at(e.train.origin[r]).label;
    const LinearSvmModel model =
        train_linear_svm(e.train.matrix.to_real(), labels, ds.classes, cfg.svm, meter.deadline());
    meter.mark();
    rec.warnings = model.warnings;
    if (model.interrupted) rec.status = RunStatus::timeout;
    rec.v_acc = vote_accuracy(model, e.val, ds.val, k);
    rec.t_acc = vote_accuracy(model, e.test, ds.test, k);
  } catch (const DeadlineExceeded&) {
    rec.status = RunStatus::timeout;
  }
  meter.finish(rec);
  return rec;
}

}  // namespace tlt
