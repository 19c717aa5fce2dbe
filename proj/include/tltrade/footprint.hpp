#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tltrade/clock.hpp"

namespace tlt {

// EU-27 2020 emission intensity of public electricity production.
inline constexpr double kDefaultGridIntensity = 230.7;  // g CO2 / kWh

struct PowerSample {
  double t = 0.0;  // seconds since run start
  double watts = 0.0;
  friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

struct EnergyIntegral {
  double energy_kwh = 0.0;
  double p_avg_watts = 0.0;
  double duration_hours = 0.0;
};

// Trapezoidal rule. Throws SampleError for fewer than two samples, decreasing
// timestamps or negative power. A zero-length series reports the mean of its
// readings as the average power.
EnergyIntegral integrate_energy(std::span<const PowerSample> samples);

// kg of CO2 for an energy in kWh. Throws ConfigError on negative input.
double co2_of(double energy_kwh, double intensity_g_per_kwh = kDefaultGridIntensity);

struct FootprintReport {
  double energy_kwh = 0.0;
  double p_avg_watts = 0.0;
  double e_co2_kg = 0.0;
  double intensity_g_per_kwh = kDefaultGridIntensity;
  double duration_hours = 0.0;
  bool estimated = true;
};

FootprintReport make_footprint(std::span<const PowerSample> samples,
                               double intensity_g_per_kwh = kDefaultGridIntensity,
                               bool estimated = true);

class PowerSource {
 public:
  virtual ~PowerSource() = default;
  // Instantaneous power at `t` seconds since the sampler started.
  virtual double read_watts(double t) = 0;
  virtual std::string describe() const = 0;
  // True when readings are modelled rather than measured.
  virtual bool is_estimate() const { return true; }
};

class ConstantPowerSource final : public PowerSource {
 public:
  explicit ConstantPowerSource(double watts) : watts_(watts) {}
  double read_watts(double) override { return watts_; }
  std::string describe() const override;

 private:
  double watts_;
};

class ScriptedPowerSource final : public PowerSource {
 public:
  explicit ScriptedPowerSource(std::function<double(double)> profile) : profile_(std::move(profile)) {}
  double read_watts(double t) override { return profile_(t); }
  std::string describe() const override { return "scripted"; }

 private:
  std::function<double(double)> profile_;
};

// Package power from the Linux powercap (RAPL) energy counters. Falls back to
// `fallback_watts` until two counter readings exist or when counters are
// unreadable.
class RaplPowerSource final : public PowerSource {
 public:
  explicit RaplPowerSource(double fallback_watts,
                           std::filesystem::path root = "/sys/class/powercap");
  static bool available(const std::filesystem::path& root = "/sys/class/powercap");
  double read_watts(double t) override;
  std::string describe() const override { return "rapl"; }
  bool is_estimate() const override { return counters_.empty(); }

 private:
  double read_energy_joules() const;

  std::vector<std::filesystem::path> counters_;
  double fallback_;
  double last_t_ = -1.0;
  double last_joules_ = 0.0;
  double last_watts_;
};

// Collects PowerSamples beside a running workload. With a zero period no
// thread is started and samples are only taken at start(), mark() and stop(),
// which keeps runs on a deterministic clock reproducible.
class PowerSampler {
 public:
  PowerSampler(std::shared_ptr<PowerSource> source, const Clock& clock,
               std::chrono::milliseconds period = std::chrono::milliseconds(0));
  ~PowerSampler();
  PowerSampler(const PowerSampler&) = delete;
  PowerSampler& operator=(const PowerSampler&) = delete;

  void start();
  void mark();
  std::vector<PowerSample> stop();
  bool estimated() const { return source_->is_estimate(); }

 private:
  void take_sample();

  std::shared_ptr<PowerSource> source_;
  const Clock* clock_;
  std::chrono::milliseconds period_;
  double t0_ = 0.0;
  std::mutex mutex_;
  std::condition_variable_any wake_;
  std::vector<PowerSample> samples_;
  std::jthread worker_;
  bool running_ = false;
};

void write_samples_csv(const std::filesystem::path& path, std::span<const PowerSample> samples);
std::vector<PowerSample> read_samples_csv(const std::filesystem::path& path);

}  // namespace tlt
