#include "tltrade/footprint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

EnergyIntegral integrate_energy(std::span<const PowerSample> samples) {
  if (samples.size() < 2) {
    throw SampleError(fmt::format("energy integration needs at least 2 samples, got {}", samples.size()));
  }
  double joules = 0.0;
  double watt_sum = samples.front().watts;
  if (samples.front().watts < 0.0) throw SampleError("negative power reading");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const PowerSample& a = samples[i - 1];
    const PowerSample& b = samples[i];
    if (b.t < a.t) {
      throw SampleError(fmt::format("sample {} goes back in time ({} < {})", i, b.t, a.t));
    }
    if (b.watts < 0.0) throw SampleError("negative power reading");
    joules += 0.5 * (a.watts + b.watts) * (b.t - a.t);
    watt_sum += b.watts;
  }
  EnergyIntegral out;
  const double seconds = samples.back().t - samples.front().t;
  out.energy_kwh = joules / 3.6e6;
  out.duration_hours = seconds / 3600.0;
  out.p_avg_watts = seconds > 0.0 ? out.energy_kwh * 1000.0 / out.duration_hours
                                  : watt_sum / static_cast<double>(samples.size());
  return out;
}

double co2_of(double energy_kwh, double intensity_g_per_kwh) {
  if (energy_kwh < 0.0 || intensity_g_per_kwh < 0.0) {
    throw ConfigError("energy and grid intensity must be non-negative");
  }
  return energy_kwh * intensity_g_per_kwh / 1000.0;
}

FootprintReport make_footprint(std::span<const PowerSample> samples, double intensity_g_per_kwh,
                               bool estimated) {
  const EnergyIntegral e = integrate_energy(samples);
  return {e.energy_kwh, e.p_avg_watts, co2_of(e.energy_kwh, intensity_g_per_kwh),
          intensity_g_per_kwh, e.duration_hours, estimated};
}

std::string ConstantPowerSource::describe() const { return fmt::format("constant:{}W", watts_); }

RaplPowerSource::RaplPowerSource(double fallback_watts, std::filesystem::path root)
    : fallback_(fallback_watts), last_watts_(fallback_watts) {
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(root, ec)) {
    const std::string name = entry.path().filename().string();
    // Package domains only ("intel-rapl:0"), not their sub-zones ("intel-rapl:0:0").
    if (name.rfind("intel-rapl:", 0) == 0 && name.find(':', 11) == std::string::npos) {
      const auto counter = entry.path() / "energy_uj";
      if (std::ifstream(counter).good()) counters_.push_back(counter);
    }
  }
  if (!counters_.empty() && read_energy_joules() < 0.0) counters_.clear();
}

bool RaplPowerSource::available(const std::filesystem::path& root) {
  return !RaplPowerSource(0.0, root).is_estimate();
}

double RaplPowerSource::read_energy_joules() const {
  double total = 0.0;
  for (const auto& path : counters_) {
    std::ifstream in(path);
    double microjoules = 0.0;
    if (!(in >> microjoules)) return -1.0;
    total += microjoules * 1e-6;
  }
  return total;
}

double RaplPowerSource::read_watts(double t) {
  if (counters_.empty()) return fallback_;
  const double joules = read_energy_joules();
  if (joules < 0.0) return last_watts_;
  // Counter wrap-around shows up as a negative delta; keep the previous value then.
  if (last_t_ >= 0.0 && t > last_t_ && joules >= last_joules_) {
    last_watts_ = (joules - last_joules_) / (t - last_t_);
  }
  last_t_ = t;
  last_joules_ = joules;
  return last_watts_;
}

PowerSampler::PowerSampler(std::shared_ptr<PowerSource> source, const Clock& clock,
                           std::chrono::milliseconds period)
    : source_(std::move(source)), clock_(&clock), period_(period) {}

PowerSampler::~PowerSampler() {
  if (running_) stop();
}

void PowerSampler::take_sample() {
  std::lock_guard lock(mutex_);
  const double t = clock_->now_seconds() - t0_;
  samples_.push_back({t, source_->read_watts(t)});
}

void PowerSampler::start() {
  {
    std::lock_guard lock(mutex_);
    samples_.clear();
    t0_ = clock_->now_seconds();
    samples_.push_back({0.0, source_->read_watts(0.0)});
    running_ = true;
  }
  if (period_.count() > 0) {
    worker_ = std::jthread([this](std::stop_token stop) {
      std::unique_lock lock(mutex_);
      while (!stop.stop_requested()) {
        wake_.wait_for(lock, stop, period_, [] { return false; });
        if (stop.stop_requested()) break;
        lock.unlock();
        take_sample();
        lock.lock();
      }
    });
  }
}

void PowerSampler::mark() { take_sample(); }

std::vector<PowerSample> PowerSampler::stop() {
  if (worker_.joinable()) {
    worker_.request_stop();
    worker_.join();
  }
  take_sample();
  std::lock_guard lock(mutex_);
  running_ = false;
  return samples_;
}

void write_samples_csv(const std::filesystem::path& path, std::span<const PowerSample> samples) {
  std::ofstream out(path);
  if (!out) throw SampleError(fmt::format("cannot write {}", path.string()));
  out << "t_seconds,watts\n";
  for (const PowerSample& s : samples) out << fmt::format("{},{}\n", s.t, s.watts);
}

std::vector<PowerSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SampleError(fmt::format("cannot open {}", path.string()));
  std::string line;
  std::getline(in, line);
  if (line.rfind("t_seconds,watts", 0) != 0) {
    throw SampleError(fmt::format("{}: expected a 't_seconds,watts' header", path.string()));
  }
  std::vector<PowerSample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    PowerSample s;
    char comma = 0;
    if (!(row >> s.t >> comma >> s.watts) || comma != ',') {
      throw SampleError(fmt::format("{}: malformed row '{}'", path.string(), line));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace tlt
