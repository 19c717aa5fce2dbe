#include "tltrade/record.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <random>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

using nlohmann::json;

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::completed: return "completed";
    case RunStatus::timeout: return "timeout";
    case RunStatus::failed: return "failed";
  }
  return "failed";
}

std::string_view to_string(Protocol protocol) {
  switch (protocol) {
    case Protocol::search: return "search";
    case Protocol::fewshot: return "fewshot";
    case Protocol::reselect: return "reselect";
  }
  return "search";
}

RunStatus parse_status(std::string_view text) {
  if (text == "completed") return RunStatus::completed;
  if (text == "timeout") return RunStatus::timeout;
  if (text == "failed") return RunStatus::failed;
  throw LedgerError(fmt::format("unknown status '{}'", text));
}

Protocol parse_protocol(std::string_view text) {
  if (text == "search") return Protocol::search;
  if (text == "fewshot") return Protocol::fewshot;
  if (text == "reselect") return Protocol::reselect;
  throw LedgerError(fmt::format("unknown protocol '{}'", text));
}

json to_json(const ExperimentRecord& r) {
  json j;
  j["id"] = r.id;
  j["key"] = r.key;
  j["approach"] = std::string(to_string(r.approach));
  j["source_tag"] = r.source_tag;
  j["task"] = r.task;
  j["protocol"] = std::string(to_string(r.protocol));
  j["ic"] = r.ic ? json(*r.ic) : json(nullptr);
  j["subset"] = r.subset ? json(*r.subset) : json(nullptr);
  j["plan_order"] = r.plan_order;
  j["grid_index"] = r.grid_index;
  j["config"] = r.config;
  j["seed"] = r.seed;
  j["v_acc"] = r.v_acc;
  j["t_acc"] = r.t_acc;
  j["overfit_gap"] = r.overfit_gap;
  j["wall_time_hours"] = r.wall_time_hours;
  j["energy_kwh"] = r.energy_kwh;
  j["e_co2_kg"] = r.e_co2_kg;
  j["p_avg_watts"] = r.p_avg_watts;
  j["intensity_g_per_kwh"] = r.intensity_g_per_kwh;
  j["energy_estimated"] = r.energy_estimated;
  j["epochs_run"] = r.epochs_run;
  j["status"] = std::string(to_string(r.status));
  j["warnings"] = r.warnings;
  j["error"] = r.error;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  return j;
}

ExperimentRecord record_from_json(const json& j) {
  try {
    ExperimentRecord r;
    r.id = j.at("id").get<std::string>();
    r.key = j.at("key").get<std::string>();
    r.approach = parse_approach(j.at("approach").get<std::string>());
    r.source_tag = j.at("source_tag").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    if (!j.at("ic").is_null()) r.ic = j.at("ic").get<std::size_t>();
    if (!j.at("subset").is_null()) r.subset = j.at("subset").get<std::size_t>();
    r.plan_order = j.at("plan_order").get<std::size_t>();
    r.grid_index = j.at("grid_index").get<std::size_t>();
    r.config = j.at("config");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.v_acc = j.at("v_acc").get<double>();
    r.t_acc = j.at("t_acc").get<double>();
    r.overfit_gap = j.at("overfit_gap").get<double>();
    r.wall_time_hours = j.at("wall_time_hours").get<double>();
    r.energy_kwh = j.at("energy_kwh").get<double>();
    r.e_co2_kg = j.at("e_co2_kg").get<double>();
    r.p_avg_watts = j.at("p_avg_watts").get<double>();
    r.intensity_g_per_kwh = j.at("intensity_g_per_kwh").get<double>();
    r.energy_estimated = j.value("energy_estimated", true);
    r.epochs_run = j.at("epochs_run").get<std::size_t>();
    r.status = parse_status(j.at("status").get<std::string>());
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.error = j.value("error", std::string{});
    r.started_at = j.value("started_at", std::string{});
    r.finished_at = j.value("finished_at", std::string{});
    return r;
  } catch (const json::exception& e) {
    throw LedgerError(fmt::format("bad record: {}", e.what()));
  }
}

bool same_outcome(const ExperimentRecord& a, const ExperimentRecord& b) {
  ExperimentRecord x = a;
  ExperimentRecord y = b;
  x.id = y.id = {};
  x.started_at = y.started_at = {};
  x.finished_at = y.finished_at = {};
  return x == y;
}

std::string new_record_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = [] {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }();
  return fmt::format("{:016x}-{:06d}", salt, counter.fetch_add(1));
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<ExperimentRecord> read_ledger(const std::filesystem::path& path) {
  std::vector<ExperimentRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw LedgerError(fmt::format("{}:{}: {}", path.string(), number, e.what()));
    } catch (const LedgerError& e) {
      throw LedgerError(fmt::format("{}:{}: {}", path.string(), number, e.what()));
    }
  }
  return out;
}

LedgerWriter::LedgerWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw LedgerError(fmt::format("cannot open ledger {}", path.string()));
}

void LedgerWriter::append(const ExperimentRecord& r) {
  const std::string line = to_json(r).dump();
  std::lock_guard lock(mutex_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw LedgerError(fmt::format("write to {} failed", path_.string()));
}

std::filesystem::path meta_path(const std::filesystem::path& ledger) {
  return std::filesystem::path(ledger.string() + ".meta.json");
}

LedgerMeta read_meta(const std::filesystem::path& ledger) {
  LedgerMeta meta;
  std::ifstream in(meta_path(ledger));
  if (!in) return meta;
  try {
    const json j = json::parse(in);
    if (j.contains("analyst_hours")) {
      meta.analyst_hours = j.at("analyst_hours").get<std::map<std::string, double>>();
    }
  } catch (const json::exception& e) {
    throw LedgerError(fmt::format("{}: {}", meta_path(ledger).string(), e.what()));
  }
  return meta;
}

void write_meta(const std::filesystem::path& ledger, const LedgerMeta& meta) {
  std::ofstream out(meta_path(ledger));
  if (!out) throw LedgerError(fmt::format("cannot write {}", meta_path(ledger).string()));
  out << json{{"analyst_hours", meta.analyst_hours}}.dump(2) << '\n';
}

}  // namespace tlt
