#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tltrade/approach.hpp"

namespace tlt {

enum class RunStatus { completed, timeout, failed };
enum class Protocol { search, fewshot, reselect };

std::string_view to_string(RunStatus status);
std::string_view to_string(Protocol protocol);
RunStatus parse_status(std::string_view text);
Protocol parse_protocol(std::string_view text);

// One line of the ledger.
struct ExperimentRecord {
  std::string id;
  std::string key;  // resume key, see orchestrator
  Approach approach = Approach::FE;
  std::string source_tag;
  std::string task;
  Protocol protocol = Protocol::search;
  std::optional<std::size_t> ic;
  std::optional<std::size_t> subset;
  std::size_t plan_order = 0;
  std::size_t grid_index = 0;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  double v_acc = 0.0;  // balanced accuracy, %
  double t_acc = 0.0;
  double overfit_gap = 0.0;
  double wall_time_hours = 0.0;
  double energy_kwh = 0.0;
  double e_co2_kg = 0.0;
  double p_avg_watts = 0.0;
  double intensity_g_per_kwh = 0.0;
  bool energy_estimated = true;
  std::size_t epochs_run = 0;
  RunStatus status = RunStatus::completed;
  std::vector<std::string> warnings;
  std::string error;
  std::string started_at;
  std::string finished_at;

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

nlohmann::json to_json(const ExperimentRecord& r);
// Throws LedgerError on missing or mistyped fields.
ExperimentRecord record_from_json(const nlohmann::json& j);

// Equal in every field except id and timestamps.
bool same_outcome(const ExperimentRecord& a, const ExperimentRecord& b);

std::string new_record_id();
std::string utc_timestamp();

// Missing file reads as an empty ledger. A malformed line throws LedgerError
// with its line number.
std::vector<ExperimentRecord> read_ledger(const std::filesystem::path& path);

// Appends one JSON line per record and flushes after each, so a crash loses
// at most the record being written. Thread-safe.
class LedgerWriter {
 public:
  explicit LedgerWriter(const std::filesystem::path& path);
  void append(const ExperimentRecord& r);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

// Manual annotations kept beside the ledger in "<ledger>.meta.json".
struct LedgerMeta {
  // Keyed by "FE" / "FT"; "total" overrides the per-approach sum.
  std::map<std::string, double> analyst_hours;
};

std::filesystem::path meta_path(const std::filesystem::path& ledger);
LedgerMeta read_meta(const std::filesystem::path& ledger);
void write_meta(const std::filesystem::path& ledger, const LedgerMeta& meta);

}  // namespace tlt
