#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tltrade/orchestrator.hpp"

namespace tlt {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_text() const;  // aligned columns
  std::string to_csv() const;
};

struct ReportBundle {
  Table summary;      // one row per approach
  Table per_task;     // best V_ACC / T_ACC per task and approach
  Table best_config;  // selected configuration per task and approach
  std::map<std::string, std::string> fewshot_csv;  // file name -> content
  std::map<std::string, std::string> timing_csv;
};

// Tables use two decimals for accuracies. Fewshot and timing CSVs come from
// the ledger's fewshot rows, if any. Throws ReportError on an empty ledger.
ReportBundle render_report(const SearchLedger& ledger);

Table drop_table(const std::vector<DropRow>& rows);
Table fewshot_table(const FewshotOutcome& outcome);

// summary.{txt,csv}, per_task.{txt,csv}, best_config.{txt,csv}, plus the CSVs.
void write_report(const ReportBundle& bundle, const std::filesystem::path& dir);
void write_table(const Table& table, const std::filesystem::path& dir, const std::string& stem);

}  // namespace tlt
