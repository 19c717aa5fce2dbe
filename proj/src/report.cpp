#include "tltrade/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

namespace {

std::string pct(double v) { return fmt::format("{:.2f}", v); }
std::string num(double v) { return fmt::format("{:.6f}", v); }

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string config_text(const nlohmann::json& config) {
  std::string out;
  for (const auto& [key, value] : config.items()) {
    if (!out.empty()) out += ' ';
    out += key + "=" + (value.is_string() ? value.get<std::string>() : value.dump());
  }
  return out;
}

}  // namespace

std::string Table::to_text() const {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      out += fmt::format("{:<{}}", cells[c], width[c]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (const std::size_t w : width) total += w;
  out += std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

std::string Table::to_csv() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += ',';
      out += csv_cell(cells[c]);
    }
    return out + "\n";
  };
  std::string out = line(header);
  for (const auto& row : rows) out += line(row);
  return out;
}

ReportBundle render_report(const SearchLedger& ledger) {
  if (ledger.records.empty()) throw ReportError("ledger is empty or missing");
  ReportBundle b;

  b.summary.header = {"approach", "V_ACC", "T_ACC", "P_AVG_W", "E_CO2_kg", "T_h", "n_EXP", "A_h"};
  for (const auto& [approach, totals] : ledger.by_approach) {
    double v = 0.0, t = 0.0;
    std::size_t tasks = 0;
    for (const auto& [key, best] : ledger.best_per_task_approach) {
      if (key.second != approach) continue;
      v += best.v_acc;
      t += best.t_acc;
      ++tasks;
    }
    double p = 0.0;
    for (const ExperimentRecord& r : ledger.records) {
      if (r.approach == approach) p += r.p_avg_watts;
    }
    b.summary.rows.push_back({std::string(to_string(approach)), tasks ? pct(v / tasks) : "-",
                              tasks ? pct(t / tasks) : "-",
                              totals.n_exp ? pct(p / static_cast<double>(totals.n_exp)) : "-",
                              num(totals.total_co2_kg), num(totals.total_hours), std::to_string(totals.n_exp),
                              totals.analyst_hours ? pct(*totals.analyst_hours) : "-"});
  }

  double p_all = 0.0;
  for (const ExperimentRecord& r : ledger.records) p_all += r.p_avg_watts;
  b.summary.rows.push_back({"total", "-", "-", pct(p_all / static_cast<double>(ledger.n_exp)),
                            num(ledger.total_co2_kg), num(ledger.total_hours), std::to_string(ledger.n_exp),
                            ledger.analyst_hours ? pct(*ledger.analyst_hours) : "-"});

  std::set<std::string> tasks;
  for (const auto& [key, best] : ledger.best_per_task_approach) tasks.insert(key.first);
  b.per_task.header = {"task", "FE_V_ACC", "FE_T_ACC", "FT_V_ACC", "FT_T_ACC", "best"};
  for (const std::string& task : tasks) {
    std::vector<std::string> row{task};
    for (const Approach a : {Approach::FE, Approach::FT}) {
      const auto it = ledger.best_per_task_approach.find({task, a});
      row.push_back(it == ledger.best_per_task_approach.end() ? "-" : pct(it->second.v_acc));
      row.push_back(it == ledger.best_per_task_approach.end() ? "-" : pct(it->second.t_acc));
    }
    row.push_back(std::string(to_string(ledger.best_per_task.at(task).approach)));
    b.per_task.rows.push_back(std::move(row));
  }

  b.best_config.header = {"task", "approach", "source", "config", "seed", "V_ACC", "T_ACC"};
  for (const auto& [key, best] : ledger.best_per_task_approach) {
    b.best_config.rows.push_back({key.first, std::string(to_string(key.second)), best.source_tag,
                                  config_text(best.config), std::to_string(best.seed), pct(best.v_acc),
                                  pct(best.t_acc)});
  }

  FewshotOutcome fewshot;
  for (const ExperimentRecord& r : ledger.records) {
    if (r.protocol == Protocol::fewshot) fewshot.records.push_back(r);
  }
  if (!fewshot.records.empty()) {
    fewshot_summaries(fewshot);
    for (const auto& [task, curve] : fewshot.curves) {
      std::string csv = "ic,mean,min,max\n";
      for (const CurvePoint& p : curve) {
        csv += fmt::format("{},{},{},{}\n", p.ic, num(p.rel_diff_mean), num(p.rel_diff_min), num(p.rel_diff_max));
      }
      b.fewshot_csv[fmt::format("fewshot_{}.csv", task)] = std::move(csv);
    }
    for (const auto& [key, points] : fewshot.timing) {
      std::string csv = "ic,time_mean_h,time_min_h,time_max_h\n";
      for (const RangePoint& p : points) {
        csv += fmt::format("{},{},{},{}\n", p.ic, num(p.mean), num(p.min), num(p.max));
      }
      b.timing_csv[fmt::format("timing_{}_{}.csv", key.first, to_string(key.second))] = std::move(csv);
    }
  }
  return b;
}

Table drop_table(const std::vector<DropRow>& rows) {
  Table t;
  t.header = {"task", "ic", "approach", "best_config", "V_ACC", "original_config", "original_V_ACC", "drop"};
  for (const DropRow& r : rows) {
    t.rows.push_back({r.task, std::to_string(r.ic), std::string(to_string(r.approach)), config_text(r.best_config),
                      pct(r.v_acc), config_text(r.original_config), pct(r.original_v_acc), pct(r.drop)});
  }
  return t;
}

Table fewshot_table(const FewshotOutcome& outcome) {
  Table t;
  t.header = {"task", "ic", "rel_diff_mean", "rel_diff_min", "rel_diff_max"};
  for (const auto& [task, curve] : outcome.curves) {
    for (const CurvePoint& p : curve) {
      t.rows.push_back({task, std::to_string(p.ic), pct(p.rel_diff_mean), pct(p.rel_diff_min), pct(p.rel_diff_max)});
    }
  }
  return t;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError(fmt::format("cannot write {}", path.string()));
  out << content;
}

}  // namespace

void write_table(const Table& table, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  write_file(dir / (stem + ".txt"), table.to_text());
  write_file(dir / (stem + ".csv"), table.to_csv());
}

void write_report(const ReportBundle& b, const std::filesystem::path& dir) {
  write_table(b.summary, dir, "summary");
  write_table(b.per_task, dir, "per_task");
  write_table(b.best_config, dir, "best_config");
  for (const auto& [name, content] : b.fewshot_csv) write_file(dir / name, content);
  for (const auto& [name, content] : b.timing_csv) write_file(dir / name, content);
}

}  // namespace tlt
