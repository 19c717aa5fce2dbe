#include "tltrade/orchestrator.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include <fmt/format.h>

#include "tltrade/errors.hpp"
#include "tltrade/rng.hpp"

namespace tlt {

using nlohmann::json;

std::vector<GridConfig> enumerate_grid(Approach approach) {
  std::vector<GridConfig> grid;
  if (approach == Approach::FT) {
    for (const double fraction : {0.25, 0.5, 0.75}) {
      for (const double lr : {0.01, 0.001}) {
        for (const double wd : {0.001, 0.0001}) {
          for (const double mom : {0.75, 0.9}) {
            FtConfig c;
            c.frozen_fraction = fraction;
            c.learning_rate = lr;
            c.weight_decay = wd;
            c.momentum = mom;
            grid.push_back({approach, grid.size(), to_json(c)});
          }
        }
      }
    }
  } else {
    for (const double fraction : {0.25, 0.5, 0.75, 1.0}) {
      FeConfig c;
      c.extract_fraction = fraction;
      grid.push_back({approach, grid.size(), to_json(c)});
    }
  }
  return grid;
}

std::string resume_key(const ExperimentRequest& r) {
  const json j{{"source", r.pair.source},
               {"task", r.pair.task},
               {"approach", std::string(to_string(r.approach))},
               {"config", r.config},
               {"seed", r.seed},
               {"protocol", std::string(to_string(r.protocol))},
               {"ic", r.ic ? json(*r.ic) : json(nullptr)},
               {"subset", r.subset ? json(*r.subset) : json(nullptr)}};
  return fmt::format("{:016x}", fnv1a64(j.dump()));
}

std::vector<ExperimentRequest> plan_requests(const SearchPlan& plan) {
  if (plan.pairs.empty()) throw ConfigError("search plan has no pairs");
  if (plan.approaches.empty() || plan.seeds.empty()) throw ConfigError("search plan needs approaches and seeds");
  std::vector<ExperimentRequest> out;
  for (std::size_t p = 0; p < plan.pairs.size(); ++p) {
    for (const Approach a : plan.approaches) {
      const auto& grid = a == Approach::FT ? plan.ft_grid : plan.fe_grid;
      if (grid.empty()) throw ConfigError(fmt::format("{} grid is empty", to_string(a)));
      for (const GridConfig& g : grid) {
        for (const std::uint64_t seed : plan.seeds) {
          ExperimentRequest r;
          r.pair = plan.pairs[p];
          r.approach = a;
          r.config = g.config;
          r.seed = seed;
          r.plan_order = p;
          r.grid_index = g.index;
          out.push_back(std::move(r));
        }
      }
    }
  }
  return out;
}

Runner make_pipeline_runner(RunnerOptions opt) {
  return [opt](const ExperimentRequest& req, const LayeredBackbone& b, const TaskDataset& ds) {
    RunContext ctx;
    ctx.clock = opt.clock;
    ctx.power = opt.power ? opt.power() : nullptr;
    ctx.time_limit_hours = opt.time_limit_hours;
    ctx.intensity_g_per_kwh = opt.intensity_g_per_kwh;
    ctx.sample_period = opt.sample_period;
    if (req.approach == Approach::FT) {
      FtConfig cfg = ft_config_from_json(req.config);
      cfg.seed = req.seed;
      return run_ft_experiment(b, ds, cfg, ctx);
    }
    FeConfig cfg = fe_config_from_json(req.config);
    cfg.seed = req.seed;
    return run_fe_experiment(b, ds, cfg, ctx);
  };
}

namespace {

struct WorkItem {
  ExperimentRequest request;
  std::string key;
  const LayeredBackbone* backbone = nullptr;
  std::shared_ptr<const TaskDataset> dataset;
};

ExperimentRecord run_one(const WorkItem& w, const Runner& runner) {
  ExperimentRecord r;
  try {
    r = runner(w.request, *w.backbone, *w.dataset);
  } catch (const Error& e) {
    r = {};
    r.status = RunStatus::failed;
    r.error = fmt::format("{}: {}", e.name(), e.what());
  } catch (const std::exception& e) {
    r = {};
    r.status = RunStatus::failed;
    r.error = e.what();
  }
  const ExperimentRequest& q = w.request;
  if (r.id.empty()) r.id = new_record_id();
  if (r.started_at.empty()) r.started_at = r.finished_at = utc_timestamp();
  r.key = w.key;
  r.approach = q.approach;
  r.source_tag = q.pair.source;
  r.task = q.pair.task;
  r.protocol = q.protocol;
  r.ic = q.ic;
  r.subset = q.subset;
  r.plan_order = q.plan_order;
  r.grid_index = q.grid_index;
  r.config = q.config;
  r.seed = q.seed;
  return r;
}

// Runs the items on up to `workers` threads; every record goes through one writer.
std::size_t execute(const std::vector<WorkItem>& items, const Runner& runner, const std::filesystem::path& ledger,
                    std::size_t workers) {
  if (items.empty()) return 0;
  LedgerWriter writer(ledger);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
      try {
        writer.append(run_one(items[i], runner));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = items.size();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, items.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return items.size();
}

std::set<std::string> existing_keys(const std::filesystem::path& ledger) {
  std::set<std::string> keys;
  for (const ExperimentRecord& r : read_ledger(ledger)) keys.insert(r.key);
  return keys;
}

const LayeredBackbone& source_of(const Resources& res, const std::string& name) {
  const auto it = res.sources.find(name);
  if (it == res.sources.end()) throw ConfigError(fmt::format("unknown source '{}'", name));
  return it->second;
}

const TaskDataset& task_of(const Resources& res, const std::string& name) {
  const auto it = res.tasks.find(name);
  if (it == res.tasks.end()) throw ConfigError(fmt::format("unknown task '{}'", name));
  return it->second;
}

auto order_key(const ExperimentRecord& r) {
  return std::make_tuple(r.plan_order, static_cast<int>(r.approach), r.grid_index, r.seed);
}

BestEntry entry_of(const ExperimentRecord& r) {
  return {r.task, r.approach, r.source_tag, r.config, r.seed, r.v_acc, r.t_acc, r.id, r.plan_order, r.grid_index};
}

}  // namespace

SearchLedger summarize_ledger(std::vector<ExperimentRecord> records, const LedgerMeta& meta) {
  SearchLedger s;
  s.records = std::move(records);
  std::map<std::string, const ExperimentRecord*> best_task;
  std::map<std::pair<std::string, Approach>, const ExperimentRecord*> best_pair;
  for (const ExperimentRecord& r : s.records) {
    ++s.n_exp;
    s.total_hours += r.wall_time_hours;
    s.total_co2_kg += r.e_co2_kg;
    s.total_energy_kwh += r.energy_kwh;
    ApproachTotals& t = s.by_approach[r.approach];
    ++t.n_exp;
    t.total_hours += r.wall_time_hours;
    t.total_co2_kg += r.e_co2_kg;
    t.total_energy_kwh += r.energy_kwh;
    if (r.protocol != Protocol::search || r.status == RunStatus::failed) continue;
    const ExperimentRecord*& bt = best_task[r.task];
    if (!bt || r.v_acc > bt->v_acc || (r.v_acc == bt->v_acc && order_key(r) < order_key(*bt))) bt = &r;
    const ExperimentRecord*& bp = best_pair[{r.task, r.approach}];
    if (!bp || r.v_acc > bp->v_acc || (r.v_acc == bp->v_acc && order_key(r) < order_key(*bp))) bp = &r;
  }
  for (const auto& [task, r] : best_task) s.best_per_task[task] = entry_of(*r);
  for (const auto& [key, r] : best_pair) s.best_per_task_approach[key] = entry_of(*r);
  for (const auto& [name, hours] : meta.analyst_hours) {
    if (name == "total") continue;
    const Approach a = parse_approach(name);
    s.by_approach[a].analyst_hours = hours;
    s.analyst_hours = s.analyst_hours.value_or(0.0) + hours;
  }
  if (const auto it = meta.analyst_hours.find("total"); it != meta.analyst_hours.end()) {
    s.analyst_hours = it->second;
  }
  return s;
}

SearchLedger load_search_ledger(const std::filesystem::path& ledger) {
  return summarize_ledger(read_ledger(ledger), read_meta(ledger));
}

SearchOutcome run_search(const SearchPlan& plan, const Resources& resources, const Runner& runner) {
  const std::vector<ExperimentRequest> requests = plan_requests(plan);
  std::map<std::string, std::shared_ptr<const TaskDataset>> datasets;
  for (const TaskPair& p : plan.pairs) {
    source_of(resources, p.source);
    if (!datasets.count(p.task)) datasets[p.task] = std::make_shared<TaskDataset>(task_of(resources, p.task));
  }
  const std::set<std::string> done = existing_keys(plan.ledger);
  std::vector<WorkItem> items;
  SearchOutcome out;
  for (const ExperimentRequest& r : requests) {
    std::string key = resume_key(r);
    if (done.count(key)) {
      ++out.skipped;
      continue;
    }
    items.push_back({r, std::move(key), &source_of(resources, r.pair.source), datasets.at(r.pair.task)});
  }
  out.executed = execute(items, runner, plan.ledger, plan.parallel_workers);
  out.ledger = load_search_ledger(plan.ledger);
  return out;
}

void fewshot_summaries(FewshotOutcome& outcome) {
  outcome.curves.clear();
  outcome.timing.clear();
  std::map<std::string, std::vector<FewshotObservation>> by_task;
  std::map<std::pair<std::string, Approach>, std::vector<std::pair<std::size_t, double>>> times;
  for (const ExperimentRecord& r : outcome.records) {
    if (r.protocol != Protocol::fewshot || r.status == RunStatus::failed || !r.ic || !r.subset) continue;
    by_task[r.task].push_back({r.approach, *r.ic, *r.subset, r.t_acc});
    times[{r.task, r.approach}].push_back({*r.ic, r.wall_time_hours});
  }
  for (auto& [task, obs] : by_task) {
    // Only subsets observed under both approaches form a curve point.
    std::map<std::pair<std::size_t, std::size_t>, int> seen;
    for (const auto& o : obs) seen[{o.ic, o.subset}] |= o.approach == Approach::FE ? 1 : 2;
    std::vector<FewshotObservation> paired;
    for (const auto& o : obs) {
      if (seen[{o.ic, o.subset}] == 3) paired.push_back(o);
    }
    if (!paired.empty()) outcome.curves[task] = fewshot_curve(paired);
  }
  for (const auto& [key, values] : times) outcome.timing[key] = summarize_by_ic(values);
}

FewshotOutcome run_fewshot_protocol(const FewshotPlan& plan,
                                    const std::map<std::pair<std::string, Approach>, BestEntry>& best,
                                    const Resources& resources, const Runner& runner) {
  if (plan.tasks.empty() || plan.ic_grid.empty() || plan.n_subsets == 0) {
    throw ConfigError("fewshot plan needs tasks, an ic grid and at least one subset");
  }
  FewshotOutcome out;
  const std::set<std::string> done = existing_keys(plan.ledger);
  std::vector<WorkItem> items;
  for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
    const std::string& task = plan.tasks[t];
    const TaskDataset& ds = task_of(resources, task);
    for (const Approach a : plan.approaches) {
      if (!best.count({task, a})) {
        throw ConfigError(fmt::format("no {} search result for task '{}'", to_string(a), task));
      }
    }
    for (const std::size_t ic : plan.ic_grid) {
      std::vector<std::shared_ptr<const TaskDataset>> subsets;
      try {
        for (std::size_t k = 0; k < plan.n_subsets; ++k) {
          subsets.push_back(std::make_shared<TaskDataset>(make_fewshot_subset(ds, ic, plan.base_seed, k)));
        }
      } catch (const InsufficientDataError& e) {
        out.skipped.push_back(fmt::format("{} ic={}: {}", task, ic, e.what()));
        continue;
      }
      for (std::size_t k = 0; k < subsets.size(); ++k) {
        for (const Approach a : plan.approaches) {
          const BestEntry& b = best.at({task, a});
          ExperimentRequest r;
          r.pair = {b.source_tag, task};
          r.approach = a;
          r.config = b.config;
          r.seed = b.seed;
          r.protocol = Protocol::fewshot;
          r.ic = ic;
          r.subset = k;
          r.plan_order = t;
          r.grid_index = b.grid_index;
          std::string key = resume_key(r);
          if (done.count(key)) continue;
          items.push_back({r, std::move(key), &source_of(resources, b.source_tag), subsets[k]});
        }
      }
    }
  }
  out.executed = execute(items, runner, plan.ledger, plan.parallel_workers);
  const std::set<std::string> tasks(plan.tasks.begin(), plan.tasks.end());
  const std::set<std::size_t> ics(plan.ic_grid.begin(), plan.ic_grid.end());
  for (ExperimentRecord& r : read_ledger(plan.ledger)) {
    if (r.protocol == Protocol::fewshot && tasks.count(r.task) && r.ic && ics.count(*r.ic) && r.subset &&
        *r.subset < plan.n_subsets) {
      out.records.push_back(std::move(r));
    }
  }
  fewshot_summaries(out);
  return out;
}

ReselectOutcome run_reselection(const ReselectPlan& plan, const SearchPlan& grids,
                                const std::map<std::pair<std::string, Approach>, BestEntry>& best,
                                const Resources& resources, const Runner& runner) {
  if (plan.tasks.empty() || plan.ic_values.empty()) throw ConfigError("reselection plan needs tasks and ic values");
  ReselectOutcome out;
  const std::set<std::string> done = existing_keys(plan.ledger);
  std::vector<WorkItem> items;
  struct Cell {
    std::string task;
    std::size_t ic;
    Approach approach;
    std::size_t grid_size;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
    const std::string& task = plan.tasks[t];
    const TaskDataset& ds = task_of(resources, task);
    for (const std::size_t ic : plan.ic_values) {
      std::shared_ptr<const TaskDataset> subset;
      try {
        subset = std::make_shared<TaskDataset>(make_fewshot_subset(ds, ic, plan.base_seed, 0));
      } catch (const InsufficientDataError& e) {
        out.skipped.push_back(fmt::format("{} ic={}: {}", task, ic, e.what()));
        continue;
      }
      for (const Approach a : plan.approaches) {
        const auto it = best.find({task, a});
        if (it == best.end()) {
          throw ConfigError(fmt::format("no {} search result for task '{}'", to_string(a), task));
        }
        const BestEntry& orig = it->second;
        const auto& grid = a == Approach::FT ? grids.ft_grid : grids.fe_grid;
        std::vector<std::pair<std::size_t, json>> configs;
        bool original_in_grid = false;
        for (const GridConfig& g : grid) {
          configs.push_back({g.index, g.config});
          original_in_grid = original_in_grid || g.config == orig.config;
        }
        if (!original_in_grid) configs.push_back({grid.size(), orig.config});
        for (const auto& [index, config] : configs) {
          ExperimentRequest r;
          r.pair = {orig.source_tag, task};
          r.approach = a;
          r.config = config;
          r.seed = orig.seed;
          r.protocol = Protocol::reselect;
          r.ic = ic;
          r.subset = 0;
          r.plan_order = t;
          r.grid_index = index;
          std::string key = resume_key(r);
          if (done.count(key)) continue;
          items.push_back({r, std::move(key), &source_of(resources, orig.source_tag), subset});
        }
        cells.push_back({task, ic, a, grid.size()});
      }
    }
  }
  out.executed = execute(items, runner, plan.ledger, plan.parallel_workers);
  const std::vector<ExperimentRecord> records = read_ledger(plan.ledger);
  for (const Cell& c : cells) {
    const BestEntry& orig = best.at({c.task, c.approach});
    const ExperimentRecord* winner = nullptr;
    const ExperimentRecord* original = nullptr;
    for (const ExperimentRecord& r : records) {
      if (r.protocol != Protocol::reselect || r.task != c.task || r.ic != c.ic || r.approach != c.approach ||
          r.seed != orig.seed || r.source_tag != orig.source_tag || r.status == RunStatus::failed) {
        continue;
      }
      if (r.config == orig.config) original = &r;
      if (r.grid_index < c.grid_size &&
          (!winner || r.v_acc > winner->v_acc || (r.v_acc == winner->v_acc && r.grid_index < winner->grid_index))) {
        winner = &r;
      }
    }
    if (!winner || !original) {
      out.skipped.push_back(fmt::format("{} ic={} {}: no usable records", c.task, c.ic, to_string(c.approach)));
      continue;
    }
    out.rows.push_back({c.task, c.ic, c.approach, winner->config, winner->v_acc, orig.config, original->v_acc,
                        compute_drop(winner->v_acc, original->v_acc)});
  }
  return out;
}

}  // namespace tlt
