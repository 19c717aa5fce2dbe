#include <doctest.h>

#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "tltrade/errors.hpp"
#include "tltrade/orchestrator.hpp"
#include "tltrade/rng.hpp"

using namespace tlt;

namespace {

// Deterministic stand-in for a pipeline: accuracy is a hash of the request
// and the number of training samples.
ExperimentRecord fake_record(const ExperimentRequest& q, const TaskDataset& ds) {
  ExperimentRecord r;
  const std::uint64_t h = fnv1a64(q.config.dump() + q.pair.task + std::to_string(ds.train.size()) +
                                  std::to_string(q.seed));
  r.v_acc = 40.0 + static_cast<double>(h % 600) / 10.0;
  r.t_acc = r.v_acc - 1.0;
  r.overfit_gap = 1.0;
  r.wall_time_hours = 0.5;
  r.energy_kwh = 0.01;
  r.e_co2_kg = co2_of(0.01);
  r.p_avg_watts = 20.0;
  r.intensity_g_per_kwh = kDefaultGridIntensity;
  r.status = RunStatus::completed;
  return r;
}

const Runner fake_runner = [](const ExperimentRequest& q, const LayeredBackbone&, const TaskDataset& ds) {
  return fake_record(q, ds);
};

Resources toy_resources(std::size_t n_tasks = 1) {
  Resources res;
  res.sources.emplace("IN", fixtures::toy_backbone(1));
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const std::string name = "task" + std::to_string(t);
    res.tasks.emplace(name, fixtures::toy_task(name, 3 + t, 20, 3, 3 * t));
  }
  return res;
}

SearchPlan small_plan(const fixtures::TempDir& dir, std::size_t n_tasks = 1) {
  SearchPlan p;
  for (std::size_t t = 0; t < n_tasks; ++t) p.pairs.push_back({"IN", "task" + std::to_string(t)});
  p.ledger = dir / "ledger.jsonl";
  return p;
}

std::map<std::string, ExperimentRecord> by_key(const std::vector<ExperimentRecord>& rs) {
  std::map<std::string, ExperimentRecord> m;
  for (const auto& r : rs) m[r.key] = r;
  return m;
}

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("default grids") {
  const auto ft = enumerate_grid(Approach::FT);
  const auto fe = enumerate_grid(Approach::FE);
  REQUIRE(ft.size() == 24);
  REQUIRE(fe.size() == 4);
  CHECK(ft[0].config.at("frozen_fraction") == 0.25);
  CHECK(ft[0].config.at("momentum") == 0.75);
  CHECK(ft[1].config.at("momentum") == 0.9);
  CHECK(ft[23].config.at("frozen_fraction") == 0.75);
  CHECK(fe[3].config.at("extract_fraction") == 1.0);
  std::set<std::string> distinct;
  for (const auto& g : ft) distinct.insert(g.config.dump());
  CHECK(distinct.size() == 24);
  for (std::size_t i = 0; i < ft.size(); ++i) CHECK(ft[i].index == i);
}

TEST_CASE("twenty pairs expand to 480 FT and 80 FE experiments") {
  SearchPlan p;
  for (int i = 0; i < 20; ++i) p.pairs.push_back({"IN", "t" + std::to_string(i)});
  const auto requests = plan_requests(p);
  std::size_t ft = 0, fe = 0;
  std::set<std::string> keys;
  for (const auto& r : requests) {
    (r.approach == Approach::FT ? ft : fe)++;
    keys.insert(resume_key(r));
  }
  CHECK(ft == 480);
  CHECK(fe == 80);
  CHECK(keys.size() == 560);
  CHECK(requests.front().approach == Approach::FE);
  CHECK(requests.front().plan_order == 0);
  CHECK(requests.back().plan_order == 19);
  CHECK_THROWS_AS(plan_requests(SearchPlan{}), ConfigError);
}

TEST_CASE("resume keys separate protocols and subsets") {
  ExperimentRequest a;
  a.pair = {"IN", "t"};
  a.config = {{"x", 1}};
  ExperimentRequest b = a;
  CHECK(resume_key(a) == resume_key(b));
  b.protocol = Protocol::fewshot;
  CHECK(resume_key(a) != resume_key(b));
  ExperimentRequest c = b;
  c.ic = 5;
  c.subset = 0;
  ExperimentRequest d = c;
  d.subset = 1;
  CHECK(resume_key(c) != resume_key(d));
  d = a;
  d.seed = 1;
  CHECK(resume_key(a) != resume_key(d));
  d = a;
  d.plan_order = 4;  // not part of the identity
  CHECK(resume_key(a) == resume_key(d));
}

TEST_CASE("search is resumable and idempotent") {
  fixtures::TempDir dir("resume");
  const Resources res = toy_resources();
  SearchPlan plan = small_plan(dir);
  const SearchOutcome first = run_search(plan, res, fake_runner);
  CHECK(first.executed == 28);
  CHECK(first.skipped == 0);
  CHECK(first.ledger.n_exp == 28);
  const SearchOutcome second = run_search(plan, res, fake_runner);
  CHECK(second.executed == 0);
  CHECK(second.skipped == 28);
  CHECK(second.ledger.records.size() == 28);

  // Drop the last 5 lines: only those experiments run again.
  std::vector<std::string> lines;
  {
    std::ifstream in(plan.ledger);
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  {
    std::ofstream out(plan.ledger, std::ios::trunc);
    for (std::size_t i = 0; i + 5 < lines.size(); ++i) out << lines[i] << '\n';
  }
  const SearchOutcome third = run_search(plan, res, fake_runner);
  CHECK(third.executed == 5);
  CHECK(third.skipped == 23);
  const auto a = by_key(first.ledger.records);
  const auto b = by_key(third.ledger.records);
  REQUIRE(a.size() == b.size());
  for (const auto& [k, r] : a) CHECK(same_outcome(r, b.at(k)));
}

TEST_CASE("records carry the request fields") {
  fixtures::TempDir dir("fields");
  const SearchOutcome out = run_search(small_plan(dir), toy_resources(), fake_runner);
  for (const auto& r : out.ledger.records) {
    CHECK(r.source_tag == "IN");
    CHECK(r.task == "task0");
    CHECK(r.protocol == Protocol::search);
    CHECK_FALSE(r.ic.has_value());
    const auto& grid = r.approach == Approach::FT ? enumerate_grid(Approach::FT) : enumerate_grid(Approach::FE);
    CHECK(r.config == grid.at(r.grid_index).config);
    CHECK_FALSE(r.id.empty());
    CHECK_FALSE(r.started_at.empty());
  }
}

TEST_CASE("a failing experiment does not stop the search") {
  fixtures::TempDir dir("fail");
  const Runner flaky = [](const ExperimentRequest& q, const LayeredBackbone& b, const TaskDataset& ds) {
    if (q.approach == Approach::FT && q.grid_index == 3) throw TrainError("loss became NaN");
    if (q.approach == Approach::FE && q.grid_index == 1) throw std::runtime_error("boom");
    return fake_runner(q, b, ds);
  };
  const SearchOutcome out = run_search(small_plan(dir), toy_resources(), flaky);
  CHECK(out.executed == 28);
  std::size_t failed = 0;
  for (const auto& r : out.ledger.records) {
    if (r.status != RunStatus::failed) continue;
    ++failed;
    if (r.approach == Approach::FT) CHECK(r.error == "TrainError: loss became NaN");
    if (r.approach == Approach::FE) CHECK(r.error == "boom");
  }
  CHECK(failed == 2);
  CHECK(out.ledger.n_exp == 28);
  const BestEntry& best_ft = out.ledger.best_per_task_approach.at({"task0", Approach::FT});
  CHECK(best_ft.grid_index != 3);
}

TEST_CASE("failed records never win even with a high accuracy") {
  std::vector<ExperimentRecord> rs(2);
  rs[0].task = rs[1].task = "t";
  rs[0].v_acc = 99.0;
  rs[0].status = RunStatus::failed;
  rs[1].v_acc = 50.0;
  rs[1].grid_index = 1;
  const SearchLedger s = summarize_ledger(rs);
  CHECK(s.best_per_task.at("t").grid_index == 1);
  CHECK(s.n_exp == 2);
}

TEST_CASE("results do not depend on the worker count") {
  fixtures::TempDir d1("w1"), d3("w3");
  const Resources res = toy_resources(2);
  SearchPlan p1 = small_plan(d1, 2);
  SearchPlan p3 = small_plan(d3, 2);
  p3.parallel_workers = 3;
  const auto a = by_key(run_search(p1, res, fake_runner).ledger.records);
  const auto b = by_key(run_search(p3, res, fake_runner).ledger.records);
  REQUIRE(a.size() == 56);
  REQUIRE(b.size() == 56);
  for (const auto& [k, r] : a) CHECK(same_outcome(r, b.at(k)));
  const SearchLedger s1 = load_search_ledger(p1.ledger);
  const SearchLedger s3 = load_search_ledger(p3.ledger);
  for (const auto& [task, e] : s1.best_per_task) {
    CHECK(e.config == s3.best_per_task.at(task).config);
    CHECK(e.approach == s3.best_per_task.at(task).approach);
  }
}

TEST_CASE("ties go to the earliest experiment in plan order") {
  fixtures::TempDir dir("tie");
  const Runner flat = [](const ExperimentRequest& q, const LayeredBackbone& b, const TaskDataset& ds) {
    ExperimentRecord r = fake_runner(q, b, ds);
    r.v_acc = 70.0;
    return r;
  };
  SearchPlan p = small_plan(dir);
  p.approaches = {Approach::FT, Approach::FE};
  p.parallel_workers = 2;
  const SearchOutcome out = run_search(p, toy_resources(), flat);
  const BestEntry& best = out.ledger.best_per_task.at("task0");
  CHECK(best.approach == Approach::FE);
  CHECK(best.grid_index == 0);
  CHECK(out.ledger.best_per_task_approach.at({"task0", Approach::FT}).grid_index == 0);
}

TEST_CASE("timeouts are charged the full limit") {
  fixtures::TempDir dir("timeout");
  static const TickingClock clock(3600.0);
  RunnerOptions opt;
  opt.clock = &clock;
  opt.time_limit_hours = 0.5;
  opt.power = [] { return std::make_shared<ConstantPowerSource>(50.0); };
  SearchPlan p = small_plan(dir);
  p.approaches = {Approach::FE};
  const SearchOutcome out = run_search(p, toy_resources(), make_pipeline_runner(opt));
  REQUIRE(out.ledger.records.size() == 4);
  for (const auto& r : out.ledger.records) {
    CHECK(r.status == RunStatus::timeout);
    CHECK(r.wall_time_hours == 0.5);
  }
  CHECK(out.ledger.total_hours == doctest::Approx(2.0));
  CHECK(out.ledger.by_approach.at(Approach::FE).total_hours == doctest::Approx(2.0));
}

TEST_CASE("analyst hours come from the meta file") {
  fixtures::TempDir dir("meta");
  SearchPlan p = small_plan(dir);
  run_search(p, toy_resources(), fake_runner);
  write_meta(p.ledger, LedgerMeta{{{"FE", 2.0}, {"FT", 6.0}}});
  SearchLedger s = load_search_ledger(p.ledger);
  CHECK(s.analyst_hours == 8.0);
  CHECK(s.by_approach.at(Approach::FT).analyst_hours == 6.0);
  write_meta(p.ledger, LedgerMeta{{{"FE", 2.0}, {"total", 5.0}}});
  s = load_search_ledger(p.ledger);
  CHECK(s.analyst_hours == 5.0);
}

TEST_CASE("fewshot protocol record counts") {
  fixtures::TempDir dir("fewshot");
  const Resources res = toy_resources();
  SearchPlan sp = small_plan(dir);
  const SearchOutcome search = run_search(sp, res, fake_runner);

  FewshotPlan fp;
  fp.tasks = {"task0"};
  fp.ic_grid = {1, 2, 5, 10};
  fp.ledger = dir / "fewshot.jsonl";
  const FewshotOutcome out = run_fewshot_protocol(fp, search.ledger.best_per_task_approach, res, fake_runner);
  CHECK(out.records.size() == 40);
  CHECK(out.executed == 40);
  REQUIRE(out.curves.count("task0"));
  const auto& curve = out.curves.at("task0");
  REQUIRE(curve.size() == 4);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].ic == fp.ic_grid[i]);
    CHECK(curve[i].per_subset.size() == 5);
    CHECK(curve[i].rel_diff_min <= curve[i].rel_diff_mean);
    CHECK(curve[i].rel_diff_mean <= curve[i].rel_diff_max);
  }
  CHECK(out.timing.at({"task0", Approach::FT}).size() == 4);
  for (const auto& r : out.records) {
    const BestEntry& b = search.ledger.best_per_task_approach.at({"task0", r.approach});
    CHECK(r.config == b.config);
    CHECK(r.protocol == Protocol::fewshot);
  }

  FewshotPlan short_plan = fp;
  short_plan.ic_grid = {1, 2, 50, 5};
  short_plan.ledger = dir / "fewshot2.jsonl";
  const FewshotOutcome partial =
      run_fewshot_protocol(short_plan, search.ledger.best_per_task_approach, res, fake_runner);
  CHECK(partial.records.size() == 30);
  CHECK(partial.skipped.size() == 1);
  CHECK(partial.curves.at("task0").size() == 3);

  // Rerunning the first plan is a no-op.
  CHECK(run_fewshot_protocol(fp, search.ledger.best_per_task_approach, res, fake_runner).executed == 0);
}

TEST_CASE("identical approaches give a flat zero curve") {
  fixtures::TempDir dir("null");
  const Resources res = toy_resources();
  const Runner same = [](const ExperimentRequest& q, const LayeredBackbone& b, const TaskDataset& ds) {
    ExperimentRecord r = fake_runner(q, b, ds);
    r.t_acc = 50.0 + static_cast<double>(ds.train.size() % 7) + static_cast<double>(*q.subset);
    return r;
  };
  std::map<std::pair<std::string, Approach>, BestEntry> best;
  best[{"task0", Approach::FE}] = BestEntry{"task0", Approach::FE, "IN", {{"a", 1}}};
  best[{"task0", Approach::FT}] = BestEntry{"task0", Approach::FT, "IN", {{"b", 2}}};
  FewshotPlan fp;
  fp.tasks = {"task0"};
  fp.ic_grid = {1, 5, 10};
  fp.ledger = dir / "fs.jsonl";
  const FewshotOutcome out = run_fewshot_protocol(fp, best, res, same);
  for (const CurvePoint& p : out.curves.at("task0")) {
    CHECK(p.rel_diff_mean == 0.0);
    CHECK(p.rel_diff_min == 0.0);
    CHECK(p.rel_diff_max == 0.0);
  }
}

TEST_CASE("fewshot needs a best configuration per approach") {
  fixtures::TempDir dir("nobest");
  FewshotPlan fp;
  fp.tasks = {"task0"};
  fp.ledger = dir / "fs.jsonl";
  CHECK_THROWS_AS(run_fewshot_protocol(fp, {}, toy_resources(), fake_runner), ConfigError);
}

TEST_CASE("reselection on the full training set loses nothing") {
  fixtures::TempDir dir("resel");
  const Resources res = toy_resources();
  const SearchOutcome search = run_search(small_plan(dir), res, fake_runner);
  ReselectPlan rp;
  rp.tasks = {"task0"};
  rp.ic_values = {20};
  rp.ledger = dir / "reselect.jsonl";
  const ReselectOutcome out =
      run_reselection(rp, SearchPlan{}, search.ledger.best_per_task_approach, res, fake_runner);
  REQUIRE(out.rows.size() == 2);
  for (const DropRow& row : out.rows) {
    CHECK(row.drop == 0.0);
    CHECK(row.best_config == row.original_config);
  }
  CHECK(out.executed == 28);
}

TEST_CASE("reselection finds a planted optimum") {
  fixtures::TempDir dir("planted");
  const Resources res = toy_resources();
  const auto ft_grid = enumerate_grid(Approach::FT);
  // Grid entry 0 wins on full data, entry 7 on small subsets.
  const Runner planted = [&](const ExperimentRequest& q, const LayeredBackbone& b, const TaskDataset& ds) {
    ExperimentRecord r = fake_runner(q, b, ds);
    const bool small = ds.train.size() < 30;
    r.v_acc = 50.0;
    if (q.grid_index == 0) r.v_acc = small ? 60.0 : 90.0;
    if (q.grid_index == 7) r.v_acc = small ? 75.0 : 80.0;
    return r;
  };
  SearchPlan sp = small_plan(dir);
  sp.approaches = {Approach::FT};
  const SearchOutcome search = run_search(sp, res, planted);
  REQUIRE(search.ledger.best_per_task_approach.at({"task0", Approach::FT}).grid_index == 0);
  ReselectPlan rp;
  rp.tasks = {"task0"};
  rp.ic_values = {5};
  rp.approaches = {Approach::FT};
  rp.ledger = dir / "reselect.jsonl";
  const ReselectOutcome out =
      run_reselection(rp, SearchPlan{}, search.ledger.best_per_task_approach, res, planted);
  REQUIRE(out.rows.size() == 1);
  CHECK(out.rows[0].best_config == ft_grid[7].config);
  CHECK(out.rows[0].v_acc == 75.0);
  CHECK(out.rows[0].original_v_acc == 60.0);
  CHECK(out.rows[0].drop == doctest::Approx(compute_drop(75.0, 60.0)));
  CHECK(out.rows[0].drop > 0.0);
}

TEST_CASE("an off-grid original configuration is run alongside the grid") {
  fixtures::TempDir dir("offgrid");
  std::map<std::pair<std::string, Approach>, BestEntry> best;
  FeConfig odd;
  odd.extract_fraction = 0.6;
  best[{"task0", Approach::FE}] = BestEntry{"task0", Approach::FE, "IN", to_json(odd)};
  ReselectPlan rp;
  rp.tasks = {"task0"};
  rp.approaches = {Approach::FE};
  rp.ic_values = {5};
  rp.ledger = dir / "r.jsonl";
  const ReselectOutcome out = run_reselection(rp, SearchPlan{}, best, toy_resources(), fake_runner);
  CHECK(out.executed == 5);
  REQUIRE(out.rows.size() == 1);
  CHECK(out.rows[0].original_config == to_json(odd));
  CHECK(out.rows[0].best_config != to_json(odd));
}

}
