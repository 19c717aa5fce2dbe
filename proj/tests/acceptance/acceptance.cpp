// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "svm_cases.hpp"
#include "tltrade/backbone.hpp"
#include "tltrade/fne.hpp"
#include "tltrade/footprint.hpp"
#include "tltrade/linear_svm.hpp"
#include "tltrade/metrics.hpp"
#include "tltrade/orchestrator.hpp"
#include "tltrade/pipelines.hpp"
#include "tltrade/recommender.hpp"
#include "tltrade/rng.hpp"

using namespace tlt;

namespace {

// Collects failed expectations of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  bool ok() const { return failed_ == 0; }
  std::size_t count() const { return count_; }
  std::size_t failed() const { return failed_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::size_t count_ = 0;
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<void(Check&)> body;
};

RunContext ticking(const Clock& clock, double limit_hours = 24.0) {
  RunContext ctx;
  ctx.clock = &clock;
  ctx.power = std::make_shared<ConstantPowerSource>(80.0);
  ctx.time_limit_hours = limit_hours;
  return ctx;
}

void grid_fidelity(Check& c) {
  c.expect(enumerate_grid(Approach::FT).size() == 24, "24 FT configurations");
  c.expect(enumerate_grid(Approach::FE).size() == 4, "4 FE configurations");
  SearchPlan plan;
  for (int i = 0; i < 20; ++i) plan.pairs.push_back({"IN", fmt::format("task{}", i)});
  std::size_t ft = 0, fe = 0;
  for (const ExperimentRequest& r : plan_requests(plan)) (r.approach == Approach::FT ? ft : fe)++;
  c.expect(ft == 480, fmt::format("480 FT records planned, got {}", ft));
  c.expect(fe == 80, fmt::format("80 FE records planned, got {}", fe));
}

void layer_mapping(Check& c) {
  const std::size_t total = vgg16_spec().layers.size();
  c.expect(total == 16, "16 weight layers");
  const std::vector<std::size_t> frozen{4, 8, 12};
  const std::vector<double> ff{0.25, 0.5, 0.75};
  for (std::size_t i = 0; i < ff.size(); ++i) {
    const std::size_t got = layers_for_fraction(total, SelectionMode::freeze_prefix, ff[i]);
    c.expect(got == frozen[i], fmt::format("freeze {} -> {}, got {}", ff[i], frozen[i], got));
  }
  const std::vector<std::size_t> extracted{3, 7, 11, 15};
  const std::vector<double> ef{0.25, 0.5, 0.75, 1.0};
  for (std::size_t i = 0; i < ef.size(); ++i) {
    const std::size_t got = layers_for_fraction(total, SelectionMode::extract_suffix, ef[i]);
    c.expect(got == extracted[i], fmt::format("extract {} -> {}, got {}", ef[i], extracted[i], got));
  }
}

void co2_arithmetic(Check& c) {
  c.expect(co2_of(1.0) == 0.2307, fmt::format("1 kWh -> {:.17g}", co2_of(1.0)));
  const double big = co2_of(873.6);
  c.expect(std::abs(big - 201.54) <= 0.01, fmt::format("873.6 kWh -> {}", big));
}

std::size_t simulate(const std::vector<double>& losses, std::size_t patience) {
  EarlyStopState s;
  for (const double l : losses) {
    const auto [d, next] = early_stop_decision(s, l, 10, 25, patience);
    s = next;
    if (d == StopDecision::stop) break;
  }
  return s.epoch;
}

void early_stopping(Check& c) {
  Rng rng(2024);
  std::vector<std::vector<double>> suite;
  std::vector<double> down(30), flat(30, 1.0), up(30);
  for (std::size_t i = 0; i < 30; ++i) {
    down[i] = 1.0 / static_cast<double>(i + 1);
    up[i] = static_cast<double>(i);
  }
  suite.push_back(down);
  suite.push_back(flat);
  suite.push_back(up);
  for (int k = 0; k < 40; ++k) {
    std::vector<double> s(30);
    double level = 2.0;
    for (double& v : s) {
      level += rng.uniform(-0.12, 0.08);
      v = std::round(level * 10.0) / 10.0;
    }
    suite.push_back(s);
  }
  for (std::size_t i = 0; i < suite.size(); ++i) {
    for (const std::size_t patience : {1, 3, 5}) {
      const std::size_t got = simulate(suite[i], patience);
      const std::size_t want = fixtures::stop_epoch_oracle(suite[i], 10, 25, patience);
      c.expect(got == want, fmt::format("sequence {} patience {}: {} vs {}", i, patience, got, want));
      c.expect(got >= 10 && got <= 25, fmt::format("sequence {} stopped at {}", i, got));
    }
  }
}

void fne_properties(Check& c) {
  const LayeredBackbone b = fixtures::toy_backbone(1);
  const TaskDataset ds = fixtures::toy_task("fne", 3, 6);
  const std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
  for (const double f : fractions) {
    const FneTriple e = build_fne(b, ds, f, Thresholds{}, 14);
    const std::size_t count = layers_for_fraction(b.layer_count(), SelectionMode::extract_suffix, f);
    std::size_t width = 0;
    for (std::size_t k = 0; k < count; ++k) width += b.layers()[b.layer_count() - 2 - k].activation.channels;
    c.expect(e.train.matrix.cols == width, fmt::format("fraction {}: width {} vs {}", f, e.train.matrix.cols, width));
    for (const FnEmbedding* m : {&e.train, &e.val, &e.test}) {
      for (const std::int8_t v : m->matrix.data) c.expect(v == -1 || v == 0 || v == 1, "ternary entry");
    }
  }
  // Perturbing val/test leaves the train side of the embedding untouched.
  TaskDataset moved = ds;
  Rng rng(5);
  for (auto* split : {&moved.val, &moved.test}) {
    for (Sample& s : *split) {
      for (float& v : s.image.data) v = static_cast<float>(rng.uniform());
    }
  }
  const FneTriple a = build_fne(b, ds, 1.0, Thresholds{}, 14);
  const FneTriple m = build_fne(b, moved, 1.0, Thresholds{}, 14);
  c.expect(a.train.standardizer.means == m.train.standardizer.means, "means fitted on train only");
  c.expect(a.train.standardizer.stds == m.train.standardizer.stds, "stds fitted on train only");
  c.expect(a.train.matrix.data == m.train.matrix.data, "train embedding unchanged");
  c.expect(a.val.matrix.data != m.val.matrix.data, "val embedding follows val images");
}

void svm_oracle(Check& c) {
  for (const SvmCase& k : svm_cases()) {
    Matrix x(k.n, k.d);
    x.data = k.x;
    SvmOptions opt;
    opt.c = k.c;
    const BinarySvm fit = train_binary_svm(x, k.y, opt);
    const double rel = std::abs(fit.primal_objective - k.objective) / k.objective;
    c.expect(rel <= 1e-3, fmt::format("{}: objective {} vs {} (rel {:.2e})", k.name, fit.primal_objective,
                                      k.objective, rel));
    if (std::string(k.name).rfind("separable", 0) == 0) {
      std::vector<std::size_t> labels;
      for (const int y : k.y) labels.push_back(y > 0 ? 0 : 1);
      const LinearSvmModel model = train_linear_svm(x, labels, {"pos", "neg"}, opt);
      const SvmPrediction p = predict(model, x);
      c.expect(p.labels == labels, fmt::format("{}: train accuracy below 100%", k.name));
    }
  }
}

void balanced_accuracy_cases(Check& c) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(9);
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::size_t> truth(n), pred(n);
    for (std::size_t j = 0; j < n; ++j) {
      truth[j] = rng.below(k);
      pred[j] = rng.uniform() < 0.6 ? truth[j] : rng.below(k);
    }
    const double got = balanced_accuracy(truth, pred, k);
    const double want = fixtures::balanced_accuracy_oracle(truth, pred, k);
    c.expect(std::abs(got - want) <= 1e-12, fmt::format("case {}: {} vs {}", i, got, want));
  }
}

void energy_integration(Check& c) {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    std::vector<PowerSample> s;
    double t = 0.0;
    const std::size_t n = 2 + rng.below(60);
    for (std::size_t j = 0; j < n; ++j) {
      s.push_back({t, rng.uniform(0.0, 300.0)});
      t += rng.uniform(0.01, 30.0);
    }
    const double got = integrate_energy(s).energy_kwh;
    const double want = fixtures::energy_midpoint_oracle(s, 100);
    c.expect(std::abs(got - want) <= 1e-6 * want, fmt::format("series {}: {} vs {}", i, got, want));
  }
  const std::vector<PowerSample> rect{{0.0, 100.0}, {1800.0, 100.0}, {3600.0, 100.0}};
  const std::vector<PowerSample> tri{{0.0, 0.0}, {3600.0, 100.0}};
  c.expect(integrate_energy(rect).energy_kwh == 0.1, "rectangle 100 W x 1 h = 0.1 kWh");
  c.expect(integrate_energy(tri).energy_kwh == 0.05, "triangle 0-100 W over 1 h = 0.05 kWh");
  c.expect(integrate_energy(rect).p_avg_watts == 100.0, "rectangle average power");
}

void end_to_end(Check& c) {
  const TaskDataset ds = fixtures::toy_task("e2e", 11, 10);
  const LayeredBackbone b = fixtures::toy_backbone(3);
  FeConfig fe;
  fe.seed = 7;
  const TickingClock c1(0.25), c2(0.25);
  const ExperimentRecord r1 = run_fe_experiment(b, ds, fe, ticking(c1));
  const ExperimentRecord r2 = run_fe_experiment(b, ds, fe, ticking(c2));
  c.expect(same_outcome(r1, r2), "FE reruns agree in every field but id/timestamps");
  c.expect(r1.id != r2.id, "FE reruns get distinct ids");

  FtConfig ft;
  ft.frozen_fraction = 0.5;
  ft.learning_rate = 0.01;
  ft.weight_decay = 0.0001;
  ft.momentum = 0.9;
  ft.seed = 7;
  const TickingClock c3(0.001);
  LayeredBackbone trained;
  const ExperimentRecord r = run_ft_experiment(b, ds, ft, ticking(c3), &trained);
  c.expect(r.status == RunStatus::completed, "FT completes");
  const std::size_t frozen = layers_for_fraction(b.layer_count(), SelectionMode::freeze_prefix, ft.frozen_fraction);
  for (std::size_t l = 0; l < frozen; ++l) {
    c.expect(trained.layers()[l].weights == b.layers()[l].weights, fmt::format("layer {} weights bit-identical", l));
    c.expect(trained.layers()[l].bias == b.layers()[l].bias, fmt::format("layer {} bias bit-identical", l));
  }
  const LayeredBackbone baseline =
      freeze_prefix(reinit_last_two(b, ds.classes.size(), derive_seed(ft.seed, 1)), ft.frozen_fraction);
  const double base_acc = evaluate_backbone(baseline, ds.val, ds.classes.size(), 14);
  c.expect(r.v_acc >= base_acc + 10.0, fmt::format("FT V_ACC {:.2f} vs untrained {:.2f}", r.v_acc, base_acc));
  std::cout << fmt::format("      FT V_ACC {:.2f}, untrained baseline {:.2f}, FE V_ACC {:.2f}\n", r.v_acc, base_acc,
                           r1.v_acc);
}

void fewshot_shape(Check& c) {
  fixtures::TempDir dir("accept_fs");
  Resources res;
  res.sources.emplace("IN", fixtures::toy_backbone(1));
  res.tasks.emplace("toy", fixtures::toy_task("toy", 3, 20));
  static const TickingClock clock(0.01);
  RunnerOptions opt;
  opt.clock = &clock;
  const Runner runner = make_pipeline_runner(opt);
  std::map<std::pair<std::string, Approach>, BestEntry> best;
  best[{"toy", Approach::FE}] = BestEntry{"toy", Approach::FE, "IN", to_json(FeConfig{})};
  FtConfig ft;
  ft.frozen_fraction = 0.5;
  best[{"toy", Approach::FT}] = BestEntry{"toy", Approach::FT, "IN", to_json(ft)};

  FewshotPlan plan;
  plan.tasks = {"toy"};
  plan.ic_grid = {1, 2, 5, 10};
  plan.ledger = dir / "fewshot.jsonl";
  const FewshotOutcome out = run_fewshot_protocol(plan, best, res, runner);
  c.expect(out.records.size() == 40, fmt::format("40 records, got {}", out.records.size()));
  const auto it = out.curves.find("toy");
  c.expect(it != out.curves.end(), "curve for the toy task");
  if (it != out.curves.end()) {
    c.expect(it->second.size() == 4, "four curve points");
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const CurvePoint& p = it->second[i];
      if (i > 0) c.expect(p.ic > it->second[i - 1].ic, "points ordered by ic");
      c.expect(p.rel_diff_min <= p.rel_diff_mean && p.rel_diff_mean <= p.rel_diff_max,
               fmt::format("ic {}: min <= mean <= max", p.ic));
    }
  }

  // Null test: both approach labels run the same FE pipeline.
  const Runner same = [&](const ExperimentRequest& q, const LayeredBackbone& b, const TaskDataset& ds) {
    ExperimentRequest fe_req = q;
    fe_req.approach = Approach::FE;
    fe_req.config = best.at({"toy", Approach::FE}).config;
    return runner(fe_req, b, ds);
  };
  FewshotPlan null_plan = plan;
  null_plan.ledger = dir / "null.jsonl";
  const FewshotOutcome null_out = run_fewshot_protocol(null_plan, best, res, same);
  for (const CurvePoint& p : null_out.curves.at("toy")) {
    for (const double d : p.per_subset) {
      c.expect(std::abs(d) < 1e-9, fmt::format("ic {}: self-comparison rel_diff {}", p.ic, d));
    }
  }
}

void recommender_table(Check& c) {
  auto choice = [](Overlap o, std::size_t ic, Priority p) {
    return recommend({true, o, ic, p}).choice;
  };
  c.expect(choice(Overlap::subset, 50, Priority::performance) == Choice::FT, "subset, 50 -> FT");
  c.expect(choice(Overlap::disjoint, 5, Priority::performance) == Choice::FE, "disjoint, 5 -> FE");
  c.expect(choice(Overlap::disjoint, 150, Priority::performance) == Choice::probe_both, "disjoint, 150 -> probe");
  for (const Overlap o : {Overlap::subset, Overlap::intersect, Overlap::disjoint, Overlap::unknown}) {
    for (std::size_t ic = 1; ic <= 200; ++ic) {
      c.expect(choice(o, ic, Priority::cost) == Choice::FE, "cost -> FE");
    }
    bool seen_ft = false;
    for (std::size_t ic = 1; ic <= 200; ++ic) {
      const Choice ch = choice(o, ic, Priority::performance);
      seen_ft = seen_ft || ch == Choice::FT;
      c.expect(!(seen_ft && ch == Choice::FE), fmt::format("{} ic {}: FT then FE", to_string(o), ic));
    }
  }
}

void ledger_accounting(Check& c) {
  fixtures::TempDir dir("accept_ledger");
  Resources res;
  res.sources.emplace("IN", fixtures::toy_backbone(1));
  res.tasks.emplace("toy", fixtures::toy_task("toy", 3, 4));
  static const TickingClock slow(3600.0);
  RunnerOptions opt;
  opt.clock = &slow;
  opt.time_limit_hours = 0.75;
  SearchPlan plan;
  plan.pairs = {{"IN", "toy"}};
  plan.approaches = {Approach::FE};
  plan.ledger = dir / "timeout.jsonl";
  const SearchOutcome out = run_search(plan, res, make_pipeline_runner(opt));
  for (const ExperimentRecord& r : out.ledger.records) {
    c.expect(r.status == RunStatus::timeout, "slow run times out");
    c.expect(r.wall_time_hours == 0.75, fmt::format("timeout charged {} h", r.wall_time_hours));
  }
  c.expect(out.ledger.total_hours == 4 * 0.75, fmt::format("sum of limits, got {}", out.ledger.total_hours));

  // 100 synthetic records through the ledger file.
  Rng rng(8);
  const std::filesystem::path path = dir / "synthetic.jsonl";
  {
    LedgerWriter w(path);
    for (int i = 0; i < 100; ++i) {
      ExperimentRecord r;
      r.id = new_record_id();
      r.key = fmt::format("k{}", i);
      r.task = fmt::format("t{}", i % 7);
      r.approach = rng.below(2) ? Approach::FT : Approach::FE;
      r.grid_index = static_cast<std::size_t>(i);
      r.status = rng.below(10) == 0 ? RunStatus::timeout : RunStatus::completed;
      r.wall_time_hours = r.status == RunStatus::timeout ? 24.0 : rng.uniform(0.01, 3.0);
      r.energy_kwh = rng.uniform(0.0, 2.0);
      r.e_co2_kg = co2_of(r.energy_kwh);
      r.v_acc = rng.uniform(30, 100);
      w.append(r);
    }
  }
  const std::vector<ExperimentRecord> records = read_ledger(path);
  const SearchLedger s = load_search_ledger(path);
  double hours = 0, co2 = 0, kwh = 0;
  std::map<Approach, double> hours_by;
  for (const ExperimentRecord& r : records) {
    hours += r.wall_time_hours;
    co2 += r.e_co2_kg;
    kwh += r.energy_kwh;
    hours_by[r.approach] += r.wall_time_hours;
  }
  c.expect(records.size() == 100 && s.n_exp == 100, "100 records");
  c.expect(std::abs(s.total_hours - hours) <= 1e-9 * hours, "total hours");
  c.expect(std::abs(s.total_co2_kg - co2) <= 1e-9 * co2, "total CO2");
  c.expect(std::abs(s.total_energy_kwh - kwh) <= 1e-9 * kwh, "total energy");
  for (const auto& [a, h] : hours_by) {
    c.expect(std::abs(s.by_approach.at(a).total_hours - h) <= 1e-9 * h, "per-approach hours");
  }
}

void gradient_check(Check& c) {
  const LayeredBackbone b = fixtures::toy_backbone(5);
  for (std::uint64_t trial = 0; trial < 2; ++trial) {
    const auto checks =
        fixtures::gradient_check(b, fixtures::random_image({14, 14, 3}, 40 + trial), trial % 10, 10, 60 + trial);
    c.expect(checks.size() == 10, "10 slices checked");
    for (const auto& s : checks) {
      c.expect(s.rel_error <= 1e-4, fmt::format("layer {} {} offset {}: rel error {:.3e}", s.layer,
                                                s.bias ? "bias" : "weights", s.offset, s.rel_error));
    }
  }
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "grid fidelity", 1.0, grid_fidelity},
      {2, "layer mapping", 1.0, layer_mapping},
      {3, "CO2 arithmetic", 1.0, co2_arithmetic},
      {4, "early stopping", 1.0, early_stopping},
      {5, "FNE properties", 30.0, fne_properties},
      {6, "SVM oracle", 60.0, svm_oracle},
      {7, "balanced accuracy", 10.0, balanced_accuracy_cases},
      {8, "energy integration", 10.0, energy_integration},
      {9, "end-to-end determinism", 300.0, end_to_end},
      {10, "few-shot protocol shape", 600.0, fewshot_shape},
      {11, "recommender table", 1.0, recommender_table},
      {12, "ledger accounting", 10.0, ledger_accounting},
      {13, "gradient check", 60.0, gradient_check},
  };
  int failed = 0;
  for (const Criterion& k : criteria) {
    Check check;
    std::string error;
    const auto start = std::chrono::steady_clock::now();
    try {
      k.body(check);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= k.budget_s;
    const bool pass = check.ok() && error.empty() && in_time;
    failed += pass ? 0 : 1;
    std::cout << fmt::format("{} {:>2} {:<26} {:>5} checks  {:8.3f} s (budget {} s)\n", pass ? "PASS" : "FAIL", k.id,
                             k.name, check.count(), seconds, k.budget_s);
    for (const std::string& f : check.failures()) std::cout << "      " << f << '\n';
    if (!error.empty()) std::cout << "      exception: " << error << '\n';
    if (!in_time) std::cout << "      over the time budget\n";
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
