#include "tltrade/plan.hpp"

#include <fstream>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

Shape3 shape_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("shape must be [height, width, channels]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

std::vector<GridConfig> expand_grid(Approach a, const json& spec, const json& base) {
  std::vector<json> entries;
  if (spec.is_null() || (spec.is_string() && spec.get<std::string>() == "default")) {
    for (const GridConfig& g : enumerate_grid(a)) entries.push_back(g.config);
  } else if (spec.is_array()) {
    entries.assign(spec.begin(), spec.end());
  } else {
    throw ConfigError(fmt::format("{} grid must be a list or \"default\"", to_string(a)));
  }
  std::vector<GridConfig> grid;
  for (const json& e : entries) {
    json merged = base.is_object() ? base : json::object();
    merged.update(e);
    const json config =
        a == Approach::FT ? to_json(ft_config_from_json(merged)) : to_json(fe_config_from_json(merged));
    grid.push_back({a, grid.size(), config});
  }
  if (grid.empty()) throw ConfigError(fmt::format("{} grid is empty", to_string(a)));
  return grid;
}

LayeredBackbone build_source(const std::string& name, const json& j, const fs::path& base) {
  const std::string arch = j.value("architecture", std::string("toy"));
  const std::size_t n_outputs = j.value("n_outputs", std::size_t{10});
  BackboneSpec spec;
  if (arch == "toy") {
    spec = toy_backbone_spec(n_outputs, j.contains("input") ? shape_from_json(j.at("input")) : Shape3{14, 14, 3});
  } else if (arch == "vgg16") {
    spec = vgg16_spec(n_outputs);
  } else {
    throw ConfigError(fmt::format("source '{}': unknown architecture '{}'", name, arch));
  }
  spec.id = name;
  spec.source = parse_source_tag(j.value("tag", std::string("other")));
  const Initializer init = parse_initializer(j.value("initializer", std::string("he_uniform")));
  LayeredBackbone b(spec, j.value("seed", std::uint64_t{0}), init);
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    const TaskDataset task = make_synthetic_task(synthetic_spec_from_json(p.at("task")));
    if (task.classes.size() != b.n_outputs()) b.resize_logits(task.classes.size());
    SgdParams sgd;
    sgd.learning_rate = p.value("learning_rate", 0.01);
    sgd.momentum = p.value("momentum", 0.9);
    sgd.weight_decay = p.value("weight_decay", 0.0);
    train_epochs(b, task.train, p.value("crop", default_crop_side(task.image_shape())), sgd,
                 p.value("epochs", std::size_t{5}), j.value("seed", std::uint64_t{0}));
  }
  if (j.contains("weights")) b = import_weights(std::move(b), resolve(base, j.at("weights").get<std::string>()));
  return b;
}

std::vector<std::string> string_list(const json& j) { return j.get<std::vector<std::string>>(); }

}  // namespace

SyntheticTaskSpec synthetic_spec_from_json(const json& j) {
  SyntheticTaskSpec s;
  s.name = j.value("name", s.name);
  s.n_classes = j.value("n_classes", s.n_classes);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.val_per_class = j.value("val_per_class", s.val_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  if (j.contains("image")) s.image = shape_from_json(j.at("image"));
  s.noise = j.value("noise", s.noise);
  s.max_shift = j.value("max_shift", s.max_shift);
  s.bank_seed = j.value("bank_seed", s.bank_seed);
  s.first_prototype = j.value("first_prototype", s.first_prototype);
  s.prototypes = j.value("prototypes", s.prototypes);
  s.sample_seed = j.value("sample_seed", s.sample_seed);
  if (j.contains("overlap")) s.overlap = parse_overlap(j.at("overlap").get<std::string>());
  if (j.contains("source_ref") && !j.at("source_ref").is_null()) {
    s.source_ref = j.at("source_ref").get<std::string>();
  }
  return s;
}

LoadedPlan plan_from_json(const json& j, const fs::path& base, const PlanOverrides& ov) {
  LoadedPlan out;
  try {
    SearchPlan& s = out.search;
    s.ledger = resolve(base, j.value("ledger", std::string("ledger.jsonl")));
    for (const auto& [name, spec] : j.at("sources").items()) {
      out.resources.sources.emplace(name, build_source(name, spec, base));
    }
    for (const auto& [name, spec] : j.at("tasks").items()) {
      TaskDataset ds;
      if (spec.contains("manifest")) {
        ds = load_dataset(resolve(base, spec.at("manifest").get<std::string>()));
      } else if (spec.contains("synthetic")) {
        ds = make_synthetic_task(synthetic_spec_from_json(spec.at("synthetic")));
      } else {
        throw ConfigError(fmt::format("task '{}' needs \"manifest\" or \"synthetic\"", name));
      }
      ds.name = name;
      out.resources.tasks.emplace(name, std::move(ds));
    }
    for (const json& p : j.at("pairs")) {
      if (p.is_array() && p.size() == 2) {
        s.pairs.push_back({p[0].get<std::string>(), p[1].get<std::string>()});
      } else {
        s.pairs.push_back({p.at("source").get<std::string>(), p.at("task").get<std::string>()});
      }
    }
    if (j.contains("approaches")) {
      s.approaches.clear();
      for (const auto& a : string_list(j.at("approaches"))) s.approaches.push_back(parse_approach(a));
    }
    s.ft_grid = expand_grid(Approach::FT, j.value("ft_grid", json()), j.value("ft", json::object()));
    s.fe_grid = expand_grid(Approach::FE, j.value("fe_grid", json()), j.value("fe", json::object()));
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
    s.time_limit_hours = j.value("time_limit_hours", 24.0);
    s.parallel_workers = j.value("parallel_workers", std::size_t{1});

    const json power = j.value("power", json::object());
    const std::string kind = power.value("source", std::string("auto"));
    const double watts = power.value("watts", kFallbackWatts);
    if (kind == "constant") {
      out.runner.power = [watts] { return std::make_shared<ConstantPowerSource>(watts); };
    } else if (kind == "rapl" || kind == "auto") {
      out.runner.power = [watts] { return default_power_source(watts); };
    } else {
      throw ConfigError(fmt::format("unknown power source '{}'", kind));
    }
    out.runner.intensity_g_per_kwh = power.value("intensity_g_per_kwh", kDefaultGridIntensity);
    out.runner.sample_period = std::chrono::milliseconds(power.value("sample_period_ms", 0));

    if (j.contains("fewshot")) {
      const json& f = j.at("fewshot");
      FewshotPlan fp;
      fp.tasks = string_list(f.at("tasks"));
      fp.ic_grid = f.value("ic_grid", fp.ic_grid);
      fp.n_subsets = f.value("n_subsets", fp.n_subsets);
      fp.base_seed = f.value("base_seed", fp.base_seed);
      fp.approaches = s.approaches;
      fp.ledger = resolve(base, f.value("ledger", std::string("fewshot.jsonl")));
      out.fewshot = fp;
    }
    if (j.contains("reselect")) {
      const json& r = j.at("reselect");
      ReselectPlan rp;
      rp.tasks = string_list(r.at("tasks"));
      rp.ic_values = r.value("ic_values", rp.ic_values);
      rp.base_seed = r.value("base_seed", rp.base_seed);
      rp.approaches = s.approaches;
      rp.ledger = resolve(base, r.value("ledger", std::string("reselect.jsonl")));
      out.reselect = rp;
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("plan: {}", e.what()));
  }

  SearchPlan& s = out.search;
  if (ov.seed) {
    s.seeds = {*ov.seed};
    if (out.fewshot) out.fewshot->base_seed = *ov.seed;
    if (out.reselect) out.reselect->base_seed = *ov.seed;
  }
  if (ov.jobs) s.parallel_workers = *ov.jobs;
  if (ov.time_limit_hours) s.time_limit_hours = *ov.time_limit_hours;
  if (ov.ledger) s.ledger = *ov.ledger;
  if (s.parallel_workers == 0) throw ConfigError("parallel_workers must be at least 1");
  if (!(s.time_limit_hours > 0.0)) throw ConfigError("time_limit_hours must be positive");
  if (out.fewshot) out.fewshot->parallel_workers = s.parallel_workers;
  if (out.reselect) out.reselect->parallel_workers = s.parallel_workers;
  out.runner.time_limit_hours = s.time_limit_hours;
  for (const TaskPair& p : s.pairs) {
    if (!out.resources.sources.count(p.source)) throw ConfigError(fmt::format("pair names unknown source '{}'", p.source));
    if (!out.resources.tasks.count(p.task)) throw ConfigError(fmt::format("pair names unknown task '{}'", p.task));
  }
  return out;
}

LoadedPlan load_plan(const fs::path& path, const PlanOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open plan {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return plan_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path(), overrides);
}

}  // namespace tlt
