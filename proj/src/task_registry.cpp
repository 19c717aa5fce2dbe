#include "tltrade/task_registry.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "tltrade/errors.hpp"
#include "tltrade/image_io.hpp"
#include "tltrade/rng.hpp"

namespace tlt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Overlap overlap) {
  switch (overlap) {
    case Overlap::subset: return "subset";
    case Overlap::intersect: return "intersect";
    case Overlap::disjoint: return "disjoint";
    case Overlap::unknown: return "unknown";
  }
  return "unknown";
}

Overlap parse_overlap(std::string_view text) {
  if (text == "subset") return Overlap::subset;
  if (text == "intersect") return Overlap::intersect;
  if (text == "disjoint") return Overlap::disjoint;
  if (text == "unknown") return Overlap::unknown;
  throw ConfigError(fmt::format("unknown overlap tag '{}'", text));
}

const std::vector<Sample>& TaskDataset::split(Split which) const {
  switch (which) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

Shape3 TaskDataset::image_shape() const {
  if (train.empty()) return {};
  return train.front().image.shape3();
}

std::vector<std::size_t> TaskDataset::train_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const Sample& s : train) {
    if (s.label < counts.size()) ++counts[s.label];
  }
  return counts;
}

void validate_dataset(const TaskDataset& ds) {
  if (ds.classes.empty()) throw IngestError(fmt::format("{}: no classes", ds.name));
  std::unordered_set<std::string> ids;
  const Shape3 shape = ds.image_shape();
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const Sample& s : *split) {
      if (s.label >= ds.classes.size()) {
        throw IngestError(fmt::format("{}: sample {} has class index {} >= {}", ds.name, s.id,
                                      s.label, ds.classes.size()));
      }
      if (!ids.insert(s.id).second) {
        throw IngestError(fmt::format("{}: sample {} appears more than once", ds.name, s.id));
      }
      if (s.image.rank() != 3 || s.image.shape3() != shape) {
        throw IngestError(fmt::format("{}: sample {} has an inconsistent image shape", ds.name, s.id));
      }
    }
  }
  const auto counts = ds.train_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw IngestError(fmt::format("{}: class '{}' has no train samples", ds.name, ds.classes[c]));
    }
  }
}

namespace {

std::vector<std::string> read_listing(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(fmt::format("missing split listing {}", path.string()));
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    entries.push_back(line.substr(first, last - first + 1));
  }
  return entries;
}

}  // namespace

TaskDataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestError(fmt::format("cannot open manifest {}", manifest_path.string()));
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IngestError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  TaskDataset ds;
  const fs::path base = manifest_path.parent_path();
  fs::path root;
  std::optional<std::pair<std::size_t, std::size_t>> resize;
  json splits;
  try {
    ds.name = manifest.at("name").get<std::string>();
    ds.overlap = parse_overlap(manifest.value("overlap", std::string("unknown")));
    if (manifest.contains("source_ref") && !manifest["source_ref"].is_null()) {
      ds.source_ref = manifest["source_ref"].get<std::string>();
    }
    ds.classes = manifest.at("classes").get<std::vector<std::string>>();
    root = base / manifest.value("root", std::string("."));
    splits = manifest.at("splits");
    if (manifest.contains("resize")) {
      const auto dims = manifest["resize"].get<std::vector<std::size_t>>();
      if (dims.size() != 2) throw IngestError("resize must be [height, width]");
      resize = std::pair{dims[0], dims[1]};
    }
  } catch (const json::exception& e) {
    throw IngestError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  } catch (const ConfigError& e) {
    throw IngestError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  std::set<std::string> seen_classes;
  for (const std::string& name : ds.classes) {
    if (!seen_classes.insert(name).second) {
      throw IngestError(fmt::format("{}: duplicate class '{}'", ds.name, name));
    }
  }

  const std::pair<const char*, std::vector<Sample>*> targets[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& [key, target] : targets) {
    if (!splits.contains(key)) {
      throw IngestError(fmt::format("{}: manifest has no '{}' split", ds.name, key));
    }
    for (const std::string& entry : read_listing(base / splits[key].get<std::string>())) {
      const auto slash = entry.find('/');
      const std::string class_name = entry.substr(0, slash);
      const auto it = std::find(ds.classes.begin(), ds.classes.end(), class_name);
      if (slash == std::string::npos || it == ds.classes.end() ||
          !fs::is_directory(root / class_name)) {
        throw IngestError(
            fmt::format("{}: '{}' in {} listing names a class absent from the tree", ds.name,
                        entry, key));
      }
      const fs::path file = root / entry;
      if (!fs::is_regular_file(file)) {
        throw IngestError(fmt::format("{}: {} listing names missing file {}", ds.name, key,
                                      file.string()));
      }
      Tensor image = read_image(file);
      if (resize) image = resize_bilinear(image, resize->first, resize->second);
      target->push_back(Sample{entry, std::move(image),
                               static_cast<std::size_t>(it - ds.classes.begin())});
    }
  }
  validate_dataset(ds);
  return ds;
}

fs::path save_dataset(const TaskDataset& ds, const fs::path& dir) {
  validate_dataset(ds);
  fs::create_directories(dir);
  const std::pair<const char*, const std::vector<Sample>*> sources[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& [key, samples] : sources) {
    std::ofstream listing(dir / fmt::format("{}.txt", key));
    for (const Sample& s : *samples) {
      const std::string prefix = ds.classes[s.label] + "/";
      if (s.id.rfind(prefix, 0) != 0) {
        throw IngestError(fmt::format("sample id '{}' must start with '{}'", s.id, prefix));
      }
      const fs::path file = dir / s.id;
      fs::create_directories(file.parent_path());
      write_image(file, s.image);
      listing << s.id << '\n';
    }
  }
  json manifest = {{"name", ds.name},
                   {"overlap", std::string(to_string(ds.overlap))},
                   {"source_ref", ds.source_ref ? json(*ds.source_ref) : json(nullptr)},
                   {"classes", ds.classes},
                   {"root", "."},
                   {"splits", {{"train", "train.txt"}, {"val", "val.txt"}, {"test", "test.txt"}}}};
  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream(manifest_path) << manifest.dump(2) << '\n';
  return manifest_path;
}

TaskDataset make_fewshot_subset(const TaskDataset& ds, std::size_t ic, std::uint64_t base_seed,
                                std::size_t k) {
  if (ic == 0) throw ConfigError("instances per class must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(ds.classes.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) by_class[ds.train[i].label].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < ic) {
      throw InsufficientDataError(fmt::format("{}: class '{}' has {} train samples, {} required",
                                              ds.name, ds.classes[c], by_class[c].size(), ic));
    }
  }

  Rng rng(derive_seed(derive_seed(base_seed, ic), k));
  std::vector<std::size_t> chosen;
  chosen.reserve(ic * by_class.size());
  for (auto& indices : by_class) {
    rng.shuffle(std::span(indices));
    chosen.insert(chosen.end(), indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(ic));
  }
  std::sort(chosen.begin(), chosen.end());

  TaskDataset out;
  out.name = ds.name;
  out.classes = ds.classes;
  out.overlap = ds.overlap;
  out.source_ref = ds.source_ref;
  out.val = ds.val;
  out.test = ds.test;
  out.train.reserve(chosen.size());
  for (const std::size_t i : chosen) out.train.push_back(ds.train[i]);
  return out;
}

std::vector<TaskDataset> make_fewshot_subsets(const TaskDataset& ds, const FewShotSpec& spec) {
  if (spec.ic == 0 || spec.n_subsets == 0) {
    throw ConfigError("few-shot spec needs ic >= 1 and n_subsets >= 1");
  }
  std::vector<TaskDataset> subsets;
  subsets.reserve(spec.n_subsets);
  for (std::size_t k = 0; k < spec.n_subsets; ++k) {
    subsets.push_back(make_fewshot_subset(ds, spec.ic, spec.base_seed, k));
  }
  return subsets;
}

Tensor crop_region(const Tensor& image, std::size_t top, std::size_t left, std::size_t side) {
  const Shape3 s = image.shape3();
  Tensor out(Shape3{side, side, s.channels});
  for (std::size_t y = 0; y < side; ++y) {
    const float* src = &image.data[((top + y) * s.width + left) * s.channels];
    std::copy(src, src + side * s.channels, &out.data[y * side * s.channels]);
  }
  return out;
}

Tensor mirror_horizontal(const Tensor& image) {
  const Shape3 s = image.shape3();
  Tensor out(s);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      for (std::size_t c = 0; c < s.channels; ++c) {
        out.at(y, s.width - 1 - x, c) = image.at(y, x, c);
      }
    }
  }
  return out;
}

CropSet ten_crop(const Tensor& image, std::size_t crop, std::string origin) {
  if (image.rank() != 3) throw CropError("ten_crop expects a rank-3 image");
  const Shape3 s = image.shape3();
  if (crop == 0 || crop > s.height || crop > s.width) {
    throw CropError(fmt::format("crop side {} does not fit a {}x{} image", crop, s.height, s.width));
  }
  const std::size_t bottom = s.height - crop;
  const std::size_t right = s.width - crop;
  const std::array<std::pair<std::size_t, std::size_t>, 5> anchors = {
      {{0, 0}, {0, right}, {bottom, 0}, {bottom, right}, {bottom / 2, right / 2}}};
  CropSet set;
  set.origin = std::move(origin);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    set.crops[i] = crop_region(image, anchors[i].first, anchors[i].second, crop);
    set.crops[i + 5] = mirror_horizontal(set.crops[i]);
  }
  return set;
}

std::size_t default_crop_side(Shape3 image_shape) {
  const std::size_t shorter = std::min(image_shape.height, image_shape.width);
  return std::max<std::size_t>(1, shorter * 7 / 8);
}

}  // namespace tlt
