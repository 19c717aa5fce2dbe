#include "tltrade/linear_svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "tltrade/container.hpp"
#include "tltrade/errors.hpp"

namespace tlt {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double hinge_objective(const Matrix& x, std::span<const int> y, std::span<const double> w, double b,
                       double c) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    loss += std::max(0.0, 1.0 - y[i] * (dot(x.row(i), w) + b));
  }
  return 0.5 * dot(w, w) + c * loss;
}

BinarySvm train_binary_svm(const Matrix& x, std::span<const int> y, const SvmOptions& options,
                           const Deadline* deadline) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  if (y.size() != n) throw ShapeError(fmt::format("{} rows but {} labels", n, y.size()));
  if (!(options.c > 0.0) || !(options.tol > 0.0) || options.max_iter == 0) {
    throw ConfigError("SVM needs C > 0, tol > 0 and max_iter >= 1");
  }

  BinarySvm out;
  out.w.assign(d, 0.0);
  const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
  if (!has_pos || !has_neg) {
    // The equality constraint pins every multiplier to zero.
    out.b = has_pos ? 1.0 : -1.0;
    out.converged = true;
    out.dual_trace.push_back(0.0);
    out.primal_objective = hinge_objective(x, y, out.w, out.b, options.c);
    return out;
  }

  const double c = options.c;
  constexpr double tau = 1e-12;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = dot(x.row(i), x.row(i));
  std::vector<double> step(d);

  const auto in_up = [&](std::size_t t) {
    return (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
  };
  const auto in_low = [&](std::size_t t) {
    return (y[t] == 1 && alpha[t] > 0.0) || (y[t] == -1 && alpha[t] < c);
  };
  const auto dual_value = [&] {
    double s = 0.0;
    for (const double a : alpha) s += a;
    return 0.5 * dot(out.w, out.w) - s;
  };

  std::size_t steps = 0;
  while (true) {
    double g_max = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * grad[t] > g_max) {
        g_max = -y[t] * grad[t];
        i = t;
      }
    }
    double g_min = std::numeric_limits<double>::infinity();
    double best_gain = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n && i < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[t] * grad[t];
      g_min = std::min(g_min, v);
      if (v < g_max) {
        const double gap = g_max - v;
        double curvature = sq[i] + sq[t] - 2.0 * dot(x.row(i), x.row(t));
        if (curvature <= 0.0) curvature = tau;
        const double gain = -(gap * gap) / curvature;
        if (gain < best_gain) {
          best_gain = gain;
          j = t;
        }
      }
    }
    if (i == n || j == n || g_max - g_min < options.tol) {
      out.converged = true;
      break;
    }

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    double quad = sq[i] + sq[j] - 2.0 * dot(x.row(i), x.row(j));
    if (quad <= 0.0) quad = tau;
    if (y[i] != y[j]) {
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }

    const double di = (alpha[i] - old_i) * y[i];
    const double dj = (alpha[j] - old_j) * y[j];
    const auto xi = x.row(i);
    const auto xj = x.row(j);
    for (std::size_t k = 0; k < d; ++k) step[k] = di * xi[k] + dj * xj[k];
    for (std::size_t k = 0; k < d; ++k) out.w[k] += step[k];
    for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * dot(x.row(t), step);

    if (++steps % n == 0) {
      ++out.iterations;
      // Refresh the gradient from w to stop round-off from accumulating.
      for (std::size_t t = 0; t < n; ++t) grad[t] = y[t] * dot(x.row(t), out.w) - 1.0;
      out.dual_trace.push_back(dual_value());
      if (out.iterations >= options.max_iter) break;
      if (deadline != nullptr && deadline->expired()) {
        out.interrupted = true;
        break;
      }
    }
  }
  out.dual_trace.push_back(dual_value());

  double upper = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] >= c) {
      if (y[t] == -1) upper = std::min(upper, yg);
      else lower = std::max(lower, yg);
    } else if (alpha[t] <= 0.0) {
      if (y[t] == 1) upper = std::min(upper, yg);
      else lower = std::max(lower, yg);
    } else {
      free_sum += yg;
      ++free_count;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (upper + lower) / 2;
  out.b = -rho;
  out.primal_objective = hinge_objective(x, y, out.w, out.b, c);
  return out;
}

LinearSvmModel train_linear_svm(const Matrix& x, std::span<const std::size_t> y,
                                std::vector<std::string> classes, const SvmOptions& options,
                                const Deadline* deadline) {
  if (x.rows != y.size()) {
    throw ShapeError(fmt::format("{} feature rows but {} labels", x.rows, y.size()));
  }
  const std::size_t k = classes.size();
  std::set<std::size_t> present;
  for (const std::size_t label : y) {
    if (label >= k) throw ShapeError(fmt::format("label {} outside {} classes", label, k));
    present.insert(label);
  }
  if (present.size() < 2) throw TrainError("training labels contain fewer than two classes");

  LinearSvmModel model;
  model.classes = std::move(classes);
  model.c = options.c;
  model.tol = options.tol;
  model.max_iter = options.max_iter;
  model.weights = Matrix(k, x.cols);
  model.bias.assign(k, 0.0);
  std::vector<int> binary(y.size());
  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t i = 0; i < y.size(); ++i) binary[i] = y[i] == cls ? 1 : -1;
    const BinarySvm fit = train_binary_svm(x, binary, options, deadline);
    // Parameters are held at single precision so a saved model predicts
    // exactly like the in-memory one.
    auto row = model.weights.row(cls);
    for (std::size_t f = 0; f < fit.w.size(); ++f) row[f] = static_cast<float>(fit.w[f]);
    model.bias[cls] = static_cast<float>(fit.b);
    model.iterations = std::max(model.iterations, fit.iterations);
    model.interrupted = model.interrupted || fit.interrupted;
    if (!fit.converged) {
      model.converged = false;
      model.warnings.push_back(fmt::format("class '{}' stopped after {} iterations without converging",
                                           model.classes[cls], fit.iterations));
    }
  }
  return model;
}

SvmPrediction predict(const LinearSvmModel& model, const Matrix& x) {
  if (x.cols != model.weights.cols) {
    throw ShapeError(fmt::format("model expects {} features, got {}", model.weights.cols, x.cols));
  }
  const std::size_t k = model.classes.size();
  SvmPrediction p;
  p.scores = Matrix(x.rows, k);
  p.labels.resize(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t cls = 0; cls < k; ++cls) {
      p.scores(r, cls) = dot(model.weights.row(cls), x.row(r)) + model.bias[cls];
      if (p.scores(r, cls) > p.scores(r, best)) best = cls;
    }
    p.labels[r] = best;
  }
  return p;
}

void save_model(const LinearSvmModel& model, const std::filesystem::path& path) {
  const nlohmann::json header = {{"classes", model.classes},   {"C", model.c},
                                 {"tol", model.tol},           {"max_iter", model.max_iter},
                                 {"converged", model.converged}, {"iterations", model.iterations}};
  const std::string text = header.dump();
  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  const std::vector<ContainerEntry> entries = {
      {EntryKind::tensor, {u(model.weights.rows), u(model.weights.cols)},
       std::vector<float>(model.weights.data.begin(), model.weights.data.end()), {}},
      {EntryKind::tensor, {u(model.bias.size())},
       std::vector<float>(model.bias.begin(), model.bias.end()), {}}};
  const auto body = encode_container(entries);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImportError(fmt::format("cannot write {}", path.string()));
  const std::uint32_t len = u(text.size());
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xFF));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
}

LinearSvmModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4) throw ImportError(fmt::format("{} is not a model file", path.string()));
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  if (bytes.size() < 4 + static_cast<std::size_t>(len)) throw ImportError("model header truncated");
  LinearSvmModel model;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + len);
    model.classes = header.at("classes").get<std::vector<std::string>>();
    model.c = header.at("C").get<double>();
    model.tol = header.at("tol").get<double>();
    model.max_iter = header.at("max_iter").get<std::size_t>();
    model.converged = header.at("converged").get<bool>();
    model.iterations = header.at("iterations").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ImportError(fmt::format("{}: bad model header: {}", path.string(), e.what()));
  }
  const Container c = decode_container(std::span(bytes).subspan(4 + len));
  if (c.entries.size() != 2 || c.entries[0].dims.size() != 2 ||
      c.entries[0].dims[0] != model.classes.size() || c.entries[1].weights.size() != model.classes.size()) {
    throw ImportError(fmt::format("{}: model tensors disagree with header", path.string()));
  }
  model.weights = Matrix(c.entries[0].dims[0], c.entries[0].dims[1]);
  model.weights.data.assign(c.entries[0].weights.begin(), c.entries[0].weights.end());
  model.bias.assign(c.entries[1].weights.begin(), c.entries[1].weights.end());
  return model;
}

}  // namespace tlt
