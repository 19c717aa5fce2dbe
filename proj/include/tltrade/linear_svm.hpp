#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tltrade/clock.hpp"
#include "tltrade/tensor.hpp"

namespace tlt {

struct SvmOptions {
  double c = 1.0;
  double tol = 1e-3;
  std::size_t max_iter = 1000;  // outer iterations; one outer iteration = n pair updates
};

// One binary problem: minimise 0.5*|w|^2 + C * sum(max(0, 1 - y_i (w.x_i + b)))
// with an unregularised bias, solved in the dual by SMO with maximal-violating
// pair selection (second-order working set). `tol` bounds the KKT violation.
struct BinarySvm {
  std::vector<double> w;
  double b = 0.0;
  bool converged = false;
  bool interrupted = false;  // stopped by a deadline
  std::size_t iterations = 0;
  // Dual objective (0.5*|w|^2 - sum(alpha)) after each outer iteration and at exit.
  std::vector<double> dual_trace;
  double primal_objective = 0.0;
};

double hinge_objective(const Matrix& x, std::span<const int> y, std::span<const double> w, double b,
                       double c);

BinarySvm train_binary_svm(const Matrix& x, std::span<const int> y, const SvmOptions& options,
                           const Deadline* deadline = nullptr);

struct LinearSvmModel {
  std::vector<std::string> classes;
  Matrix weights;  // classes x features
  std::vector<double> bias;
  double c = 1.0;
  double tol = 1e-3;
  std::size_t max_iter = 1000;
  bool converged = true;
  bool interrupted = false;
  std::size_t iterations = 0;  // largest outer-iteration count over the binary problems
  std::vector<std::string> warnings;
};

// One-vs-rest. Throws ShapeError on a row/label mismatch and TrainError when
// fewer than two distinct classes are present.
LinearSvmModel train_linear_svm(const Matrix& x, std::span<const std::size_t> y,
                                std::vector<std::string> classes, const SvmOptions& options = {},
                                const Deadline* deadline = nullptr);

struct SvmPrediction {
  std::vector<std::size_t> labels;
  Matrix scores;  // samples x classes
};

// argmax of w_c.x + b_c; ties go to the lowest class index.
SvmPrediction predict(const LinearSvmModel& model, const Matrix& x);

// File layout: u32 header length, JSON header (classes, C, tol, max_iter,
// converged, iterations), then a tensor container with entries
// [classes x features] weights and [classes] bias.
void save_model(const LinearSvmModel& model, const std::filesystem::path& path);
LinearSvmModel load_model(const std::filesystem::path& path);

}  // namespace tlt
