#include <doctest.h>

#include "fixtures.hpp"
#include "svm_cases.hpp"
#include "tltrade/errors.hpp"
#include "tltrade/linear_svm.hpp"
#include "tltrade/rng.hpp"

using namespace tlt;

namespace {

Matrix to_matrix(const SvmCase& c) {
  Matrix m(c.n, c.d);
  m.data = c.x;
  return m;
}

}  // namespace

TEST_SUITE("linear_svm") {

TEST_CASE("hinge objective matches the convex oracle") {
  for (const SvmCase& c : svm_cases()) {
    CAPTURE(c.name);
    SvmOptions opt;
    opt.c = c.c;
    opt.tol = 1e-6;
    opt.max_iter = 100000;
    const BinarySvm fit = train_binary_svm(to_matrix(c), c.y, opt);
    CHECK(fit.converged);
    CHECK(std::abs(fit.primal_objective - c.objective) <= 1e-3 * c.objective);
  }
}

TEST_CASE("default tolerance stays within the oracle band") {
  for (const SvmCase& c : svm_cases()) {
    CAPTURE(c.name);
    SvmOptions opt;
    opt.c = c.c;
    const BinarySvm fit = train_binary_svm(to_matrix(c), c.y, opt);
    CHECK(std::abs(fit.primal_objective - c.objective) <= 1e-3 * c.objective);
  }
}

TEST_CASE("dual objective never increases") {
  for (const SvmCase& c : svm_cases()) {
    SvmOptions opt;
    opt.c = c.c;
    opt.tol = 1e-8;
    const BinarySvm fit = train_binary_svm(to_matrix(c), c.y, opt);
    for (std::size_t i = 1; i < fit.dual_trace.size(); ++i) {
      CHECK(fit.dual_trace[i] <= fit.dual_trace[i - 1] + 1e-12);
    }
    // Weak duality: primal >= -dual.
    CHECK(fit.primal_objective >= -fit.dual_trace.back() - 1e-9);
  }
}

TEST_CASE("separable set is classified perfectly") {
  const SvmCase& c = svm_cases()[5];
  REQUIRE(std::string(c.name) == "separable_12");
  std::vector<std::size_t> labels;
  for (const int y : c.y) labels.push_back(y > 0 ? 0 : 1);
  const LinearSvmModel m = train_linear_svm(to_matrix(c), labels, {"pos", "neg"});
  const SvmPrediction p = predict(m, to_matrix(c));
  CHECK(p.labels == labels);
}

TEST_CASE("one-vs-rest on three blobs") {
  Rng rng(3);
  Matrix x(60, 2);
  std::vector<std::size_t> y(60);
  const double centres[3][2] = {{0, 4}, {4, -2}, {-4, -2}};
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = i % 3;
    x(i, 0) = centres[y[i]][0] + 0.5 * rng.normal();
    x(i, 1) = centres[y[i]][1] + 0.5 * rng.normal();
  }
  const LinearSvmModel m = train_linear_svm(x, y, {"a", "b", "c"});
  CHECK(m.converged);
  CHECK(predict(m, x).labels == y);
}

TEST_CASE("save and load give identical predictions") {
  fixtures::TempDir dir("svm");
  const SvmCase& c = svm_cases()[3];
  std::vector<std::size_t> labels;
  for (const int y : c.y) labels.push_back(y > 0 ? 1 : 0);
  const LinearSvmModel m = train_linear_svm(to_matrix(c), labels, {"n", "p"}, {0.5, 1e-3, 500});
  save_model(m, dir / "m.bin");
  const LinearSvmModel back = load_model(dir / "m.bin");
  CHECK(back.classes == m.classes);
  CHECK(back.c == 0.5);
  CHECK(back.max_iter == 500);
  CHECK(back.weights == m.weights);
  CHECK(back.bias == m.bias);
  const SvmPrediction a = predict(m, to_matrix(c));
  const SvmPrediction b = predict(back, to_matrix(c));
  CHECK(a.labels == b.labels);
  CHECK(a.scores == b.scores);
}

TEST_CASE("ties go to the lowest class index") {
  LinearSvmModel m;
  m.classes = {"a", "b", "c"};
  m.weights = Matrix(3, 1, 0.0);
  m.bias = {0.5, 0.5, 0.5};
  Matrix x(1, 1, 1.0);
  CHECK(predict(m, x).labels[0] == 0);
}

TEST_CASE("bad inputs") {
  Matrix x(3, 2, 1.0);
  const std::vector<std::size_t> one_class{0, 0, 0};
  CHECK_THROWS_AS(train_linear_svm(x, one_class, {"a", "b"}), TrainError);
  const std::vector<std::size_t> short_labels{0, 1};
  CHECK_THROWS_AS(train_linear_svm(x, short_labels, {"a", "b"}), ShapeError);
  LinearSvmModel m;
  m.classes = {"a"};
  m.weights = Matrix(1, 3);
  m.bias = {0};
  CHECK_THROWS_AS(predict(m, x), ShapeError);
}

TEST_CASE("iteration cap reports non-convergence") {
  const SvmCase& c = svm_cases()[3];
  std::vector<std::size_t> labels;
  for (const int y : c.y) labels.push_back(y > 0 ? 1 : 0);
  const LinearSvmModel m = train_linear_svm(to_matrix(c), labels, {"n", "p"}, {1.0, 1e-12, 1});
  CHECK_FALSE(m.converged);
  CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("identical rows with different labels do not crash") {
  Matrix x(4, 2, 1.0);
  const std::vector<std::size_t> y{0, 1, 0, 1};
  const LinearSvmModel m = train_linear_svm(x, y, {"a", "b"});
  const auto p = predict(m, x);
  CHECK(p.labels[0] == p.labels[1]);
}

}
