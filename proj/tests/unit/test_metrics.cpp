#include <doctest.h>

#include "fixtures.hpp"
#include "tltrade/errors.hpp"
#include "tltrade/metrics.hpp"
#include "tltrade/rng.hpp"

using namespace tlt;

TEST_SUITE("metrics") {

TEST_CASE("balanced accuracy hand examples") {
  const std::vector<std::size_t> t{0, 0, 0, 0, 1, 1};
  const std::vector<std::size_t> p{0, 0, 0, 1, 1, 0};
  CHECK(balanced_accuracy(t, p, 2) == doctest::Approx(100.0 * (0.75 + 0.5) / 2));
  CHECK(balanced_accuracy(t, t, 2) == 100.0);
  // Class 2 never occurs in truth: left out of the mean.
  const std::vector<std::size_t> p2{2, 0, 0, 0, 1, 1};
  CHECK(balanced_accuracy(t, p2, 3) == doctest::Approx(100.0 * (0.75 + 1.0) / 2));
}

TEST_CASE("balanced accuracy errors") {
  const std::vector<std::size_t> empty;
  CHECK_THROWS_AS(balanced_accuracy(empty, empty, 2), MetricError);
  const std::vector<std::size_t> a{0, 1}, b{0};
  CHECK_THROWS_AS(balanced_accuracy(a, b, 2), MetricError);
  const std::vector<std::size_t> c{0, 5};
  CHECK_THROWS_AS(balanced_accuracy(a, c, 2), MetricError);
}

TEST_CASE("balanced accuracy agrees with the confusion-matrix oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng.below(8);
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(k);
      p[i] = rng.below(k);
    }
    CHECK(std::abs(balanced_accuracy(t, p, k) - fixtures::balanced_accuracy_oracle(t, p, k)) <= 1e-12);
  }
}

TEST_CASE("relative difference and drop") {
  CHECK(relative_difference(110.0 * 0.5, 50.0) == doctest::Approx(10.0));
  CHECK(relative_difference(40.0, 50.0) == doctest::Approx(-20.0));
  CHECK_THROWS_AS(relative_difference(1.0, 0.0), MetricError);
  CHECK(compute_drop(80.0, 75.5) == doctest::Approx(4.5));
  CHECK(compute_drop(70.0, 70.0) == 0.0);
}

TEST_CASE("fewshot curve pairs subsets and orders ic") {
  std::vector<FewshotObservation> obs;
  for (const std::size_t ic : {10, 2}) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double fe = 50.0 + static_cast<double>(k);
      const double ft = fe * (ic == 2 ? 0.9 : 1.1 + 0.01 * static_cast<double>(k));
      obs.push_back({Approach::FT, ic, k, ft});
      obs.push_back({Approach::FE, ic, k, fe});
    }
  }
  const auto curve = fewshot_curve(obs);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].ic == 2);
  CHECK(curve[1].ic == 10);
  CHECK(curve[0].rel_diff_mean == doctest::Approx(-10.0));
  CHECK(curve[1].per_subset.size() == 3);
  CHECK(curve[1].rel_diff_min == doctest::Approx(10.0));
  CHECK(curve[1].rel_diff_max == doctest::Approx(12.0));
  for (const auto& p : curve) {
    CHECK(p.rel_diff_min <= p.rel_diff_mean);
    CHECK(p.rel_diff_mean <= p.rel_diff_max);
  }
}

TEST_CASE("fewshot curve rejects unpaired and duplicated subsets") {
  std::vector<FewshotObservation> unpaired{{Approach::FE, 1, 0, 50.0}};
  CHECK_THROWS_AS(fewshot_curve(unpaired), MetricError);
  std::vector<FewshotObservation> dup{{Approach::FE, 1, 0, 50.0}, {Approach::FE, 1, 0, 51.0},
                                      {Approach::FT, 1, 0, 50.0}};
  CHECK_THROWS_AS(fewshot_curve(dup), MetricError);
}

TEST_CASE("summaries by ic") {
  const std::vector<std::pair<std::size_t, double>> v{{5, 1.0}, {1, 2.0}, {5, 3.0}, {1, 4.0}};
  const auto s = summarize_by_ic(v);
  REQUIRE(s.size() == 2);
  CHECK(s[0].ic == 1);
  CHECK(s[0].mean == 3.0);
  CHECK(s[1].min == 1.0);
  CHECK(s[1].max == 3.0);
}

TEST_CASE("approach names") {
  CHECK(parse_approach("FT") == Approach::FT);
  CHECK(to_string(Approach::FE) == "FE");
  CHECK_THROWS(parse_approach("ft2"));
}

}
