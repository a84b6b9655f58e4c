#include "ivf/error.hpp"
#include "ivf/evaluate.hpp"
#include "ivf/random.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>

using namespace ivf;

namespace {

// Pairwise concordance by enumeration.
double auc_by_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (y[k] != 0) continue;
      ++pairs;
      concordant += s[i] > s[k] ? 1.0 : s[i] == s[k] ? 0.5 : 0.0;
    }
  }
  return concordant / static_cast<double>(pairs);
}

}  // namespace

TEST_SUITE("rmse") {
  TEST_CASE("examples") {
    const std::vector<double> a{1, 2, 3};
    CHECK(rmse(a, a) == 0.0);
    CHECK(rmse(std::vector<double>{2, 3, 4}, a) == doctest::Approx(1.0));
    CHECK(rmse(std::vector<double>{0, 0, 0}, a) == doctest::Approx(std::sqrt(14.0 / 3.0)));
    CHECK(rmse(std::vector<double>{0, 0, 0}, a) == doctest::Approx(2.1602).epsilon(1e-4));
  }

  TEST_CASE("invalid input") {
    CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), Error);
    CHECK_THROWS_AS(rmse(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
  }
}

TEST_SUITE("auc") {
  TEST_CASE("examples") {
    CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
    CHECK(auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(auc(std::vector<double>{4, 3, 2, 1}, std::vector<int>{0, 0, 1, 1}) == 0.0);
    CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  }

  TEST_CASE("single class or bad labels are rejected") {
    CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), Error);
    CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), Error);
    CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{0}), Error);
  }

  TEST_CASE("matches exhaustive enumeration") {
    Rng rng(2718);
    for (int rep = 0; rep < 50; ++rep) {
      const auto n = 2 + rng.below(19);
      std::vector<double> s(n);
      std::vector<int> y(n);
      // Coarse scores force ties.
      for (auto& v : s) v = static_cast<double>(rng.below(6)) / 5.0;
      for (auto& v : y) v = static_cast<int>(rng.below(2));
      y[0] = 0;
      y[1] = 1;
      CHECK(auc(s, y) == auc_by_pairs(s, y));
    }
  }

  TEST_CASE("reflection and monotone invariance") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> s(30), neg(30), mono(30);
      std::vector<int> y(30);
      for (std::size_t i = 0; i < 30; ++i) {
        s[i] = rng.normal();
        neg[i] = -s[i];
        mono[i] = std::exp(3 * s[i]) + 1;
        y[i] = static_cast<int>(i % 2);
      }
      CHECK(auc(s, y) + auc(neg, y) == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(auc(mono, y) == auc(s, y));
    }
  }

  TEST_CASE("bootstrap interval") {
    Rng rng(9);
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      s[i] = rng.normal() + 0.8 * y[i];
    }
    const auto a = auc_with_interval(s, y, 11, 500);
    const auto b = auc_with_interval(s, y, 11, 500);
    CHECK(a.auc == auc(s, y));
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.lo <= a.auc);
    CHECK(a.auc <= a.hi);
    CHECK(a.hi - a.lo > 0.05);
    CHECK(a.hi - a.lo < 0.3);
  }
}

TEST_SUITE("prevalence") {
  TEST_CASE("all events") {
    const auto i = prevalence_interval({{1, 1}, {1, 1}, {1, 1}});
    CHECK(i.median == 1.0);
    CHECK(i.lo == 1.0);
    CHECK(i.hi == 1.0);
  }

  TEST_CASE("type-7 percentiles over draws") {
    // Per-draw proportions 0.2, 0.25, 0.3.
    std::vector<std::vector<int>> ind{{1, 0, 0, 0, 0}, {1, 0, 0, 0}, {1, 1, 1, 0, 0, 0, 0, 0, 0, 0}};
    ind[1] = {1, 0, 0, 0};
    const auto i = prevalence_interval(ind);
    CHECK(i.median == doctest::Approx(0.25));
    CHECK(i.lo == doctest::Approx(0.2025));
    CHECK(i.hi == doctest::Approx(0.2975));
  }
}

TEST_CASE("metric report layout") {
  MetricReport r;
  r.rows.push_back({"lbe", "auc", 0.6, 0.55, 0.65, 120, "bootstrap"});
  test::TempDir dir("metrics");
  r.write(dir / "metrics.csv");
  const auto text = test::read_file(dir / "metrics.csv");
  CHECK(text.rfind("outcome,metric,value,lo,hi,n,method\n", 0) == 0);
  CHECK(text.find("lbe,auc,0.6") != std::string::npos);
}
