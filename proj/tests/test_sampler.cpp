#include "ivf/error.hpp"
#include "ivf/random.hpp"
#include "ivf/sampler.hpp"
#include "ivf/stats.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>

using namespace ivf;

namespace {

class StandardNormal final : public LogDensity {
 public:
  explicit StandardNormal(std::size_t dim) : dim_(dim) {}
  std::size_t dimension() const override { return dim_; }
  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    grad = -q;
    return -0.5 * q.squaredNorm();
  }

 private:
  std::size_t dim_;
};

// Bivariate normal with unit variances and correlation rho.
class CorrelatedNormal final : public LogDensity {
 public:
  explicit CorrelatedNormal(double rho) : rho_(rho) {}
  std::size_t dimension() const override { return 2; }
  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    const double d = 1.0 - rho_ * rho_;
    grad.resize(2);
    grad(0) = -(q(0) - rho_ * q(1)) / d;
    grad(1) = -(q(1) - rho_ * q(0)) / d;
    return -0.5 * (q(0) * q(0) - 2 * rho_ * q(0) * q(1) + q(1) * q(1)) / d;
  }

 private:
  double rho_;
};

// Improper target that diverges everywhere off a thin band.
class Cliff final : public LogDensity {
 public:
  std::size_t dimension() const override { return 1; }
  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override {
    grad.resize(1);
    grad(0) = -q(0);
    if (std::abs(q(0)) > 3.0) return std::numeric_limits<double>::quiet_NaN();
    return -0.5 * q(0) * q(0);
  }
};

SamplerConfig config(std::size_t chains, std::size_t iterations, std::uint64_t seed) {
  SamplerConfig c;
  c.n_chains = chains;
  c.n_iterations = iterations;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("standard normal moments and convergence") {
  const StandardNormal target(10);
  const auto draws = run_chains(target, config(3, 2000, 42));
  REQUIRE(draws.chains.size() == 3);
  CHECK(draws.draws_per_chain() == 1000);
  for (std::size_t p = 0; p < 10; ++p) {
    const auto v = draws.pooled(p);
    CHECK(std::abs(stats::mean(v)) < 0.1);
    const double sd = std::sqrt(stats::variance(v));
    CHECK(sd > 0.9);
    CHECK(sd < 1.1);
    const auto r = rhat(draws.traces(p));
    REQUIRE(r.has_value());
    CHECK(*r < 1.01);
  }
  CHECK(draws.divergences() == 0);
  CHECK(draws.names.front() == "q[1]");
  CHECK(draws.names.back() == "q[10]");
}

TEST_CASE("correlated target recovers its correlation") {
  const CorrelatedNormal target(0.9);
  const auto draws = run_chains(target, config(2, 2000, 7));
  const auto x = draws.pooled(0), y = draws.pooled(1);
  const double mx = stats::mean(x), my = stats::mean(y);
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  sxy /= static_cast<double>(x.size() - 1);
  const double corr = sxy / std::sqrt(stats::variance(x) * stats::variance(y));
  CHECK(corr == doctest::Approx(0.9).epsilon(0.03));
  CHECK(std::sqrt(stats::variance(x)) == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("mean acceptance statistic tracks the target") {
  const StandardNormal target(5);
  auto cfg = config(2, 2000, 3);
  cfg.target_accept = 0.9;
  const auto draws = run_chains(target, cfg);
  double mean = 0.0;
  for (const auto& s : draws.chains[0].stats) mean += s.accept_stat;
  mean /= static_cast<double>(draws.chains[0].stats.size());
  CHECK(mean > 0.8);
  CHECK(mean < 0.98);
  CHECK(draws.chains[0].step_size > 0.0);
  CHECK(draws.chains[0].inv_metric.size() == 5);
}

TEST_CASE("draws are reproducible and independent of the thread count") {
  const StandardNormal target(4);
  auto a = config(3, 300, 99);
  a.threads = 1;
  auto b = a;
  b.threads = 3;
  const auto da = run_chains(target, a);
  const auto db = run_chains(target, b);
  for (std::size_t c = 0; c < 3; ++c) CHECK(da.chains[c].values == db.chains[c].values);
  auto other = a;
  other.seed = 100;
  CHECK(run_chains(target, other).chains[0].values != da.chains[0].values);
}

TEST_CASE("divergent transitions are counted, not fatal") {
  const Cliff target;
  auto cfg = config(2, 600, 5);
  cfg.init_radius = 1.0;
  const auto draws = run_chains(target, cfg);
  CHECK(draws.draws_per_chain() == 300);
  for (double v : draws.pooled(0)) CHECK(std::abs(v) <= 3.0);
}

TEST_CASE("invalid sampler settings are rejected") {
  SamplerConfig c;
  c.n_chains = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.target_accept = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.n_warmup = c.n_iterations;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_SUITE("potential scale reduction") {
  TEST_CASE("worked example") {
    const auto r = rhat({{1, 2, 3, 4}, {2, 3, 4, 5}});
    REQUIRE(r.has_value());
    CHECK(std::abs(*r - 1.0247) < 1e-4);
  }

  TEST_CASE("identical chains give one up to the (n-1)/n factor") {
    const auto r = rhat({{1, 2, 3, 4}, {1, 2, 3, 4}});
    CHECK(*r == doctest::Approx(std::sqrt(0.75)));
  }

  TEST_CASE("constant chains are undefined") { CHECK_FALSE(rhat({{2, 2, 2}, {2, 2, 2}}).has_value()); }

  TEST_CASE("separated chains flag non-convergence") {
    std::vector<double> a(100), b(100);
    for (int i = 0; i < 100; ++i) {
      a[static_cast<std::size_t>(i)] = std::sin(i);
      b[static_cast<std::size_t>(i)] = 10 + std::sin(i);
    }
    CHECK(*rhat({a, b}) > 2.0);
  }

  TEST_CASE("chain-mean standard error") {
    // Chain means 2.5 and 3.5: sd 0.7071, over sqrt(2).
    CHECK(mcse_chain_means({{1, 2, 3, 4}, {2, 3, 4, 5}}) == doctest::Approx(0.5));
  }
}

TEST_CASE("trace export round trip") {
  const StandardNormal target(3);
  const auto draws = run_chains(target, config(2, 40, 1));
  test::TempDir dir("sampler");
  export_traces(draws, dir.path() / "traces.csv");
  const auto text = test::read_file(dir.path() / "traces.csv");
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 1 + 2 * 20 * 3);
  CHECK(text.rfind("chain,iteration,parameter,value\n", 0) == 0);
  const auto back = read_traces(dir.path() / "traces.csv");
  CHECK(back.names == draws.names);
  for (std::size_t c = 0; c < 2; ++c) CHECK(back.chains[c].values == draws.chains[c].values);
}

TEST_CASE("draws file round trip and version check") {
  const StandardNormal target(2);
  const auto cfg = config(2, 40, 8);
  const auto draws = run_chains(target, cfg);
  test::TempDir dir("sampler");
  const auto path = dir.path() / "draws.csv";
  write_draws(draws, cfg, path);
  const auto back = read_draws(path);
  CHECK(back.names == draws.names);
  for (std::size_t c = 0; c < 2; ++c) CHECK(back.chains[c].values == draws.chains[c].values);

  auto sidecar = test::read_file(dir.path() / "draws.csv.json");
  const auto pos = sidecar.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  sidecar.replace(pos, 19, "\"format_version\": 9");
  test::write_file(dir.path() / "draws.csv.json", sidecar);
  CHECK_THROWS_AS(read_draws(path), Error);
  std::filesystem::remove(dir.path() / "draws.csv.json");
  CHECK_THROWS_AS(read_draws(path), Error);
}

TEST_SUITE("effective sample size") {
  TEST_CASE("independent draws") {
    Rng rng(12);
    std::vector<std::vector<double>> chains(4, std::vector<double>(2000));
    for (auto& c : chains) {
      for (double& v : c) v = rng.normal();
    }
    CHECK(effective_sample_size(chains) == doctest::Approx(8000).epsilon(0.15));
    // Median of N(0,1) has asymptotic sd sqrt(pi/2) / sqrt(n).
    CHECK(mcse_quantile(chains, 0.5) == doctest::Approx(std::sqrt(std::acos(-1.0) / 2 / 8000)).epsilon(0.25));
  }

  TEST_CASE("autoregressive draws") {
    Rng rng(13);
    const double phi = 0.9;
    std::vector<std::vector<double>> chains(4, std::vector<double>(5000));
    for (auto& c : chains) {
      double x = rng.normal() / std::sqrt(1 - phi * phi);
      for (double& v : c) {
        x = phi * x + rng.normal();
        v = x;
      }
    }
    const double expected = 20000 * (1 - phi) / (1 + phi);
    CHECK(effective_sample_size(chains) == doctest::Approx(expected).epsilon(0.25));
  }
}
