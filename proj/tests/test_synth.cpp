#include "ivf/likelihood.hpp"
#include "ivf/stats.hpp"
#include "ivf/synth.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>

using namespace ivf;

namespace {

// Every coefficient zero, eta = 0, near-zero patient scales.
GroundTruth null_truth() {
  GroundTruth gt = default_ground_truth();
  for (auto s : kAllSubmodels) gt.params.b(s).setZero();
  gt.params.theta = {1e-9, 1e-9, 1e-9, 1e-9};
  gt.params.corr = Matrix6::Identity();
  return gt;
}

}  // namespace

TEST_SUITE("default_ground_truth") {
  TEST_CASE("published coefficients on the standardized scale") {
    const auto gt = default_ground_truth();
    CHECK(gt.params.b(Submodel::O)(0) == doctest::Approx(2.10));
    CHECK(gt.params.alpha_E == Thresholds{-4.35, -1.38, 1.33});
    CHECK(gt.params.theta == std::array<double, 4>{0.5, 0.3, 0.8, 0.8});
    const auto cov = build_covariance(gt.params.theta, gt.params.corr);
    CHECK(cov.sigma(4, 4) == 1.0);
    CHECK(cov.sigma(5, 5) == 1.0);
    // Per-year age slope of the oocyte model is -0.04.
    CHECK(gt.params.b(Submodel::O)(1) / gt.reference.sd_of("age") == doctest::Approx(-0.04));
    CHECK_NOTHROW(gt.validate());
  }

  TEST_CASE("alignment preserves every linear predictor") {
    const auto gt = default_ground_truth();
    StandardizationParams target;
    target.set("age", 32.4, 4.7);
    target.set("partner_age", 35.9, 5.6);
    const auto aligned = align_to_standardization(gt, target);
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      const double age = rng.uniform(21, 43), partner = rng.uniform(19, 72);
      CycleState ref, tgt;
      ref.age = gt.reference.apply("age", age);
      ref.partner_age = gt.reference.apply("partner_age", partner);
      tgt.age = target.apply("age", age);
      tgt.partner_age = target.apply("partner_age", partner);
      ref.attempt = tgt.attempt = 1 + rep % 4;
      for (auto s : kAllSubmodels) {
        Eigen::MatrixXd a(1, design_width(s, gt.spec)), b(1, design_width(s, gt.spec));
        fill_design_row(s, gt.spec, gt.derived, ref, rep % 2 == 0, a.row(0));
        fill_design_row(s, gt.spec, gt.derived, tgt, rep % 2 == 0, b.row(0));
        const double eta_ref = a.row(0).dot(gt.params.b(s));
        const double eta_tgt = b.row(0).dot(aligned.b(s));
        if (has_intercept(s)) {
          CHECK(eta_tgt == doctest::Approx(eta_ref).epsilon(1e-12));
        } else {
          // Ordinal models: alpha_k - eta is what matters.
          for (int k = 0; k < 3; ++k) {
            CHECK(aligned.alpha(s)[static_cast<std::size_t>(k)] - eta_tgt ==
                  doctest::Approx(gt.params.alpha(s)[static_cast<std::size_t>(k)] - eta_ref).epsilon(1e-12));
          }
        }
      }
    }
  }
}

TEST_SUITE("simulate_cohort") {
  TEST_CASE("vanishing oocyte rate stops every cycle at retrieval") {
    auto gt = default_ground_truth();
    gt.params.b(Submodel::O)(0) = -30.0;
    const auto d = simulate_cohort(gt, 500, 4);
    CHECK(d.num_embryos() == 0);
    CHECK(d.units(Submodel::M).empty());
    for (const auto& c : d.cycles()) CHECK(c.n_oocytes.value() == 0);
  }

  TEST_CASE("null truth gives DET with probability one half among eligible transfers") {
    const auto d = simulate_cohort(null_truth(), 10000, 21);
    std::size_t eligible = 0, det = 0;
    for (const auto& c : d.cycles()) {
      if (c.transfer_done && c.n_embryos.value_or(0) >= 2) {
        ++eligible;
        det += static_cast<std::size_t>(c.det.value());
      }
    }
    REQUIRE(eligible > 500);
    CHECK(std::abs(static_cast<double>(det) / static_cast<double>(eligible) - 0.5) < 0.02);
  }

  TEST_CASE("default cohort has a median oocyte count near the clinic's") {
    const auto d = simulate_cohort(default_ground_truth(), 2962, 1);
    std::vector<double> oocytes;
    for (const auto& c : d.cycles()) oocytes.push_back(c.n_oocytes.value_or(0));
    const double median = stats::quantile(oocytes, 0.5);
    CHECK(median >= 7);
    CHECK(median <= 11);
    const auto s = summarize_cohort(d);
    CHECK(s.cycles_started == 2962);
    CHECK(s.age_range[0] >= 21.0);
    CHECK(s.age_range[1] <= 43.0);
    CHECK(s.partner_age_range[0] >= 19.0);
    CHECK(s.partner_age_range[1] <= 72.0);
  }

  TEST_CASE("same seed gives byte-identical files; a new seed does not") {
    test::TempDir dir("synth");
    const auto gt = default_ground_truth();
    write_dataset(simulate_cohort(gt, 300, 7), dir / "c1.csv", dir / "e1.csv");
    write_dataset(simulate_cohort(gt, 300, 7), dir / "c2.csv", dir / "e2.csv");
    write_dataset(simulate_cohort(gt, 300, 8), dir / "c3.csv", dir / "e3.csv");
    CHECK(test::read_file(dir / "c1.csv") == test::read_file(dir / "c2.csv"));
    CHECK(test::read_file(dir / "e1.csv") == test::read_file(dir / "e2.csv"));
    CHECK(test::read_file(dir / "c1.csv") != test::read_file(dir / "c3.csv"));
    // Structural invariants survive a load round trip.
    CHECK_NOTHROW((void)load_dataset(dir / "c1.csv", dir / "e1.csv"));
  }

  TEST_CASE("a prefix of a cohort does not depend on its length") {
    const auto gt = default_ground_truth();
    const auto small = simulate_cohort(gt, 50, 9);
    const auto large = simulate_cohort(gt, 200, 9);
    for (std::size_t c = 0; c < 50; ++c) {
      CHECK(small.cycles()[c].n_oocytes == large.cycles()[c].n_oocytes);
      CHECK(small.cycles()[c].lbe == large.cycles()[c].lbe);
    }
  }

  TEST_CASE("structural constraints hold in every simulated cycle") {
    const auto d = simulate_cohort(default_ground_truth(), 3000, 5);
    for (std::size_t c = 0; c < d.num_cycles(); ++c) {
      const auto& r = d.cycles()[c];
      if (r.n_embryos) CHECK(*r.n_embryos <= r.n_oocytes.value());
      CHECK(r.transfer_done == (r.n_embryos.value_or(0) >= 1));
      if (r.det && *r.det == 1) CHECK(*r.n_embryos >= 2);
    }
  }
}

TEST_SUITE("cascade building blocks") {
  TEST_CASE("zero correlations give uncorrelated latent draws") {
    auto gt = default_ground_truth();
    gt.params.corr = Matrix6::Identity();
    const CascadeModel model(gt.params, gt.spec, gt.derived);
    Rng rng(31);
    const int n = 10000;
    Eigen::MatrixXd z(n, kLatentDim);
    for (int i = 0; i < n; ++i) {
      Vector6 u;
      for (int k = 0; k < kLatentDim; ++k) u(k) = rng.normal();
      z.row(i) = (model.chol.triangularView<Eigen::Lower>() * u).transpose();
    }
    const Eigen::MatrixXd centred = z.rowwise() - z.colwise().mean();
    const Eigen::MatrixXd cov = centred.transpose() * centred / (n - 1.0);
    for (int a = 0; a < kLatentDim; ++a) {
      for (int b = a + 1; b < kLatentDim; ++b) {
        CHECK(std::abs(cov(a, b) / std::sqrt(cov(a, a) * cov(b, b))) < 0.05);
      }
    }
  }

  TEST_CASE("truncated Poisson matches the renormalized pmf") {
    const double rate = 6.0;
    const int upper = 5;
    Rng rng(8);
    std::array<double, upper + 1> counts{};
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const int k = truncated_poisson(rate, upper, rng);
      REQUIRE(k >= 0);
      REQUIRE(k <= upper);
      counts[static_cast<std::size_t>(k)] += 1.0;
    }
    double norm = 0.0;
    for (int k = 0; k <= upper; ++k) norm += std::exp(poisson_log_pmf(k, std::log(rate)));
    for (int k = 0; k <= upper; ++k) {
      const double p = std::exp(poisson_log_pmf(k, std::log(rate))) / norm;
      CHECK(std::abs(counts[static_cast<std::size_t>(k)] / n - p) < 4.0 * std::sqrt(p * (1 - p) / n) + 1e-4);
    }
  }

  TEST_CASE("ordinal draws follow the category probabilities") {
    const Thresholds alpha{-1.0, 0.3, 1.7};
    const double t = 0.4;
    const auto p = ordinal_category_probs(alpha, t);
    Rng rng(12);
    std::array<double, 4> counts{};
    const int n = 200000;
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(ordinal_draw(alpha, t, rng) - 1)] += 1.0;
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(counts[k] / n - p[k]) < 0.005);
  }

  TEST_CASE("observed upstream outcomes pass through the cascade") {
    const auto gt = default_ground_truth();
    const CascadeModel model(gt.params, gt.spec, gt.derived);
    CycleState st;
    st.n_oocytes = 7;
    st.n_embryos = 3;
    st.mean_evenness = 2.5;
    st.mean_fragmentation = 3.0;
    st.det = 1;
    CascadeOptions opt;
    Rng rng(2);
    const auto o = simulate_cascade(model, st, true, opt, rng);
    CHECK(o.n_oocytes == 7);
    CHECK(o.n_embryos == 3);
    CHECK(o.grades.empty());
    CHECK(o.mean_evenness.value() == 2.5);
    CHECK(o.det == 1);
    CHECK(o.transfer);
  }
}
