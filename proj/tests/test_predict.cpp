#include "ivf/error.hpp"
#include "ivf/predict.hpp"
#include "ivf/synth.hpp"

#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <cmath>

using namespace ivf;

namespace {

// A fit whose every posterior draw equals `params`.
PosteriorFit fixed_fit(const ParameterSet& params, const CovariateSpec& spec, Setting setting,
                       const StandardizationParams& standardization, const StandardizationParams& derived,
                       std::size_t n_draws = 4) {
  PosteriorFit f;
  f.setting = setting;
  f.spec = spec;
  f.standardization = standardization;
  f.derived = derived;
  f.icsi_rate = 0.5;
  ParameterNames layout;
  for (auto s : kAllSubmodels) layout.widths[index(s)] = static_cast<std::size_t>(params.b(s).size());
  f.draws.names = layout.names();
  f.draws.chains.resize(1);
  const Eigen::VectorXd flat = layout.flatten(params);
  f.draws.chains[0].values = flat.transpose().replicate(static_cast<Eigen::Index>(n_draws), 1);
  return f;
}

PosteriorFit truth_fit(const GroundTruth& gt) {
  return fixed_fit(gt.params, gt.spec, Setting::pretreatment, gt.reference, gt.derived);
}

PredictionRequest request(const PosteriorFit& fit, const Dataset& patients, std::size_t n_draws, bool re) {
  PredictionRequest r;
  r.fit = &fit;
  r.patients = &patients;
  r.n_draws = n_draws;
  r.include_random_effects = re;
  r.seed = 2024;
  return r;
}

Dataset one_patient(std::optional<int> oocytes = std::nullopt) {
  return Dataset({test::cycle("p1", 33.0, 35.0, 1, oocytes, false, std::nullopt, false, std::nullopt, std::nullopt)},
                 {});
}

// Two-sample Kolmogorov-Smirnov distance for integer samples.
double ks_distance(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const int hi = std::max(a.back(), b.back());
  double worst = 0.0;
  for (int v = 0; v <= hi; ++v) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), v) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), v) - b.begin()) / b.size();
    worst = std::max(worst, std::abs(fa - fb));
  }
  return worst;
}

}  // namespace

TEST_CASE("no oocytes means no live birth") {
  auto gt = default_ground_truth();
  gt.params.b(Submodel::O)(0) = -30.0;
  const auto fit = truth_fit(gt);
  const auto patients = one_patient();
  const auto draws = predict_pretreatment(request(fit, patients, 500, true));
  for (const auto& c : draws.cells) {
    CHECK(c.n_oocytes == 0);
    CHECK_FALSE(c.transfer);
    CHECK(c.lbe == 0);
  }
  const auto p = point_predictions(draws);
  CHECK(p.p_lbe[0] == 0.0);
  CHECK(std::isnan(p.p_lbe_given_transfer[0]));
}

TEST_CASE("random effects with a vanishing scale do not change the predictive distribution") {
  auto gt = default_ground_truth();
  gt.params.theta = {1e-6, 1e-6, 1e-6, 1e-6};
  gt.params.corr = Matrix6::Identity();
  const auto fit = truth_fit(gt);
  const auto patients = one_patient();
  auto with = request(fit, patients, 10000, true);
  auto without = request(fit, patients, 10000, false);
  without.seed = 99;
  const auto a = predict_pretreatment(with);
  const auto b = predict_pretreatment(without);
  std::vector<int> oa, ob, ea, eb;
  for (std::size_t d = 0; d < 10000; ++d) {
    oa.push_back(a.at(d, 0).n_oocytes);
    ob.push_back(b.at(d, 0).n_oocytes);
    ea.push_back(a.at(d, 0).n_embryos);
    eb.push_back(b.at(d, 0).n_embryos);
  }
  CHECK(ks_distance(oa, ob) < 0.02);
  CHECK(ks_distance(ea, eb) < 0.02);
}

TEST_CASE("random effects widen the oocyte distribution") {
  auto gt = default_ground_truth();
  gt.params.theta[0] = 1.0;
  const auto fit = truth_fit(gt);
  const auto patients = one_patient();
  const auto a = predict_pretreatment(request(fit, patients, 5000, true));
  const auto b = predict_pretreatment(request(fit, patients, 5000, false));
  auto var = [](const PredictiveDraws& d) {
    std::vector<double> v;
    for (const auto& c : d.cells) v.push_back(c.n_oocytes);
    return stats::variance(v);
  };
  CHECK(var(a) > 2.0 * var(b));
}

TEST_SUITE("dynamic prediction") {
  GroundTruth dynamic_truth() {
    auto gt = default_ground_truth();
    gt.spec = CovariateSpec::defaults(Setting::dynamic);
    std::array<std::size_t, kNumSubmodels> widths{};
    for (auto s : kAllSubmodels) widths[index(s)] = design_width(s, gt.spec);
    auto params = ParameterSet::zeros(widths);
    params.alpha_E = gt.params.alpha_E;
    params.alpha_F = gt.params.alpha_F;
    params.b(Submodel::O)(0) = 2.1;
    params.b(Submodel::M)(0) = -1.04;
    params.theta = {1e-6, 1e-6, 1e-6, 1e-6};
    gt.params = params;
    gt.derived.set("n_oocytes", 9.0, 5.0);
    gt.derived.set("fert_rate", 0.5, 0.2);
    gt.derived.set("mean_evenness", 2.5, 0.5);
    gt.derived.set("mean_fragmentation", 2.5, 0.5);
    return gt;
  }

  TEST_CASE("observed oocytes feed the fertilisation offset") {
    const auto gt = dynamic_truth();
    const auto fit = fixed_fit(gt.params, gt.spec, Setting::dynamic, gt.reference, gt.derived);
    const auto patients = one_patient(10);
    auto req = request(fit, patients, 20000, false);
    req.setting = Setting::dynamic;
    req.stage = Submodel::M;
    const auto draws = predict_dynamic(req);
    double sum = 0.0;
    for (const auto& c : draws.cells) {
      CHECK(c.n_oocytes == 10);
      CHECK(c.n_embryos <= 10);
      sum += c.n_embryos;
    }
    CHECK(sum / 20000.0 == doctest::Approx(10 * std::exp(-1.04)).epsilon(0.02));
  }

  TEST_CASE("an observed failure is carried to every draw") {
    const auto gt = dynamic_truth();
    const auto fit = fixed_fit(gt.params, gt.spec, Setting::dynamic, gt.reference, gt.derived);
    const auto patients = one_patient(0);
    auto req = request(fit, patients, 50, true);
    req.setting = Setting::dynamic;
    req.stage = Submodel::D;
    const auto draws = predict_dynamic(req);
    for (const auto& c : draws.cells) {
      CHECK(c.n_oocytes == 0);
      CHECK_FALSE(c.has_embryos());
      CHECK(c.lbe == 0);
    }
  }

  TEST_CASE("missing upstream observations are data errors") {
    const auto gt = dynamic_truth();
    const auto fit = fixed_fit(gt.params, gt.spec, Setting::dynamic, gt.reference, gt.derived);
    const auto patients = one_patient();
    auto req = request(fit, patients, 5, false);
    req.setting = Setting::dynamic;
    req.stage = Submodel::M;
    CHECK_THROWS_AS(predict_dynamic(req), DataError);
  }

  TEST_CASE("settings must agree") {
    const auto gt = dynamic_truth();
    const auto fit = fixed_fit(gt.params, gt.spec, Setting::dynamic, gt.reference, gt.derived);
    const auto patients = one_patient(3);
    CHECK_THROWS_AS(predict_pretreatment(request(fit, patients, 5, false)), ConfigError);
    const auto pre = truth_fit(default_ground_truth());
    auto req = request(pre, patients, 5, false);
    req.setting = Setting::dynamic;
    CHECK_THROWS_AS(predict_dynamic(req), ConfigError);
  }
}

TEST_CASE("joint event probabilities") {
  PredictiveDraws d;
  d.patient_ids = {"a", "b", "c", "d"};
  d.posterior_draws = {0, 1};
  d.cells.resize(8);
  CHECK(joint_event_probability(d, [](const PredictedCycle&) { return true; }).median == 1.0);
  CHECK(joint_event_probability(d, [](const PredictedCycle&) { return true; }).lo == 1.0);
  PredictedCycle c;
  c.lbe = 1;
  c.n_oocytes = 12;
  CHECK(safe_and_successful(c));
  c.n_oocytes = 14;
  CHECK(safe_and_successful(c));
  c.n_oocytes = 15;
  CHECK_FALSE(safe_and_successful(c));
  c.n_oocytes = 16;
  CHECK_FALSE(safe_and_successful(c));
  c.n_oocytes = 3;
  c.lbe = 0;
  CHECK_FALSE(safe_and_successful(c));
  d.denominator = Denominator::conditional_on_stage;
  CHECK_THROWS_AS(joint_event_probability(d, safe_and_successful), ConfigError);
}

TEST_CASE("sequential event chain holds on every draw") {
  const auto gt = default_ground_truth();
  const auto fit = truth_fit(gt);
  const auto cohort = simulate_cohort(gt, 100, 5);
  const auto draws = predict_pretreatment(request(fit, cohort, 100, true));
  REQUIRE(draws.cells.size() == 10000);
  std::size_t violations = 0;
  for (const auto& c : draws.cells) {
    if (c.lbe > (c.transfer ? 1 : 0)) ++violations;
    if (c.det > (c.transfer ? 1 : 0)) ++violations;
    if (c.transfer && c.n_embryos < 1) ++violations;
    if (c.n_embryos >= 1 && c.n_oocytes < 1) ++violations;
    if (c.n_embryos > c.n_oocytes) ++violations;
    if (c.n_oocytes == 0 && (c.mixed || c.transfer || c.lbe != 0)) ++violations;
    int ev = 0, fr = 0;
    for (int k = 0; k < 4; ++k) {
      ev += c.evenness[static_cast<std::size_t>(k)];
      fr += c.fragmentation[static_cast<std::size_t>(k)];
    }
    if (ev != c.n_embryos || fr != c.n_embryos) ++violations;
    if (!c.has_embryos()) {
      bool threw = false;
      try {
        (void)c.mean_evenness();
      } catch (const Error&) {
        threw = true;
      }
      if (!threw) ++violations;
    } else if (c.mean_evenness() < 1.0 || c.mean_evenness() > 4.0) {
      ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("conditional probabilities compose with the per-cycle ones") {
  const auto gt = default_ground_truth();
  const auto fit = truth_fit(gt);
  const auto cohort = simulate_cohort(gt, 30, 6);
  const auto p = point_predictions(predict_pretreatment(request(fit, cohort, 400, true)));
  for (std::size_t j = 0; j < 30; ++j) {
    if (p.p_transfer[j] == 0.0) continue;
    CHECK(p.p_lbe[j] == doctest::Approx(p.p_lbe_given_transfer[j] * p.p_transfer[j]).epsilon(1e-12));
    CHECK(p.p_det[j] == doctest::Approx(p.p_det_given_transfer[j] * p.p_transfer[j]).epsilon(1e-12));
    CHECK(p.p_lbe[j] <= p.p_transfer[j]);
  }
}

TEST_CASE("patients do not influence each other's draws") {
  const auto gt = default_ground_truth();
  const auto fit = truth_fit(gt);
  const auto cohort = simulate_cohort(gt, 20, 8);
  const auto n_embryos = static_cast<std::ptrdiff_t>(cohort.embryo_range(4).second);
  const Dataset head(std::vector<CycleRecord>(cohort.cycles().begin(), cohort.cycles().begin() + 5),
                     std::vector<EmbryoRecord>(cohort.embryos().begin(), cohort.embryos().begin() + n_embryos));
  const auto all = predict_pretreatment(request(fit, cohort, 30, true));
  const auto part = predict_pretreatment(request(fit, head, 30, true));
  for (std::size_t d = 0; d < 30; ++d) {
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(all.at(d, j).n_oocytes == part.at(d, j).n_oocytes);
      CHECK(all.at(d, j).lbe == part.at(d, j).lbe);
      CHECK(all.at(d, j).evenness == part.at(d, j).evenness);
    }
  }
}

TEST_CASE("predictive draws file under both denominators") {
  PredictiveDraws d;
  d.patient_ids = {"x"};
  d.posterior_draws = {0, 0};
  PredictedCycle fail;
  fail.n_oocytes = 0;
  PredictedCycle ok;
  ok.n_oocytes = 9;
  ok.mixed = true;
  ok.n_embryos = 2;
  ok.transfer = true;
  ok.lbe = 1;
  ok.evenness = {0, 1, 1, 0};
  ok.fragmentation = {2, 0, 0, 0};
  ok.set_means(2.5, 1.0);
  d.cells = {fail, ok};
  test::TempDir dir("predict");
  write_predictive_draws(d, dir / "a.csv");
  const auto started = test::read_file(dir / "a.csv");
  CHECK(started.find("x,1,lbe,0\n") != std::string::npos);
  CHECK(started.find("x,1,mean_evenness") == std::string::npos);
  CHECK(started.find("x,2,mean_evenness,2.5\n") != std::string::npos);
  d.denominator = Denominator::conditional_on_stage;
  write_predictive_draws(d, dir / "b.csv");
  const auto conditional = test::read_file(dir / "b.csv");
  CHECK(conditional.find("x,1,lbe") == std::string::npos);
  CHECK(conditional.find("x,1,n_oocytes,0\n") != std::string::npos);
  CHECK(conditional.find("x,2,lbe,1\n") != std::string::npos);
}

TEST_CASE("calibration table layout and sensitivity") {
  const auto gt = default_ground_truth();
  const auto fit = truth_fit(gt);
  const auto cohort = simulate_cohort(gt, 400, 12);
  const auto draws = predict_pretreatment(request(fit, cohort, 200, true));
  const auto rows = calibration_table(draws, cohort);
  const auto count = [&](const std::string& outcome) {
    return std::count_if(rows.begin(), rows.end(), [&](const CalibrationRow& r) { return r.outcome == outcome; });
  };
  CHECK(count("n_oocytes") == 26);
  CHECK(count("n_embryos") == 26);
  CHECK(count("evenness") == 4);
  CHECK(count("fragmentation") == 4);
  CHECK(count("lbe") == 1);

  auto outside = [](const std::vector<CalibrationRow>& t, const std::string& outcome) {
    int n = 0;
    for (const auto& r : t) n += (r.outcome == outcome && (r.observed < r.p025 || r.observed > r.p975)) ? 1 : 0;
    return n;
  };
  CHECK(outside(rows, "n_oocytes") <= 4);
  // Twice the oocyte rate in the observed cohort.
  auto shifted = gt;
  shifted.params.b(Submodel::O)(0) += std::log(2.0);
  const auto other = simulate_cohort(shifted, 400, 12);
  const auto mismatch = calibration_table(draws, other);
  CHECK(outside(mismatch, "n_oocytes") >= 8);

  test::TempDir dir("calibration");
  calibration_export(draws, cohort, dir / "calibration.csv");
  CHECK(test::read_file(dir / "calibration.csv").rfind("outcome,category,observed,p2.5,p50,p97.5\n", 0) == 0);
}
