#pragma once

#include "ivf/data_model.hpp"
#include "ivf/parameters.hpp"
#include "ivf/random.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace ivf {

// Normal(location, scale) truncated to [lo, hi].
struct TruncatedNormal {
  double location = 0.0;
  double scale = 1.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct Population {
  TruncatedNormal age{33.0, 6.0 / 1.349, 21.0, 43.0};
  TruncatedNormal partner_age{35.0, 7.0 / 1.349, 19.0, 72.0};
  std::array<double, 4> attempt_probs{0.72, 0.22, 0.05, 0.01};
  double icsi_prob = 0.5;  // per cycle
};

// Coefficients act on ages standardized with `reference` (the population
// location and scale), not on the moments of any particular sample.
struct GroundTruth {
  ParameterSet params;
  CovariateSpec spec = CovariateSpec::defaults(Setting::pretreatment);
  StandardizationParams reference;
  // Moments of outcome covariates; required only when `spec` uses outcomes.
  StandardizationParams derived;
  Population population;
  double abandonment_prob = 0.005;

  // Throws ConfigError on inconsistent widths, probabilities or ranges.
  void validate() const;
};

GroundTruth default_ground_truth();

// Same linear predictors expressed for ages standardized with `target`
// (slopes rescaled, offsets moved into intercepts or thresholds).
ParameterSet align_to_standardization(const GroundTruth& gt, const StandardizationParams& target);

// ---------------------------------------------------------------------------
// Stage cascade shared by the simulator and posterior prediction.

struct CascadeModel {
  const ParameterSet* params = nullptr;
  const CovariateSpec* spec = nullptr;
  const StandardizationParams* derived = nullptr;
  Matrix6 chol = Matrix6::Identity();  // Cholesky factor of the latent covariance

  CascadeModel(const ParameterSet& p, const CovariateSpec& s, const StandardizationParams& d);
};

struct CascadeOptions {
  // When false the scaled effects of O, M, E, F are zero; the unit-variance
  // residuals of D and L are drawn either way.
  bool include_random_effects = true;
  double abandonment_prob = 0.0;
  double icsi_prob = 0.5;  // used when the ICSI status is not supplied
};

struct CycleOutcome {
  int n_oocytes = 0;
  bool mixed = false;
  int n_embryos = 0;
  bool icsi = false;
  std::vector<std::array<int, 2>> grades;  // (evenness, fragmentation), simulated embryos only
  std::optional<double> mean_evenness;     // defined iff n_embryos >= 1
  std::optional<double> mean_fragmentation;
  bool transfer = false;
  int det = 0;
  int lbe = 0;
};

// Simulates the stages not already observed in `state` (ages standardized).
// Observed n_oocytes, n_embryos with mean grades, and det are passed through.
// A zero count stops the cascade with every later event set to 0.
CycleOutcome simulate_cascade(const CascadeModel& model, const CycleState& state, std::optional<bool> icsi,
                              const CascadeOptions& options, Rng& rng);

// Draws from Poisson(rate) restricted to {0, ..., upper} by inverse CDF.
int truncated_poisson(double rate, int upper, Rng& rng);
int poisson(double rate, Rng& rng);
// Grade 1..4 from cumulative-logit probabilities.
int ordinal_draw(const Thresholds& alpha, double linpred, Rng& rng);
double truncated_normal(const TruncatedNormal& d, Rng& rng);

// ---------------------------------------------------------------------------

// Unstandardized cohort; ages rounded to 0.1 years. Cycle c uses the substream
// ("cycle", c) of `seed`, so the output does not depend on evaluation order.
Dataset simulate_cohort(const GroundTruth& gt, std::size_t n_cycles, std::uint64_t seed);

struct CohortSummary {
  std::size_t cycles_started = 0;
  std::size_t cycles_mixed = 0;
  std::size_t embryos = 0;
  std::size_t transfers = 0;
  std::array<double, 3> age{};          // median, lower quartile, upper quartile
  std::array<double, 2> age_range{};
  std::array<double, 3> partner_age{};
  std::array<double, 2> partner_age_range{};
  std::array<std::size_t, 4> attempts{};
  std::array<double, 3> oocytes{};
  std::array<double, 2> oocytes_range{};
  std::array<double, 3> embryos_per_cycle{};
  std::array<double, 2> embryos_per_cycle_range{};
  std::size_t single_transfers = 0;
  std::size_t double_transfers = 0;
  std::size_t live_births = 0;
};

CohortSummary summarize_cohort(const Dataset& data);

}  // namespace ivf
