#pragma once

#include "ivf/data_model.hpp"
#include "ivf/fits.hpp"
#include "ivf/stats.hpp"
#include "ivf/synth.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ivf {

enum class Denominator { per_cycle_started, conditional_on_stage };
std::string_view denominator_name(Denominator d) noexcept;
Denominator parse_denominator(std::string_view name);

struct PredictionRequest {
  const PosteriorFit* fit = nullptr;
  // Patients as cycle records (unstandardized). Outcome fields are read only
  // for dynamic requests, up to `stage`.
  const Dataset* patients = nullptr;
  Setting setting = Setting::pretreatment;
  // First stage to simulate in a dynamic request; upstream outcomes are observed.
  Submodel stage = Submodel::O;
  // Scaled patient effects for O, M, E, F. The unit-variance probit residuals
  // of D and L are always drawn.
  bool include_random_effects = false;
  std::size_t n_draws = 200;  // posterior draws used, evenly spaced
  Denominator denominator = Denominator::per_cycle_started;
  std::uint64_t seed = 1;
};

// One simulated cycle. Failure propagates: a zero count stops the cascade with
// later events 0 and no grades.
class PredictedCycle {
 public:
  std::int16_t n_oocytes = 0;
  std::int16_t n_embryos = 0;
  bool mixed = false;
  bool transfer = false;
  std::int8_t det = 0;
  std::int8_t lbe = 0;
  // Grade counts of simulated embryos; zero when grades were observed.
  std::array<std::uint16_t, 4> evenness{};
  std::array<std::uint16_t, 4> fragmentation{};

  bool has_embryos() const noexcept { return n_embryos >= 1; }
  // Throw Error on a draw without embryos.
  double mean_evenness() const;
  double mean_fragmentation() const;

  void set_means(double evenness, double fragmentation) noexcept {
    mean_evenness_ = static_cast<float>(evenness);
    mean_fragmentation_ = static_cast<float>(fragmentation);
  }

 private:
  float mean_evenness_ = 0.0f;
  float mean_fragmentation_ = 0.0f;
};

struct PredictiveDraws {
  Denominator denominator = Denominator::per_cycle_started;
  std::vector<std::string> patient_ids;
  std::vector<std::size_t> posterior_draws;  // pooled draw index per predictive draw
  std::vector<PredictedCycle> cells;         // draw-major: cells[d * n_patients + j]

  std::size_t n_patients() const noexcept { return patient_ids.size(); }
  std::size_t n_draws() const noexcept { return posterior_draws.size(); }
  const PredictedCycle& at(std::size_t draw, std::size_t patient) const {
    return cells[draw * n_patients() + patient];
  }
};

// Simulates every (patient, draw) from its own substream of request.seed;
// the result does not depend on evaluation order.
PredictiveDraws predict_pretreatment(const PredictionRequest& request);
PredictiveDraws predict_dynamic(const PredictionRequest& request);

// Cascade outcome -> stored draw.
PredictedCycle to_predicted(const CycleOutcome& outcome);

using DrawPredicate = std::function<bool(const PredictedCycle&)>;

// Fewer than 15 oocytes and a live birth.
bool safe_and_successful(const PredictedCycle& c);

// Per predictive draw, the cohort proportion satisfying the predicate; median
// and 2.5 / 97.5 percentiles across draws. Requires per_cycle_started draws.
stats::Interval joint_event_probability(const PredictiveDraws& draws, const DrawPredicate& predicate);

// Per-patient predictive summaries used as point predictions.
struct PointPredictions {
  std::vector<double> n_oocytes;   // predictive mean
  std::vector<double> n_embryos;   // predictive mean, failures count as 0
  std::vector<double> p_transfer;
  std::vector<double> p_det;       // per cycle started
  std::vector<double> p_det_given_transfer;  // NaN when no draw reaches transfer
  std::vector<double> p_lbe;       // per cycle started
  std::vector<double> p_lbe_given_transfer;
};
PointPredictions point_predictions(const PredictiveDraws& draws);

// Long format: patient,draw,outcome,value. Under per_cycle_started failures are
// written as 0; under conditional_on_stage outcomes of unreached stages are
// omitted. Mean grades appear only for draws with embryos.
void write_predictive_draws(const PredictiveDraws& draws, const std::filesystem::path& path);

struct CalibrationRow {
  std::string outcome;   // n_oocytes, n_embryos, transfer, det, lbe, evenness, fragmentation
  std::string category;  // bucket "0".."24", "25+", grade "1".."4", or "event"
  double observed = 0.0;
  double p025 = 0.0;
  double p50 = 0.0;
  double p975 = 0.0;
};

// Counts bucketed 0..24 and 25+ (cycles per bucket), binaries as event
// proportions per cycle started, grades as category frequencies among embryos.
std::vector<CalibrationRow> calibration_table(const PredictiveDraws& draws, const Dataset& observed);
void calibration_export(const PredictiveDraws& draws, const Dataset& observed, const std::filesystem::path& path);

}  // namespace ivf
