#pragma once

#include "ivf/data_model.hpp"
#include "ivf/parameters.hpp"
#include "ivf/sampler.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ivf {

enum class FitMode { separate, joint };
std::string_view fit_mode_name(FitMode m) noexcept;
FitMode parse_fit_mode(std::string_view name);

inline constexpr double kRhatThreshold = 1.05;

struct FitRequest {
  const Dataset* data = nullptr;  // unstandardized
  FitMode mode = FitMode::separate;
  Setting setting = Setting::pretreatment;
  std::optional<CovariateSpec> spec;  // defaults for the setting when absent
  SamplerConfig sampler;
};

struct RhatEntry {
  std::string parameter;
  std::optional<double> rhat;  // nullopt when every chain is constant
  double mcse = 0.0;           // from chain means
  double ess = 0.0;            // effective sample size; 0 when undefined
};

struct FitDiagnostics {
  std::vector<RhatEntry> rhat;  // one per reported parameter
  std::size_t divergences = 0;
  // Per sampler run: "joint" or the submodel code.
  std::vector<std::pair<std::string, std::size_t>> divergences_by_run;
  double wall_seconds = 0.0;
  bool converged = false;  // every Rhat defined and below kRhatThreshold
};

struct PosteriorFit {
  FitMode mode = FitMode::separate;
  Setting setting = Setting::pretreatment;
  CovariateSpec spec;
  StandardizationParams standardization;  // ages
  StandardizationParams derived;          // outcome covariates
  double icsi_rate = 0.5;                 // training share of ICSI cycles
  SamplerConfig sampler;
  // Canonical layout; separate fits carry no correlations (identity).
  PosteriorDraws draws;
  FitDiagnostics diagnostics;

  ParameterNames layout() const { return parse_parameter_names(draws.names); }
  // Constrained parameters of pooled draw d (chains concatenated).
  ParameterSet parameters(std::size_t d) const;
};

// Runs one sampler over the joint posterior, or six independent samplers
// (submodel s seeded with substream ("separate", s)). Non-convergence is
// flagged in the diagnostics, not thrown. Throws NumericalError when a linear
// predictor clamp is active at a recorded draw.
PosteriorFit fit(const FitRequest& request);

FitDiagnostics compute_diagnostics(const PosteriorDraws& draws);

struct SummaryRow {
  std::string submodel;   // O, M, E, F, D, L or "latent"
  std::string parameter;  // canonical name, e.g. beta_O[2]
  std::string label;      // human-readable, e.g. "Age (years)"
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Medians and 2.5 / 97.5 percentiles (type 7). Age slopes are divided by the
// age SD to give per-year effects. Rows follow the submodel blocks O..L, then
// the latent correlations.
std::vector<SummaryRow> summarize(const PosteriorFit& fit);
void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
void write_rhat_table(const FitDiagnostics& diagnostics, const std::filesystem::path& path);

// fit.json (metadata) + draws.csv (+ sidecar) inside `dir`.
void save_fit(const PosteriorFit& fit, const std::filesystem::path& dir);
PosteriorFit load_fit(const std::filesystem::path& dir);

}  // namespace ivf
