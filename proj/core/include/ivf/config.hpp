#pragma once

#include "ivf/data_model.hpp"
#include "ivf/fits.hpp"
#include "ivf/predict.hpp"
#include "ivf/sampler.hpp"
#include "ivf/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace ivf {

// Effective run configuration. Relative data paths resolve against the
// output directory, so a default configuration chains simulate -> fit ->
// predict -> evaluate in one directory.
struct RunConfig {
  // Master seed; every command derives its own substream by a fixed label.
  std::uint64_t seed = 1;

  struct Data {
    std::filesystem::path cycles = "cycles.csv";
    std::filesystem::path embryos = "embryos.csv";
    // Patients to predict; the training data when absent.
    std::optional<std::filesystem::path> patient_cycles;
    std::optional<std::filesystem::path> patient_embryos;
  } data;

  struct Model {
    FitMode mode = FitMode::separate;
    Setting setting = Setting::pretreatment;
    std::optional<CovariateSpec> covariates;  // defaults for the setting when absent
  } model;

  SamplerConfig sampler;  // `seed` is derived, never read from the file

  struct Predict {
    Denominator denominator = Denominator::per_cycle_started;
    bool include_random_effects = false;
    std::size_t n_draws = 200;
    Submodel stage = Submodel::O;  // first simulated stage (dynamic setting)
  } predict;

  struct Synth {
    std::size_t n_cycles = 2962;
    GroundTruth ground_truth = default_ground_truth();
  } synth;

  struct Output {
    std::filesystem::path directory = "out";
  } output;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path fit_dir() const { return output.directory / "fit"; }
  std::filesystem::path predict_dir() const { return output.directory / "predict"; }
  std::filesystem::path evaluate_dir() const { return output.directory / "evaluate"; }
  std::filesystem::path diagnose_dir() const { return output.directory / "diagnose"; }

  // Throws ConfigError.
  void validate() const;
};

// Seeds derived from the master seed.
std::uint64_t command_seed(const RunConfig& config, std::string_view command);

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_string(const RunConfig& config);
void write_config(const RunConfig& config, const std::filesystem::path& path);

// Ground truth in the coefficient scale of its reference standardization.
std::string ground_truth_to_string(const GroundTruth& gt);
GroundTruth parse_ground_truth(const std::string& text);
void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

}  // namespace ivf
