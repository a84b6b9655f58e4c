#include "ivf/commands.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/evaluate.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace ivf {

namespace {

using json = nlohmann::ordered_json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(std::size_t k, std::size_t n) {
  return std::to_string(k) + " (" + fixed(n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0, 0) + "%)";
}

std::string quartile_text(const std::array<double, 3>& q, const std::array<double, 2>& range, int digits) {
  return fixed(q[0], digits) + " (" + fixed(q[1], digits) + " to " + fixed(q[2], digits) + "; " +
         fixed(range[0], digits) + " to " + fixed(range[1], digits) + ")";
}

void print_cohort_summary(const CohortSummary& s, std::ostream& log) {
  const auto row = [&](const std::string& label, const std::string& value) {
    log << "  " << label;
    for (std::size_t k = label.size(); k < 40; ++k) log << ' ';
    log << value << '\n';
  };
  log << "Cohort summary, median (IQR; range) or n (%)\n";
  row("No of cycles started", std::to_string(s.cycles_started));
  row("No of cycles with oocytes mixed", std::to_string(s.cycles_mixed));
  row("No of embryos", std::to_string(s.embryos));
  row("No of cycles with a transfer", std::to_string(s.transfers));
  row("Age (years)", quartile_text(s.age, s.age_range, 1));
  row("Partner age (years)", quartile_text(s.partner_age, s.partner_age_range, 1));
  row("Attempt 1", percent(s.attempts[0], s.cycles_started));
  row("Attempt 2", percent(s.attempts[1], s.cycles_started));
  row("Attempt 3", percent(s.attempts[2], s.cycles_started));
  row("Attempt 4 or 5", percent(s.attempts[3], s.cycles_started));
  row("Oocytes per cycle", quartile_text(s.oocytes, s.oocytes_range, 0));
  row("Embryos per cycle", quartile_text(s.embryos_per_cycle, s.embryos_per_cycle_range, 0));
  row("Single embryo transfer", percent(s.single_transfers, s.transfers));
  row("Double embryo transfer", percent(s.double_transfers, s.transfers));
  row("Live birth event", percent(s.live_births, s.transfers));
}

void write_json(const json& j, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw ConfigError("missing " + what + ": " + p.string());
}

Dataset load_training(const RunConfig& config) {
  const auto cycles = config.resolve(config.data.cycles);
  const auto embryos = config.resolve(config.data.embryos);
  require_file(cycles, "cycles file");
  require_file(embryos, "embryos file");
  return load_dataset(cycles, embryos);
}

Dataset load_patients(const RunConfig& config) {
  if (!config.data.patient_cycles) return load_training(config);
  const auto cycles = config.resolve(*config.data.patient_cycles);
  const auto embryos = config.resolve(*config.data.patient_embryos);
  require_file(cycles, "patient cycles file");
  require_file(embryos, "patient embryos file");
  return load_dataset(cycles, embryos);
}

PosteriorFit load_upstream_fit(const RunConfig& config) {
  require_file(config.fit_dir() / "fit.json", "fit artifact (run fit first)");
  return load_fit(config.fit_dir());
}

PredictiveDraws run_predict(const RunConfig& config, const PosteriorFit& fit, const Dataset& patients,
                            bool include_random_effects, Denominator denominator) {
  if (fit.setting != config.model.setting) {
    throw ConfigError("fit setting '" + std::string(setting_name(fit.setting)) +
                      "' does not match the requested setting '" + std::string(setting_name(config.model.setting)) +
                      "'");
  }
  PredictionRequest req;
  req.fit = &fit;
  req.patients = &patients;
  req.setting = config.model.setting;
  req.stage = config.predict.stage;
  req.include_random_effects = include_random_effects;
  req.n_draws = config.predict.n_draws;
  req.denominator = denominator;
  req.seed = command_seed(config, "predict");
  return req.setting == Setting::pretreatment ? predict_pretreatment(req) : predict_dynamic(req);
}

bool has_observed_outcomes(const Dataset& data) {
  for (const auto& c : data.cycles()) {
    if (!c.n_oocytes) return false;
  }
  return true;
}

std::size_t realized_safe_and_successful(const Dataset& data) {
  std::size_t k = 0;
  for (const auto& c : data.cycles()) k += (c.n_oocytes.value_or(0) < 15 && c.lbe.value_or(0) == 1) ? 1 : 0;
  return k;
}

}  // namespace

int cmd_simulate(const RunConfig& config, std::ostream& log) {
  const auto& gt = config.synth.ground_truth;
  const Dataset data = simulate_cohort(gt, config.synth.n_cycles, command_seed(config, "simulate"));
  write_dataset(data, config.resolve(config.data.cycles), config.resolve(config.data.embryos));
  write_ground_truth(gt, config.output.directory / "groundtruth.json");
  write_config(config, config.output.directory / "config.json");
  print_cohort_summary(summarize_cohort(data), log);
  return kExitOk;
}

int cmd_fit(const RunConfig& config, const CommandOptions& options, std::ostream& log) {
  const Dataset data = load_training(config);

  FitRequest req;
  req.data = &data;
  req.mode = config.model.mode;
  req.setting = config.model.setting;
  req.spec = config.model.covariates;
  req.sampler = config.sampler;
  req.sampler.seed = command_seed(config, "fit");
  const PosteriorFit fit = ivf::fit(req);

  const auto dir = config.fit_dir();
  save_fit(fit, dir);
  const auto rows = summarize(fit);
  write_summary(rows, dir / "summary.csv");
  write_rhat_table(fit.diagnostics, dir / "rhat.csv");

  json diag;
  diag["converged"] = fit.diagnostics.converged;
  diag["rhat_threshold"] = kRhatThreshold;
  double max_rhat = 0.0;
  json undefined = json::array();
  for (const auto& r : fit.diagnostics.rhat) {
    if (r.rhat) {
      max_rhat = std::max(max_rhat, *r.rhat);
    } else {
      undefined.push_back(r.parameter);
    }
  }
  diag["max_rhat"] = max_rhat;
  diag["undefined_rhat"] = undefined;
  diag["divergences"] = fit.diagnostics.divergences;
  json by_run = json::object();
  for (const auto& [run, n] : fit.diagnostics.divergences_by_run) by_run[run] = n;
  diag["divergences_by_run"] = by_run;
  write_json(diag, dir / "diagnostics.json");
  write_json(json{{"wall_seconds", fit.diagnostics.wall_seconds}}, dir / "timing.json");
  write_config(config, dir / "config.json");

  std::string current;
  for (const auto& r : rows) {
    if (r.submodel != current) {
      current = r.submodel;
      log << (current == "latent" ? std::string("Latent correlations") : "Submodel " + current) << '\n';
    }
    log << "  " << r.label;
    for (std::size_t k = r.label.size(); k < 34; ++k) log << ' ';
    log << fixed(r.median, 2) << " (" << fixed(r.lo, 2) << " to " << fixed(r.hi, 2) << ")\n";
  }
  log << "divergences: " << fit.diagnostics.divergences << ", max Rhat: " << fixed(max_rhat, 3)
      << ", wall time: " << fixed(fit.diagnostics.wall_seconds, 1) << " s\n";

  if (!fit.diagnostics.converged) {
    log << "convergence gate failed (Rhat >= " << kRhatThreshold << " or undefined)\n";
    if (!options.allow_nonconverged) return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_predict(const RunConfig& config, std::ostream& log) {
  const PosteriorFit fit = load_upstream_fit(config);
  const Dataset patients = load_patients(config);
  const auto draws =
      run_predict(config, fit, patients, config.predict.include_random_effects, config.predict.denominator);
  const auto dir = config.predict_dir();
  write_predictive_draws(draws, dir / "predictive_draws.csv");

  const auto points = point_predictions(draws);
  {
    auto out = csv::open_output(dir / "point_predictions.csv");
    out << "patient,n_oocytes,n_embryos,p_transfer,p_det,p_lbe\n";
    for (std::size_t j = 0; j < draws.n_patients(); ++j) {
      out << draws.patient_ids[j] << ',' << csv::format_shortest(points.n_oocytes[j]) << ','
          << csv::format_shortest(points.n_embryos[j]) << ',' << csv::format_shortest(points.p_transfer[j]) << ','
          << csv::format_shortest(points.p_det[j]) << ',' << csv::format_shortest(points.p_lbe[j]) << '\n';
    }
    if (!out) throw Error("failed writing point predictions");
  }
  if (has_observed_outcomes(patients)) calibration_export(draws, patients, dir / "calibration.csv");
  write_config(config, dir / "config.json");

  log << "predicted " << draws.n_patients() << " patients x " << draws.n_draws() << " draws ("
      << denominator_name(draws.denominator) << ", random effects "
      << (config.predict.include_random_effects ? "included" : "excluded") << ")\n";
  if (draws.denominator == Denominator::per_cycle_started) {
    const auto p = joint_event_probability(draws, safe_and_successful);
    log << "safe and successful (<15 oocytes and live birth): " << fixed(100 * p.median, 1) << "% ("
        << fixed(100 * p.lo, 1) << " to " << fixed(100 * p.hi, 1) << ")\n";
  }
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const PosteriorFit fit = load_upstream_fit(config);
  const Dataset patients = load_patients(config);
  if (!has_observed_outcomes(patients)) throw DataError("evaluation requires observed outcomes for every cycle");
  const auto draws = run_predict(config, fit, patients, config.predict.include_random_effects,
                                 Denominator::per_cycle_started);
  const auto points = point_predictions(draws);
  const std::size_t n = patients.num_cycles();

  std::vector<double> obs_oocytes, obs_embryos;
  std::vector<int> det, lbe;
  for (const auto& c : patients.cycles()) {
    obs_oocytes.push_back(c.n_oocytes.value_or(0));
    obs_embryos.push_back(c.n_embryos.value_or(0));
    det.push_back(c.det.value_or(0));
    lbe.push_back(c.lbe.value_or(0));
  }

  MetricReport report;
  const auto add_rmse = [&](const char* outcome, const std::vector<double>& pred, const std::vector<double>& obs) {
    const double v = rmse(pred, obs);
    report.rows.push_back({outcome, "rmse", v, v, v, n, "predictive_mean"});
  };
  add_rmse("n_oocytes", points.n_oocytes, obs_oocytes);
  add_rmse("n_embryos", points.n_embryos, obs_embryos);

  const auto seed = command_seed(config, "evaluate");
  const auto add_auc = [&](const char* outcome, const std::vector<double>& score, const std::vector<int>& label,
                           std::uint64_t index) {
    try {
      const auto r = auc_with_interval(score, label, derive_seed(seed, outcome, index));
      report.rows.push_back({outcome, "auc", r.auc, r.lo, r.hi, n, "mann_whitney_stratified_bootstrap_2000"});
    } catch (const Error& e) {
      log << "skipping AUC for " << outcome << ": " << e.what() << '\n';
    }
  };
  add_auc("det", points.p_det, det, 0);
  add_auc("lbe", points.p_lbe, lbe, 1);

  const auto prevalence = [&](const PredictiveDraws& d, const char* method) {
    const auto p = joint_event_probability(d, safe_and_successful);
    report.rows.push_back({"safe_and_successful", "prevalence", p.median, p.lo, p.hi, n, method});
  };
  if (config.predict.include_random_effects) {
    prevalence(draws, "posterior_predictive_re_included");
    prevalence(run_predict(config, fit, patients, false, Denominator::per_cycle_started),
               "posterior_predictive_re_excluded");
  } else {
    prevalence(draws, "posterior_predictive_re_excluded");
    prevalence(run_predict(config, fit, patients, true, Denominator::per_cycle_started),
               "posterior_predictive_re_included");
  }
  const double realized = static_cast<double>(realized_safe_and_successful(patients)) / static_cast<double>(n);
  report.rows.push_back({"safe_and_successful", "prevalence", realized, realized, realized, n, "observed"});

  const auto dir = config.evaluate_dir();
  report.write(dir / "metrics.csv");
  write_config(config, dir / "config.json");

  for (const auto& r : report.rows) {
    log << "  " << r.outcome << ' ' << r.metric << " [" << r.method << "]: " << fixed(r.value, 3);
    if (r.lo != r.hi) log << " (" << fixed(r.lo, 3) << " to " << fixed(r.hi, 3) << ")";
    log << '\n';
  }
  return kExitOk;
}

int cmd_diagnose(const RunConfig& config, std::ostream& log) {
  const PosteriorFit fit = load_upstream_fit(config);
  const auto dir = config.diagnose_dir();
  export_traces(fit.draws, dir / "traces.csv");
  write_rhat_table(fit.diagnostics, dir / "rhat.csv");
  write_config(config, dir / "config.json");
  log << "chains: " << fit.draws.chains.size() << ", draws per chain: " << fit.draws.draws_per_chain()
      << ", parameters: " << fit.draws.num_parameters() << ", converged: " << (fit.diagnostics.converged ? "yes" : "no")
      << '\n';
  return kExitOk;
}

}  // namespace ivf
