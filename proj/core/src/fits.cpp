#include "ivf/fits.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/likelihood.hpp"
#include "ivf/random.hpp"
#include "ivf/stats.hpp"

#include "json_io.hpp"

#include <chrono>
#include <fstream>
#include <memory>

namespace ivf {

using detail::json;
using detail::spec_from_json;
using detail::spec_json;
using detail::standardization_from_json;
using detail::standardization_json;

std::string_view fit_mode_name(FitMode m) noexcept { return m == FitMode::joint ? "joint" : "separate"; }

FitMode parse_fit_mode(std::string_view name) {
  if (name == "joint") return FitMode::joint;
  if (name == "separate") return FitMode::separate;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected separate or joint)");
}

ParameterSet PosteriorFit::parameters(std::size_t d) const { return layout().unflatten(draws.draw(d)); }

namespace {

const std::vector<std::string> kAgeCovariates{"age", "partner_age"};

// Share of embryo-producing cycles fertilised by injection.
double icsi_share(const Dataset& data) {
  std::size_t n = 0, icsi = 0;
  for (std::size_t c = 0; c < data.num_cycles(); ++c) {
    const auto e = data.embryos_of(c);
    if (e.empty()) continue;
    ++n;
    icsi += e.front().icsi ? 1 : 0;
  }
  return n == 0 ? 0.5 : static_cast<double>(icsi) / static_cast<double>(n);
}

Projection checked_projection(const PosteriorModel& model) {
  return [&model](const Eigen::VectorXd& q) {
    const auto ev = model.evaluate(q, nullptr);
    if (ev.clamped) throw NumericalError("linear predictor reached the clamp at a recorded draw");
    if (!std::isfinite(ev.value)) throw NumericalError("non-finite log posterior at a recorded draw", ev.bad_patient);
    return model.project(q);
  };
}

// Merges per-submodel runs into the canonical layout, pairing chain c of every run.
PosteriorDraws merge_separate(const std::vector<PosteriorDraws>& runs, const ParameterNames& layout) {
  PosteriorDraws merged;
  merged.names = layout.names();
  const auto n_chains = runs.front().chains.size();
  const auto n_draws = runs.front().draws_per_chain();
  std::vector<std::pair<std::size_t, std::size_t>> source(merged.names.size());
  for (std::size_t p = 0; p < merged.names.size(); ++p) {
    bool found = false;
    for (std::size_t r = 0; r < runs.size() && !found; ++r) {
      if (const auto k = runs[r].find(merged.names[p])) {
        source[p] = {r, *k};
        found = true;
      }
    }
    if (!found) throw Error("separate fit lacks parameter " + merged.names[p]);
  }
  merged.chains.resize(n_chains);
  for (std::size_t c = 0; c < n_chains; ++c) {
    auto& out = merged.chains[c];
    out.values.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(merged.names.size()));
    for (std::size_t p = 0; p < merged.names.size(); ++p) {
      const auto [r, k] = source[p];
      out.values.col(static_cast<Eigen::Index>(p)) = runs[r].chains[c].values.col(static_cast<Eigen::Index>(k));
    }
    for (const auto& run : runs) {
      out.divergences += run.chains[c].divergences;
      out.warmup_divergences += run.chains[c].warmup_divergences;
    }
  }
  return merged;
}

}  // namespace

FitDiagnostics compute_diagnostics(const PosteriorDraws& draws) {
  FitDiagnostics d;
  d.converged = true;
  for (std::size_t p = 0; p < draws.names.size(); ++p) {
    const auto traces = draws.traces(p);
    RhatEntry e;
    e.parameter = draws.names[p];
    e.rhat = rhat(traces);
    e.mcse = mcse_chain_means(traces);
    if (e.rhat && traces.front().size() >= 4) e.ess = effective_sample_size(traces);
    if (!e.rhat || !(*e.rhat < kRhatThreshold)) d.converged = false;
    d.rhat.push_back(std::move(e));
  }
  d.divergences = draws.divergences();
  return d;
}

PosteriorFit fit(const FitRequest& request) {
  if (!request.data) throw ConfigError("fit request has no dataset");
  request.sampler.validate();
  const auto t0 = std::chrono::steady_clock::now();

  PosteriorFit out;
  out.mode = request.mode;
  out.setting = request.setting;
  out.spec = request.spec ? *request.spec : CovariateSpec::defaults(request.setting);
  out.spec.validate();
  out.sampler = request.sampler;
  out.icsi_rate = icsi_share(*request.data);

  auto [data, standardization] = standardize(*request.data, kAgeCovariates);
  out.standardization = standardization;
  const auto design = build_design(data, out.spec);
  out.derived = design.derived;
  auto model_data = std::make_shared<const ModelData>(ModelData::build(data, design));

  if (request.mode == FitMode::joint) {
    JointPosterior model(model_data);
    out.draws = run_chains(model, request.sampler, checked_projection(model), model.parameter_names().names());
    out.diagnostics = compute_diagnostics(out.draws);
    out.diagnostics.divergences_by_run.emplace_back("joint", out.draws.divergences());
  } else {
    std::vector<PosteriorDraws> runs;
    std::vector<std::pair<std::string, std::size_t>> by_run;
    for (auto s : kAllSubmodels) {
      SeparatePosterior model(s, model_data);
      SamplerConfig cfg = request.sampler;
      cfg.seed = derive_seed(request.sampler.seed, "separate", index(s));
      runs.push_back(run_chains(model, cfg, checked_projection(model), model.parameter_names().names()));
      by_run.emplace_back(std::string(submodel_code(s)), runs.back().divergences());
    }
    ParameterNames layout;
    layout.widths = model_data->widths();
    layout.include_corr = false;
    out.draws = merge_separate(runs, layout);
    out.diagnostics = compute_diagnostics(out.draws);
    out.diagnostics.divergences_by_run = by_run;
  }
  out.diagnostics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string covariate_display(const std::string& column) {
  if (column == "intercept") return "Intercept";
  const auto parsed = parse_covariates(column);
  return parsed.size() == 1 ? std::string(covariate_label(parsed.front())) : column;
}

}  // namespace

std::vector<SummaryRow> summarize(const PosteriorFit& fit) {
  const auto layout = fit.layout();
  std::vector<SummaryRow> rows;
  auto add = [&](std::string submodel, const std::string& name, std::string label, double scale) {
    const auto k = fit.draws.find(name);
    if (!k) return;
    auto values = fit.draws.pooled(*k);
    for (double& v : values) v /= scale;
    const auto ci = stats::central_interval(std::move(values));
    rows.push_back({std::move(submodel), name, std::move(label), ci.median, ci.lo, ci.hi});
  };
  for (auto s : kAllSubmodels) {
    const std::string code(submodel_code(s));
    if (is_ordinal(s)) {
      for (int k = 1; k <= 3; ++k) {
        add(code, "alpha_" + code + "[" + std::to_string(k) + "]", "Intercept k=" + std::to_string(k), 1.0);
      }
    }
    const auto columns = design_columns(s, fit.spec);
    for (std::size_t j = 0; j < columns.size() && j < layout.widths[index(s)]; ++j) {
      const bool age_like = columns[j] == "age" || columns[j] == "partner_age";
      const double scale = age_like ? fit.standardization.sd_of(columns[j]) : 1.0;
      add(code, "beta_" + code + "[" + std::to_string(j + 1) + "]", covariate_display(columns[j]), scale);
    }
    if (has_scale(s)) {
      add(code, "theta[" + std::to_string(index(s) + 1) + "]", "Latent scale", 1.0);
    }
  }
  for (int k = 0; k < kNumCorrelations; ++k) {
    const auto [i, j] = correlation_position(k);
    const std::string label = "Correlation (" + std::string(submodel_code(kAllSubmodels[static_cast<std::size_t>(i)])) +
                              "," + std::string(submodel_code(kAllSubmodels[static_cast<std::size_t>(j)])) + ")";
    add("latent", "eta[" + std::to_string(k + 1) + "]", label, 1.0);
  }
  return rows;
}

void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "submodel,parameter,median,lo,hi\n";
  for (const auto& r : rows) {
    out << r.submodel << ',' << r.parameter << ',' << csv::format_double(r.median) << ','
        << csv::format_double(r.lo) << ',' << csv::format_double(r.hi) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

void write_rhat_table(const FitDiagnostics& diagnostics, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "parameter,rhat,mcse,ess\n";
  for (const auto& e : diagnostics.rhat) {
    out << e.parameter << ',' << (e.rhat ? csv::format_double(*e.rhat) : std::string()) << ','
        << csv::format_double(e.mcse) << ',' << csv::format_double(e.ess) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kFitFormatVersion = 1;

}  // namespace

void save_fit(const PosteriorFit& fit, const std::filesystem::path& dir) {
  write_draws(fit.draws, fit.sampler, dir / "draws.csv");
  json j;
  j["format_version"] = kFitFormatVersion;
  j["mode"] = std::string(fit_mode_name(fit.mode));
  j["setting"] = std::string(setting_name(fit.setting));
  j["covariates"] = spec_json(fit.spec);
  j["standardization"] = standardization_json(fit.standardization);
  j["derived"] = standardization_json(fit.derived);
  j["icsi_rate"] = fit.icsi_rate;
  j["converged"] = fit.diagnostics.converged;
  j["divergences"] = fit.diagnostics.divergences;
  auto out = csv::open_output(dir / "fit.json");
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + (dir / "fit.json").string());
}

PosteriorFit load_fit(const std::filesystem::path& dir) {
  const auto meta_path = dir / "fit.json";
  std::ifstream in(meta_path);
  if (!in) throw Error("missing fit artifact " + meta_path.string());
  PosteriorFit fit;
  try {
    const auto j = json::parse(in);
    if (j.value("format_version", -1) != kFitFormatVersion) {
      throw Error("fit artifact " + meta_path.string() + " has an unsupported format version");
    }
    fit.mode = parse_fit_mode(j.at("mode").get<std::string>());
    fit.setting = parse_setting(j.at("setting").get<std::string>());
    fit.spec = spec_from_json(j.at("covariates"));
    fit.standardization = standardization_from_json(j.at("standardization"));
    fit.derived = standardization_from_json(j.at("derived"));
    fit.icsi_rate = j.at("icsi_rate").get<double>();
    fit.diagnostics.converged = j.value("converged", false);
  } catch (const json::exception& e) {
    throw Error("malformed fit artifact " + meta_path.string() + ": " + e.what());
  }
  fit.draws = read_draws(dir / "draws.csv");
  fit.diagnostics = compute_diagnostics(fit.draws);
  return fit;
}

}  // namespace ivf
