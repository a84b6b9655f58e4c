#include "ivf/config.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/random.hpp"

#include "json_io.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace ivf {

using detail::json;

namespace {

void reject_unknown(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in config section '" + std::string(section) + "'");
  }
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json truncated_json(const TruncatedNormal& d) {
  return {{"location", d.location}, {"scale", d.scale}, {"lo", d.lo}, {"hi", d.hi}};
}

TruncatedNormal truncated_from_json(const json& j) {
  reject_unknown(j, "population", {"location", "scale", "lo", "hi"});
  return {j.at("location").get<double>(), j.at("scale").get<double>(), j.at("lo").get<double>(),
          j.at("hi").get<double>()};
}

json ground_truth_json(const GroundTruth& gt) {
  json j;
  j["covariates"] = detail::spec_json(gt.spec);
  j["reference"] = detail::standardization_json(gt.reference);
  j["derived"] = detail::standardization_json(gt.derived);
  json beta = json::object();
  for (auto s : kAllSubmodels) beta[std::string(submodel_code(s))] = vector_json(gt.params.b(s));
  j["beta"] = beta;
  j["alpha_E"] = gt.params.alpha_E;
  j["alpha_F"] = gt.params.alpha_F;
  j["theta"] = gt.params.theta;
  j["eta"] = correlations(gt.params.corr);
  j["population"] = {{"age", truncated_json(gt.population.age)},
                     {"partner_age", truncated_json(gt.population.partner_age)},
                     {"attempt_probs", gt.population.attempt_probs},
                     {"icsi_prob", gt.population.icsi_prob}};
  j["abandonment_prob"] = gt.abandonment_prob;
  return j;
}

// A scalar eta fills all 15 correlations.
GroundTruth ground_truth_from_json(const json& j) {
  reject_unknown(j, "ground_truth", {"covariates", "reference", "derived", "beta", "alpha_E", "alpha_F", "theta",
                                     "eta", "population", "abandonment_prob"});
  GroundTruth gt;
  gt.spec = detail::spec_from_json(j.at("covariates"));
  gt.reference = detail::standardization_from_json(j.at("reference"));
  gt.derived = detail::standardization_from_json(j.at("derived"));
  reject_unknown(j.at("beta"), "beta", {"O", "M", "E", "F", "D", "L"});
  for (auto s : kAllSubmodels) gt.params.b(s) = vector_from_json(j.at("beta").at(std::string(submodel_code(s))));
  gt.params.alpha_E = j.at("alpha_E").get<Thresholds>();
  gt.params.alpha_F = j.at("alpha_F").get<Thresholds>();
  gt.params.theta = j.at("theta").get<std::array<double, 4>>();
  std::array<double, kNumCorrelations> eta{};
  if (j.at("eta").is_number()) {
    eta.fill(j.at("eta").get<double>());
  } else {
    eta = j.at("eta").get<std::array<double, kNumCorrelations>>();
  }
  gt.params.corr = correlation_matrix(eta);
  const auto& pop = j.at("population");
  reject_unknown(pop, "population", {"age", "partner_age", "attempt_probs", "icsi_prob"});
  gt.population.age = truncated_from_json(pop.at("age"));
  gt.population.partner_age = truncated_from_json(pop.at("partner_age"));
  gt.population.attempt_probs = pop.at("attempt_probs").get<std::array<double, 4>>();
  gt.population.icsi_prob = pop.at("icsi_prob").get<double>();
  gt.abandonment_prob = j.at("abandonment_prob").get<double>();
  gt.validate();
  return gt;
}

// Thread count is an execution resource with no effect on results, so it is
// left out of the effective config to keep that artifact thread-invariant.
json sampler_json(const SamplerConfig& s) {
  json j;
  j["chains"] = s.n_chains;
  j["iterations"] = s.n_iterations;
  j["warmup"] = s.warmup();
  j["target_accept"] = s.target_accept;
  j["max_tree_depth"] = s.max_tree_depth;
  j["init_radius"] = s.init_radius;
  return j;
}

void sampler_from_json(const json& j, SamplerConfig& s) {
  reject_unknown(j, "sampler",
                 {"chains", "iterations", "warmup", "target_accept", "max_tree_depth", "threads", "init_radius"});
  s.n_chains = j.value("chains", s.n_chains);
  s.n_iterations = j.value("iterations", s.n_iterations);
  if (j.contains("warmup")) s.n_warmup = j.at("warmup").get<std::size_t>();
  s.target_accept = j.value("target_accept", s.target_accept);
  s.max_tree_depth = j.value("max_tree_depth", s.max_tree_depth);
  s.threads = j.value("threads", s.threads);
  s.init_radius = j.value("init_radius", s.init_radius);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  json data;
  data["cycles"] = c.data.cycles.generic_string();
  data["embryos"] = c.data.embryos.generic_string();
  if (c.data.patient_cycles) data["patient_cycles"] = c.data.patient_cycles->generic_string();
  if (c.data.patient_embryos) data["patient_embryos"] = c.data.patient_embryos->generic_string();
  j["data"] = data;
  json model;
  model["mode"] = std::string(fit_mode_name(c.model.mode));
  model["setting"] = std::string(setting_name(c.model.setting));
  model["covariates"] = detail::spec_json(c.model.covariates.value_or(CovariateSpec::defaults(c.model.setting)));
  j["model"] = model;
  j["sampler"] = sampler_json(c.sampler);
  j["predict"] = {{"denominator", std::string(denominator_name(c.predict.denominator))},
                  {"include_random_effects", c.predict.include_random_effects},
                  {"n_draws", c.predict.n_draws},
                  {"stage", std::string(submodel_code(c.predict.stage))}};
  j["synth"] = {{"n_cycles", c.synth.n_cycles}, {"ground_truth", ground_truth_json(c.synth.ground_truth)}};
  j["output"] = {{"directory", c.output.directory.generic_string()}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, "top level", {"seed", "data", "model", "sampler", "predict", "synth", "output"});
  c.seed = j.value("seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"cycles", "embryos", "patient_cycles", "patient_embryos"});
    c.data.cycles = d.value("cycles", c.data.cycles.string());
    c.data.embryos = d.value("embryos", c.data.embryos.string());
    if (d.contains("patient_cycles")) c.data.patient_cycles = d.at("patient_cycles").get<std::string>();
    if (d.contains("patient_embryos")) c.data.patient_embryos = d.at("patient_embryos").get<std::string>();
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model", {"mode", "setting", "covariates"});
    if (m.contains("mode")) c.model.mode = parse_fit_mode(m.at("mode").get<std::string>());
    if (m.contains("setting")) c.model.setting = parse_setting(m.at("setting").get<std::string>());
    if (m.contains("covariates") && !m.at("covariates").is_null()) {
      c.model.covariates = detail::spec_from_json(m.at("covariates"));
    }
  }
  if (j.contains("sampler")) sampler_from_json(j.at("sampler"), c.sampler);
  if (j.contains("predict")) {
    const auto& p = j.at("predict");
    reject_unknown(p, "predict", {"denominator", "include_random_effects", "n_draws", "stage"});
    if (p.contains("denominator")) c.predict.denominator = parse_denominator(p.at("denominator").get<std::string>());
    c.predict.include_random_effects = p.value("include_random_effects", c.predict.include_random_effects);
    c.predict.n_draws = p.value("n_draws", c.predict.n_draws);
    if (p.contains("stage")) c.predict.stage = parse_submodel(p.at("stage").get<std::string>());
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    reject_unknown(s, "synth", {"n_cycles", "ground_truth"});
    c.synth.n_cycles = s.value("n_cycles", c.synth.n_cycles);
    if (s.contains("ground_truth")) {
      json gt = ground_truth_json(c.synth.ground_truth);
      gt.merge_patch(s.at("ground_truth"));
      c.synth.ground_truth = ground_truth_from_json(gt);
    }
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    reject_unknown(o, "output", {"directory"});
    c.output.directory = o.value("directory", c.output.directory.string());
  }
  c.validate();
  return c;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : output.directory / p;
}

void RunConfig::validate() const {
  sampler.validate();
  if (model.covariates) model.covariates->validate();
  if (model.covariates && model.setting == Setting::pretreatment && model.covariates->uses_outcomes()) {
    throw ConfigError("pre-treatment covariates cannot include stage outcomes");
  }
  if (predict.n_draws == 0) throw ConfigError("predict.n_draws must be positive");
  if (synth.n_cycles == 0) throw ConfigError("synth.n_cycles must be positive");
  if (output.directory.empty()) throw ConfigError("output.directory must not be empty");
  if (data.patient_cycles.has_value() != data.patient_embryos.has_value()) {
    throw ConfigError("data.patient_cycles and data.patient_embryos must be given together");
  }
  synth.ground_truth.validate();
}

std::uint64_t command_seed(const RunConfig& config, std::string_view command) {
  return derive_seed(config.seed, command);
}

RunConfig parse_config(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string config_to_string(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

void write_config(const RunConfig& config, const std::filesystem::path& path) {
  write_text(config_to_string(config), path);
}

std::string ground_truth_to_string(const GroundTruth& gt) { return ground_truth_json(gt).dump(2) + "\n"; }

GroundTruth parse_ground_truth(const std::string& text) {
  try {
    return ground_truth_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ground truth: ") + e.what());
  }
}

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  write_text(ground_truth_to_string(gt), path);
}

GroundTruth load_ground_truth(const std::filesystem::path& path) { return parse_ground_truth(read_text(path)); }

}  // namespace ivf
