#include "ivf/commands.hpp"
#include "ivf/error.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> setting;
  std::optional<std::string> denominator;
  bool include_random_effects = false;
  std::optional<std::size_t> draws;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool allow_nonconverged = false;
};

ivf::RunConfig effective_config(const Overrides& o) {
  ivf::RunConfig c = o.config_path.empty() ? ivf::RunConfig{} : ivf::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.model.mode = ivf::parse_fit_mode(*o.mode);
  if (o.setting) {
    const auto s = ivf::parse_setting(*o.setting);
    if (s != c.model.setting) c.model.covariates.reset();
    c.model.setting = s;
  }
  if (o.denominator) c.predict.denominator = ivf::parse_denominator(*o.denominator);
  if (o.include_random_effects) c.predict.include_random_effects = true;
  if (o.draws) c.predict.n_draws = *o.draws;
  if (o.out) c.output.directory = *o.out;
  if (o.threads) c.sampler.threads = *o.threads;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint Bayesian model of staged IVF outcomes: simulate, fit, predict, evaluate, diagnose"};
  app.require_subcommand(1);
  Overrides o;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--out", o.out, "Output directory");
  };
  const auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--mode", o.mode, "separate or joint")->check(CLI::IsMember({"separate", "joint"}));
    cmd->add_option("--setting", o.setting, "pretreatment or dynamic")
        ->check(CLI::IsMember({"pretreatment", "dynamic"}));
  };
  const auto add_predict = [&](CLI::App* cmd) {
    cmd->add_option("--denominator", o.denominator, "per_cycle_started or conditional_on_stage")
        ->check(CLI::IsMember({"per_cycle_started", "conditional_on_stage", "conditional"}));
    cmd->add_flag("--include-random-effects", o.include_random_effects, "Draw patient effects for O, M, E, F");
    cmd->add_option("--draws", o.draws, "Posterior draws used for prediction")->check(CLI::PositiveNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "Simulate a synthetic cohort from the ground truth");
  add_common(simulate);
  auto* fit = app.add_subcommand("fit", "Fit separate or joint models");
  add_common(fit);
  add_model(fit);
  fit->add_flag("--allow-nonconverged", o.allow_nonconverged, "Exit 0 even when the Rhat gate fails");
  fit->add_option("--threads", o.threads, "Sampler threads (0: one per chain)");
  auto* predict = app.add_subcommand("predict", "Posterior predictive simulation");
  add_common(predict);
  add_model(predict);
  add_predict(predict);
  auto* evaluate = app.add_subcommand("evaluate", "RMSE, AUC and prevalence metrics");
  add_common(evaluate);
  add_model(evaluate);
  add_predict(evaluate);
  auto* diagnose = app.add_subcommand("diagnose", "Trace export and Rhat table");
  add_common(diagnose);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = effective_config(o);
    if (simulate->parsed()) return ivf::cmd_simulate(config, std::cout);
    if (fit->parsed()) return ivf::cmd_fit(config, {o.allow_nonconverged}, std::cout);
    if (predict->parsed()) return ivf::cmd_predict(config, std::cout);
    if (evaluate->parsed()) return ivf::cmd_evaluate(config, std::cout);
    if (diagnose->parsed()) return ivf::cmd_diagnose(config, std::cout);
  } catch (const ivf::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
