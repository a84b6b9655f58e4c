#include "ivf/config.hpp"
#include "ivf/error.hpp"

#include "doctest.h"
#include "support.hpp"

using namespace ivf;

TEST_CASE("defaults") {
  const auto c = parse_config("{}");
  CHECK(c.seed == 1);
  CHECK(c.model.mode == FitMode::separate);
  CHECK(c.model.setting == Setting::pretreatment);
  CHECK(c.predict.denominator == Denominator::per_cycle_started);
  CHECK_FALSE(c.predict.include_random_effects);
  CHECK(c.synth.n_cycles == 2962);
  CHECK(c.sampler.n_chains == 3);
  CHECK(c.sampler.n_iterations == 2000);
  CHECK(c.resolve("cycles.csv") == std::filesystem::path("out") / "cycles.csv");
  CHECK(c.resolve("/abs/x.csv") == std::filesystem::path("/abs/x.csv"));
}

TEST_CASE("round trip through text") {
  auto c = parse_config(R"({"seed": 77, "model": {"mode": "joint", "setting": "dynamic"},
    "sampler": {"chains": 2, "iterations": 300, "target_accept": 0.9},
    "predict": {"denominator": "conditional_on_stage", "include_random_effects": true, "n_draws": 50},
    "synth": {"n_cycles": 120, "ground_truth": {"theta": [0.4, 0.3, 0.7, 0.7], "eta": 0}},
    "output": {"directory": "results"}})");
  CHECK(c.seed == 77);
  CHECK(c.model.mode == FitMode::joint);
  CHECK(c.sampler.target_accept == 0.9);
  CHECK(c.predict.n_draws == 50);
  CHECK(c.synth.ground_truth.params.theta[0] == 0.4);
  CHECK(c.synth.ground_truth.params.corr == Matrix6::Identity());
  const auto text = config_to_string(c);
  CHECK(config_to_string(parse_config(text)) == text);
}

TEST_CASE("unknown keys and bad values are configuration errors") {
  CHECK_THROWS_AS(parse_config(R"({"sede": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"chain": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"mode": "both"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"chains": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("command seeds are distinct substreams") {
  const auto c = parse_config(R"({"seed": 5})");
  CHECK(command_seed(c, "simulate") == derive_seed(5, "simulate"));
  CHECK(command_seed(c, "simulate") != command_seed(c, "fit"));
}

TEST_CASE("ground truth file round trip") {
  auto gt = default_ground_truth();
  gt.params.b(Submodel::D)(0) = 0.25;
  gt.abandonment_prob = 0.01;
  test::TempDir dir("config");
  write_ground_truth(gt, dir / "gt.json");
  const auto back = load_ground_truth(dir / "gt.json");
  CHECK(back.params.b(Submodel::D)(0) == 0.25);
  CHECK(back.abandonment_prob == 0.01);
  CHECK(back.params.alpha_E == gt.params.alpha_E);
  CHECK(back.params.corr.isApprox(gt.params.corr, 1e-15));
  CHECK(ground_truth_to_string(back) == ground_truth_to_string(gt));
}
