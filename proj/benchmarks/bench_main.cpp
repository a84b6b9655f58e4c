#include "ivf/likelihood.hpp"
#include "ivf/predict.hpp"
#include "ivf/synth.hpp"

#include <benchmark/benchmark.h>

#include <memory>

namespace {

using namespace ivf;

std::shared_ptr<const ModelData> cohort_model_data(std::size_t n, Setting setting) {
  const auto raw = simulate_cohort(default_ground_truth(), n, 17);
  const auto [data, scaling] = standardize(raw, {"age", "partner_age"});
  const auto design = build_design(data, setting);
  return std::make_shared<ModelData>(ModelData::build(data, design));
}

Eigen::VectorXd random_point(std::size_t dim) {
  Rng rng(3);
  Eigen::VectorXd q(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.uniform(-0.5, 0.5);
  return q;
}

void BM_JointLogDensity(benchmark::State& state) {
  const auto md = cohort_model_data(static_cast<std::size_t>(state.range(0)), Setting::pretreatment);
  const JointPosterior target(md);
  const auto q = random_point(target.dimension());
  for (auto _ : state) benchmark::DoNotOptimize(target.evaluate(q, nullptr).value);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_JointLogDensity)->Arg(500)->Arg(2962)->Unit(benchmark::kMicrosecond);

void BM_JointGradient(benchmark::State& state) {
  const auto md = cohort_model_data(static_cast<std::size_t>(state.range(0)), Setting::pretreatment);
  const JointPosterior target(md);
  const auto q = random_point(target.dimension());
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(target.log_density_gradient(q, grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_JointGradient)->Arg(500)->Arg(2962)->Unit(benchmark::kMicrosecond);

void BM_DynamicJointGradient(benchmark::State& state) {
  const auto md = cohort_model_data(static_cast<std::size_t>(state.range(0)), Setting::dynamic);
  const JointPosterior target(md);
  const auto q = random_point(target.dimension());
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(target.log_density_gradient(q, grad));
}
BENCHMARK(BM_DynamicJointGradient)->Arg(500)->Unit(benchmark::kMicrosecond);

void BM_SeparateGradient(benchmark::State& state) {
  const auto md = cohort_model_data(500, Setting::pretreatment);
  const SeparatePosterior target(static_cast<Submodel>(state.range(0)), md);
  const auto q = random_point(target.dimension());
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(target.log_density_gradient(q, grad));
}
BENCHMARK(BM_SeparateGradient)->DenseRange(0, 5)->Unit(benchmark::kMicrosecond);

void BM_SimulateCohort(benchmark::State& state) {
  const auto gt = default_ground_truth();
  for (auto _ : state) {
    auto data = simulate_cohort(gt, static_cast<std::size_t>(state.range(0)), 5);
    benchmark::DoNotOptimize(data.num_embryos());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimulateCohort)->Arg(2962)->Unit(benchmark::kMillisecond);

void BM_Cascade(benchmark::State& state) {
  const auto gt = default_ground_truth();
  const CascadeModel model(gt.params, gt.spec, gt.derived);
  CascadeOptions options;
  CycleState st;
  std::uint64_t i = 0;
  for (auto _ : state) {
    Rng rng(11, "draw", i++);
    benchmark::DoNotOptimize(simulate_cascade(model, st, std::nullopt, options, rng).lbe);
  }
}
BENCHMARK(BM_Cascade);

}  // namespace
BENCHMARK_MAIN();
