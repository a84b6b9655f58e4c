#pragma once

#include "ivf/log_density.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ivf {

struct SamplerConfig {
  std::size_t n_chains = 3;
  std::size_t n_iterations = 2000;        // warm-up included
  std::optional<std::size_t> n_warmup;    // default n_iterations / 2
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::size_t threads = 0;                // 0: one per chain, capped by the hardware
  double init_radius = 2.0;               // inits uniform on (-r, r)

  std::size_t warmup() const noexcept { return n_warmup.value_or(n_iterations / 2); }
  std::size_t draws_per_chain() const noexcept { return n_iterations - warmup(); }
  // Throws ConfigError.
  void validate() const;
};

struct TransitionStats {
  double accept_stat = 0.0;
  double step_size = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
};

struct ChainDraws {
  Eigen::MatrixXd values;  // post-warmup iteration x parameter
  std::vector<TransitionStats> stats;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  std::size_t divergences = 0;         // post-warmup
  std::size_t warmup_divergences = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<ChainDraws> chains;

  std::size_t num_parameters() const noexcept { return names.size(); }
  std::size_t draws_per_chain() const noexcept {
    return chains.empty() ? 0 : static_cast<std::size_t>(chains.front().values.rows());
  }
  std::size_t total_draws() const noexcept { return chains.size() * draws_per_chain(); }
  std::size_t divergences() const noexcept;
  std::optional<std::size_t> find(const std::string& name) const;
  // Per-chain traces of one parameter.
  std::vector<std::vector<double>> traces(std::size_t parameter) const;
  // All draws of one parameter, chains concatenated.
  std::vector<double> pooled(std::size_t parameter) const;
  // Row `draw` of the chain-concatenated draw matrix.
  Eigen::VectorXd draw(std::size_t draw) const;
};

// Maps an unconstrained position to the recorded (named, constrained) values.
using Projection = std::function<Eigen::VectorXd(const Eigen::VectorXd& q)>;

// Multi-chain NUTS with multinomial trajectory sampling, step size tuned by
// dual averaging and a diagonal metric from windowed variance estimates. Chain
// c uses the substream ("chain", c) of config.seed; results do not depend on
// the number of threads.
PosteriorDraws run_chains(const LogDensity& target, const SamplerConfig& config, const Projection& project,
                          const std::vector<std::string>& names);
// Records q itself, named q[1], q[2], ...
PosteriorDraws run_chains(const LogDensity& target, const SamplerConfig& config);

// Potential scale reduction sqrt(((n-1)/n W + B/n) / W); nullopt when W = 0.
std::optional<double> rhat(const std::vector<std::vector<double>>& chains);
// Monte Carlo standard error from the spread of chain means.
double mcse_chain_means(const std::vector<std::vector<double>>& chains);
// Multi-chain effective sample size from autocorrelations truncated by Geyer's
// initial monotone sequence. Equals the total draw count for independent draws.
double effective_sample_size(const std::vector<std::vector<double>>& chains);
// Monte Carlo standard error of the pooled p-quantile, from the effective
// sample size of the indicator draw <= quantile.
double mcse_quantile(const std::vector<std::vector<double>>& chains, double p);

// Long format: chain,iteration,parameter,value (1-based chain and iteration).
void export_traces(const PosteriorDraws& draws, const std::filesystem::path& path);
PosteriorDraws read_traces(const std::filesystem::path& path);

inline constexpr int kDrawsFormatVersion = 1;

// Matrix CSV (chain,iteration,<names...>) plus `<path>.json` with the seed,
// sampler configuration and divergence counts.
void write_draws(const PosteriorDraws& draws, const SamplerConfig& config, const std::filesystem::path& path);
// Throws Error when the sidecar is missing or its format version differs.
PosteriorDraws read_draws(const std::filesystem::path& path);

}  // namespace ivf
