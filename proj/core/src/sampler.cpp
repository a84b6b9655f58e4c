#include "ivf/sampler.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/random.hpp"
#include "ivf/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

namespace ivf {

using Eigen::VectorXd;

void SamplerConfig::validate() const {
  if (n_chains < 2) throw ConfigError("sampler: n_chains must be at least 2");
  if (n_iterations < 1) throw ConfigError("sampler: n_iterations must be positive");
  if (warmup() >= n_iterations) throw ConfigError("sampler: n_warmup must be smaller than n_iterations");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("sampler: target_accept must lie in (0, 1)");
  if (max_tree_depth < 1 || max_tree_depth > 20) throw ConfigError("sampler: max_tree_depth must lie in 1..20");
  if (!(init_radius >= 0.0)) throw ConfigError("sampler: init_radius must be non-negative");
}

std::size_t PosteriorDraws::divergences() const noexcept {
  std::size_t n = 0;
  for (const auto& c : chains) n += c.divergences;
  return n;
}

std::optional<std::size_t> PosteriorDraws::find(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<std::vector<double>> PosteriorDraws::traces(std::size_t parameter) const {
  std::vector<std::vector<double>> out;
  for (const auto& c : chains) {
    const auto col = c.values.col(static_cast<Eigen::Index>(parameter));
    out.emplace_back(col.data(), col.data() + col.size());
  }
  return out;
}

std::vector<double> PosteriorDraws::pooled(std::size_t parameter) const {
  std::vector<double> out;
  out.reserve(total_draws());
  for (const auto& c : chains) {
    const auto col = c.values.col(static_cast<Eigen::Index>(parameter));
    out.insert(out.end(), col.data(), col.data() + col.size());
  }
  return out;
}

VectorXd PosteriorDraws::draw(std::size_t d) const {
  const auto per = draws_per_chain();
  const auto& c = chains.at(d / per);
  return c.values.row(static_cast<Eigen::Index>(d % per)).transpose();
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct PhasePoint {
  VectorXd q, p, grad;
  double log_p = 0.0;
};

class DualAveraging {
 public:
  DualAveraging(double delta) : delta_(delta) {}
  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  double learn(double adapt_stat) {
    ++counter_;
    adapt_stat = std::min(1.0, adapt_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - adapt_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / kGamma;
    const double x_eta = std::pow(counter_, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  double counter_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Welford accumulator over windows of warm-up draws.
class VarianceWindows {
 public:
  VarianceWindows(std::size_t dim, std::size_t num_warmup) : num_warmup_(num_warmup), mean_(VectorXd::Zero(dim)), m2_(VectorXd::Zero(dim)) {
    if (num_warmup < 20) {
      init_buffer_ = num_warmup;  // no metric adaptation
      term_buffer_ = 0;
      window_ = 0;
      enabled_ = false;
    } else if (init_buffer_ + window_ + term_buffer_ > num_warmup) {
      init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(num_warmup));
      term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(num_warmup));
      window_ = num_warmup - (init_buffer_ + term_buffer_);
    }
    next_window_ = init_buffer_ + window_ - 1;
  }

  // Returns true when a window closed and `inv_metric` was updated.
  bool learn(VectorXd& inv_metric, const VectorXd& q) {
    if (!enabled_) {
      ++counter_;
      return false;
    }
    if (in_window()) add(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(n_);
      const VectorXd var = m2_ / (n - 1.0);
      inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
      n_ = 0;
      mean_.setZero();
      m2_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ && counter_ != num_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != num_warmup_; }
  void compute_next_window() {
    if (next_window_ == num_warmup_ - term_buffer_ - 1) return;
    window_ *= 2;
    next_window_ = counter_ + window_;
    if (next_window_ != num_warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_;
      if (boundary >= num_warmup_ - term_buffer_) next_window_ = num_warmup_ - term_buffer_ - 1;
    }
  }
  void add(const VectorXd& q) {
    ++n_;
    const VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  std::size_t num_warmup_;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t window_ = 25;
  std::size_t next_window_ = 0;
  std::size_t counter_ = 0;
  bool enabled_ = true;
  std::size_t n_ = 0;
  VectorXd mean_, m2_;
};

class Nuts {
 public:
  Nuts(const LogDensity& target, const SamplerConfig& config, Rng& rng)
      : target_(target), max_depth_(config.max_tree_depth), rng_(rng) {
    inv_metric_ = VectorXd::Ones(static_cast<Eigen::Index>(target.dimension()));
  }

  double step_size = 1.0;
  VectorXd& inv_metric() { return inv_metric_; }

  void set_position(const VectorXd& q) {
    z_.q = q;
    update_gradient(z_);
  }
  const PhasePoint& point() const { return z_; }

  void init_step_size() {
    const PhasePoint z_init = z_;
    sample_momentum(z_);
    double h0 = hamiltonian(z_);
    leapfrog(z_, step_size);
    double delta_h = h0 - finite_or_inf(hamiltonian(z_));
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (int guard = 0; guard < 200; ++guard) {
      z_ = z_init;
      sample_momentum(z_);
      h0 = hamiltonian(z_);
      leapfrog(z_, step_size);
      delta_h = h0 - finite_or_inf(hamiltonian(z_));
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      step_size = direction == 1 ? 2.0 * step_size : 0.5 * step_size;
      if (step_size > 1e7) throw NumericalError("step size diverged to infinity during initialization");
      if (step_size == 0.0) throw NumericalError("step size collapsed to zero during initialization");
    }
    z_ = z_init;
  }

  TransitionStats transition() {
    sample_momentum(z_);
    const double h0 = hamiltonian(z_);
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    VectorXd p_fwd_fwd = z_.p, p_sharp_fwd_fwd = sharp(z_.p);
    VectorXd p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp_fwd_fwd;
    VectorXd p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp_fwd_fwd;
    VectorXd p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp_fwd_fwd;
    VectorXd rho = z_.p;
    double log_sum_weight = 0.0;
    int depth = 0;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    const auto dim = z_.q.size();

    while (depth < max_depth_) {
      VectorXd rho_fwd = VectorXd::Zero(dim), rho_bck = VectorXd::Zero(dim);
      bool valid;
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      if (rng_.uniform() > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0, 1.0,
                           log_sum_weight_subtree);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0, -1.0,
                           log_sum_weight_subtree);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;
      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    z_ = z_sample;
    TransitionStats st;
    st.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / n_leapfrog_ : 0.0;
    st.step_size = step_size;
    st.tree_depth = depth;
    st.n_leapfrog = n_leapfrog_;
    st.divergent = divergent_;
    st.energy = hamiltonian(z_);
    return st;
  }

 private:
  static double finite_or_inf(double h) { return std::isnan(h) ? std::numeric_limits<double>::infinity() : h; }

  void update_gradient(PhasePoint& z) const {
    z.log_p = target_.log_density_gradient(z.q, z.grad);
    if (!std::isfinite(z.log_p)) z.log_p = -std::numeric_limits<double>::infinity();
  }

  void sample_momentum(PhasePoint& z) {
    z.p.resize(z.q.size());
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = rng_.normal() / std::sqrt(inv_metric_(i));
  }

  double hamiltonian(const PhasePoint& z) const {
    return -z.log_p + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
  }

  VectorXd sharp(const VectorXd& p) const { return inv_metric_.cwiseProduct(p); }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    update_gradient(z);
    if (z.grad.allFinite()) z.p += 0.5 * eps * z.grad;
  }

  static bool criterion(const VectorXd& p_sharp_minus, const VectorXd& p_sharp_plus, const VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, VectorXd& p_sharp_beg, VectorXd& p_sharp_end, VectorXd& rho,
                  VectorXd& p_beg, VectorXd& p_end, double h0, double sign, double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(z_, sign * step_size);
      ++n_leapfrog_;
      const double h = finite_or_inf(hamiltonian(z_));
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob_ += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = sharp(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }
    const auto dim = z_.q.size();
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    VectorXd p_init_end(dim), p_sharp_init_end(dim), rho_init = VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    log_sum_weight_init)) {
      return false;
    }
    PhasePoint z_propose_final = z_;
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    VectorXd p_final_beg(dim), p_sharp_final_beg(dim), rho_final = VectorXd::Zero(dim);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, log_sum_weight_final)) {
      return false;
    }
    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }
    const VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  const LogDensity& target_;
  int max_depth_;
  Rng& rng_;
  VectorXd inv_metric_;
  PhasePoint z_;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
};

ChainDraws run_one_chain(const LogDensity& target, const SamplerConfig& config, const Projection& project,
                         std::size_t n_names, std::size_t chain) {
  Rng rng(config.seed, "chain", chain);
  const auto dim = static_cast<Eigen::Index>(target.dimension());
  Nuts nuts(target, config, rng);

  VectorXd q(dim);
  bool initialized = false;
  for (int attempt = 0; attempt < 100 && !initialized; ++attempt) {
    for (Eigen::Index i = 0; i < dim; ++i) q(i) = rng.uniform(-config.init_radius, config.init_radius);
    VectorXd g;
    const double lp = target.log_density_gradient(q, g);
    initialized = std::isfinite(lp) && g.allFinite();
  }
  if (!initialized) {
    throw NumericalError("non-finite log density at every initial point after 100 attempts (chain " +
                         std::to_string(chain + 1) + ")");
  }
  nuts.set_position(q);
  nuts.init_step_size();

  const std::size_t n_warmup = config.warmup();
  DualAveraging adapt(config.target_accept);
  adapt.set_mu(std::log(10.0 * nuts.step_size));
  VarianceWindows windows(static_cast<std::size_t>(dim), n_warmup);

  ChainDraws out;
  const std::size_t n_draws = config.draws_per_chain();
  out.values.resize(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(n_names));
  out.stats.reserve(n_draws);

  for (std::size_t it = 0; it < n_warmup; ++it) {
    const auto st = nuts.transition();
    if (st.divergent) ++out.warmup_divergences;
    nuts.step_size = adapt.learn(st.accept_stat);
    if (windows.learn(nuts.inv_metric(), nuts.point().q)) {
      nuts.init_step_size();
      adapt.set_mu(std::log(10.0 * nuts.step_size));
      adapt.restart();
    }
  }
  if (n_warmup > 0) {
    if (out.warmup_divergences == n_warmup) {
      throw NumericalError("every warm-up transition diverged (chain " + std::to_string(chain + 1) + ")");
    }
    nuts.step_size = adapt.final_step();
  }
  for (std::size_t it = 0; it < n_draws; ++it) {
    const auto st = nuts.transition();
    if (st.divergent) ++out.divergences;
    out.stats.push_back(st);
    const VectorXd v = project(nuts.point().q);
    if (static_cast<std::size_t>(v.size()) != n_names) throw Error("projection returned the wrong number of values");
    out.values.row(static_cast<Eigen::Index>(it)) = v.transpose();
  }
  out.step_size = nuts.step_size;
  out.inv_metric = nuts.inv_metric();
  return out;
}

}  // namespace

PosteriorDraws run_chains(const LogDensity& target, const SamplerConfig& config, const Projection& project,
                          const std::vector<std::string>& names) {
  config.validate();
  PosteriorDraws draws;
  draws.names = names;
  draws.chains.resize(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);

  std::size_t n_threads = config.threads;
  if (n_threads == 0) n_threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, config.n_chains);

  auto work = [&](std::size_t worker) {
    for (std::size_t c = worker; c < config.n_chains; c += n_threads) {
      try {
        draws.chains[c] = run_one_chain(target, config, project, names.size(), c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (n_threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return draws;
}

PosteriorDraws run_chains(const LogDensity& target, const SamplerConfig& config) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < target.dimension(); ++i) names.push_back("q[" + std::to_string(i + 1) + "]");
  return run_chains(target, config, [](const VectorXd& q) { return q; }, names);
}

// ---------------------------------------------------------------------------

std::optional<double> rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw Error("rhat requires at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw Error("rhat requires at least two draws per chain");
  for (const auto& c : chains) {
    if (c.size() != n) throw Error("rhat requires chains of equal length");
  }
  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= nn;
    double ss = 0.0;
    for (double v : c) ss += (v - mean) * (v - mean);
    w += ss / (nn - 1.0);
    means.push_back(mean);
  }
  w /= m;
  if (!(w > 0.0)) return std::nullopt;
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= m;
  double b = 0.0;
  for (double v : means) b += (v - grand) * (v - grand);
  b *= nn / (m - 1.0);
  return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

double mcse_chain_means(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw Error("Monte Carlo standard error requires at least two chains");
  std::vector<double> means;
  for (const auto& c : chains) {
    double s = 0.0;
    for (double v : c) s += v;
    means.push_back(s / static_cast<double>(c.size()));
  }
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= static_cast<double>(means.size());
  double ss = 0.0;
  for (double v : means) ss += (v - grand) * (v - grand);
  const double var = ss / (static_cast<double>(means.size()) - 1.0);
  return std::sqrt(var / static_cast<double>(means.size()));
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) throw Error("effective sample size requires four draws per chain");
  const std::size_t n = chains.front().size();
  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);
  std::vector<std::vector<double>> centred;
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    if (c.size() != n) throw Error("effective sample size requires chains of equal length");
    const double mean = stats::mean(c);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = c[i] - mean;
    double ss = 0.0;
    for (double v : d) ss += v * v;
    w += ss / (nn - 1.0);
    means.push_back(mean);
    centred.push_back(std::move(d));
  }
  w /= m;
  const double b_over_n = chains.size() > 1 ? stats::variance(means) : 0.0;
  const double var_plus = (nn - 1.0) / nn * w + b_over_n;
  if (!(var_plus > 0.0)) return m * nn;

  // Chain-averaged autocovariance at lag t (biased, divisor n).
  const auto rho = [&](std::size_t t) {
    double acov = 0.0;
    for (const auto& d : centred) {
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += d[i] * d[i + t];
      acov += s / nn;
    }
    acov /= m;
    return 1.0 - (w - acov) / var_plus;
  };

  double tau = -1.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous_pair);
    previous_pair = pair;
    tau += 2.0 * pair;
  }
  const double total = m * nn;
  return std::min(total / std::max(tau, 1.0 / std::log10(total)), total * std::log10(total));
}

double mcse_quantile(const std::vector<std::vector<double>>& chains, double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("quantile level must lie in (0, 1)");
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::sort(pooled.begin(), pooled.end());
  const double q = stats::quantile_sorted(pooled, p);
  std::vector<std::vector<double>> indicator;
  for (const auto& c : chains) {
    std::vector<double> ind(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) ind[i] = c[i] <= q ? 1.0 : 0.0;
    indicator.push_back(std::move(ind));
  }
  const double ess = effective_sample_size(indicator);
  const double sd = std::sqrt(p * (1.0 - p) / ess);
  const double lo = stats::quantile_sorted(pooled, std::max(p - 2.0 * sd, 0.0));
  const double hi = stats::quantile_sorted(pooled, std::min(p + 2.0 * sd, 1.0));
  return (hi - lo) / 4.0;
}

// ---------------------------------------------------------------------------

void export_traces(const PosteriorDraws& draws, const std::filesystem::path& path) {
  if (draws.chains.empty() || draws.draws_per_chain() == 0) throw Error("no draws to export");
  auto out = csv::open_output(path);
  out << "chain,iteration,parameter,value\n";
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const auto& v = draws.chains[c].values;
    for (Eigen::Index it = 0; it < v.rows(); ++it) {
      for (std::size_t p = 0; p < draws.names.size(); ++p) {
        out << c + 1 << ',' << it + 1 << ',' << draws.names[p] << ','
            << csv::format_double(v(it, static_cast<Eigen::Index>(p))) << '\n';
      }
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

PosteriorDraws read_traces(const std::filesystem::path& path) {
  csv::Reader reader(path);
  reader.require_header({"chain", "iteration", "parameter", "value"});
  struct Entry {
    std::size_t chain, iteration, parameter;
    double value;
  };
  std::vector<Entry> entries;
  std::map<std::string, std::size_t> name_index;
  PosteriorDraws draws;
  std::size_t n_chains = 0, n_iter = 0;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto row = reader.row();
    const auto chain = static_cast<std::size_t>(csv::parse_int(f[0], row, "chain"));
    const auto iter = static_cast<std::size_t>(csv::parse_int(f[1], row, "iteration"));
    if (chain < 1 || iter < 1) throw DataError("chain and iteration are 1-based", row);
    auto [it, inserted] = name_index.try_emplace(f[2], draws.names.size());
    if (inserted) draws.names.push_back(f[2]);
    entries.push_back({chain - 1, iter - 1, it->second, csv::parse_double(f[3], row, "value")});
    n_chains = std::max(n_chains, chain);
    n_iter = std::max(n_iter, iter);
  }
  draws.chains.resize(n_chains);
  for (auto& c : draws.chains) {
    c.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_iter),
                                         static_cast<Eigen::Index>(draws.names.size()),
                                         std::numeric_limits<double>::quiet_NaN());
  }
  for (const auto& e : entries) {
    draws.chains[e.chain].values(static_cast<Eigen::Index>(e.iteration), static_cast<Eigen::Index>(e.parameter)) =
        e.value;
  }
  for (const auto& c : draws.chains) {
    if (c.values.hasNaN()) throw DataError("trace file " + path.string() + " has missing entries");
  }
  return draws;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

}  // namespace

void write_draws(const PosteriorDraws& draws, const SamplerConfig& config, const std::filesystem::path& path) {
  {
    auto out = csv::open_output(path);
    out << "chain,iteration";
    for (const auto& n : draws.names) out << ',' << n;
    out << '\n';
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
      const auto& v = draws.chains[c].values;
      for (Eigen::Index it = 0; it < v.rows(); ++it) {
        out << c + 1 << ',' << it + 1;
        for (Eigen::Index p = 0; p < v.cols(); ++p) out << ',' << csv::format_double(v(it, p));
        out << '\n';
      }
    }
    if (!out) throw Error("failed writing " + path.string());
  }
  nlohmann::ordered_json meta;
  meta["format_version"] = kDrawsFormatVersion;
  meta["seed"] = config.seed;
  meta["n_chains"] = config.n_chains;
  meta["n_iterations"] = config.n_iterations;
  meta["n_warmup"] = config.warmup();
  meta["target_accept"] = config.target_accept;
  meta["max_tree_depth"] = config.max_tree_depth;
  meta["n_parameters"] = draws.names.size();
  meta["divergences"] = draws.divergences();
  auto chains = nlohmann::ordered_json::array();
  for (const auto& c : draws.chains) {
    nlohmann::ordered_json j;
    j["step_size"] = c.step_size;
    j["divergences"] = c.divergences;
    j["warmup_divergences"] = c.warmup_divergences;
    chains.push_back(j);
  }
  meta["chains"] = chains;
  auto out = csv::open_output(sidecar_path(path));
  out << meta.dump(2) << '\n';
}

PosteriorDraws read_draws(const std::filesystem::path& path) {
  const auto meta_path = sidecar_path(path);
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw Error("missing draws metadata " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed draws metadata " + meta_path.string() + ": " + e.what());
  }
  const int version = meta.value("format_version", -1);
  if (version != kDrawsFormatVersion) {
    throw Error("draws file " + path.string() + " has format version " + std::to_string(version) + ", expected " +
                std::to_string(kDrawsFormatVersion));
  }
  csv::Reader reader(path);
  const auto& header = reader.header();
  if (header.size() < 3 || header[0] != "chain" || header[1] != "iteration") {
    throw DataError("draws file " + path.string() + " lacks the chain,iteration columns");
  }
  PosteriorDraws draws;
  draws.names.assign(header.begin() + 2, header.end());
  std::vector<std::vector<std::vector<double>>> rows;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const auto row = reader.row();
    const auto chain = static_cast<std::size_t>(csv::parse_int(f[0], row, "chain"));
    if (chain < 1) throw DataError("chain is 1-based", row);
    if (rows.size() < chain) rows.resize(chain);
    std::vector<double> v(draws.names.size());
    for (std::size_t p = 0; p < v.size(); ++p) v[p] = csv::parse_double(f[p + 2], row, draws.names[p]);
    rows[chain - 1].push_back(std::move(v));
  }
  for (const auto& c : rows) {
    ChainDraws cd;
    cd.values.resize(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(draws.names.size()));
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t p = 0; p < c[i].size(); ++p) {
        cd.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = c[i][p];
      }
    }
    draws.chains.push_back(std::move(cd));
  }
  if (draws.chains.empty()) throw DataError("draws file " + path.string() + " is empty");
  for (const auto& c : draws.chains) {
    if (c.values.rows() != draws.chains.front().values.rows()) throw DataError("chains have unequal lengths");
  }
  if (const auto chains = meta.find("chains"); chains != meta.end() && chains->is_array() &&
                                               chains->size() == draws.chains.size()) {
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
      draws.chains[c].step_size = (*chains)[c].value("step_size", 0.0);
      draws.chains[c].divergences = (*chains)[c].value("divergences", std::size_t{0});
      draws.chains[c].warmup_divergences = (*chains)[c].value("warmup_divergences", std::size_t{0});
    }
  }
  return draws;
}

}  // namespace ivf
