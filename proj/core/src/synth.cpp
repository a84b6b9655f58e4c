#include "ivf/synth.hpp"

#include "ivf/error.hpp"
#include "ivf/likelihood.hpp"
#include "ivf/stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace ivf {

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::string format_id(std::size_t c) {
  std::string digits = std::to_string(c + 1);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "C" + digits;
}

double round_tenth(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace

void GroundTruth::validate() const {
  spec.validate();
  for (auto s : kAllSubmodels) {
    if (static_cast<std::size_t>(params.b(s).size()) != design_width(s, spec)) {
      throw ConfigError("ground truth: beta_" + std::string(submodel_code(s)) + " has " +
                        std::to_string(params.b(s).size()) + " entries, design has " +
                        std::to_string(design_width(s, spec)));
    }
  }
  try {
    params.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("ground truth: ") + e.what());
  }
  if (!(abandonment_prob >= 0.0 && abandonment_prob <= 0.1)) {
    throw ConfigError("ground truth: abandonment_prob must lie in [0, 0.1]");
  }
  double total = 0.0;
  for (double p : population.attempt_probs) {
    if (p < 0.0) throw ConfigError("ground truth: negative attempt probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("ground truth: attempt probabilities must sum to 1");
  if (!(population.icsi_prob >= 0.0 && population.icsi_prob <= 1.0)) {
    throw ConfigError("ground truth: icsi_prob must lie in [0, 1]");
  }
  for (const auto* d : {&population.age, &population.partner_age}) {
    if (!(d->scale > 0.0) || !(d->lo < d->hi)) throw ConfigError("ground truth: invalid age distribution");
  }
  for (const auto* name : {"age", "partner_age"}) {
    if (!reference.find(name)) throw ConfigError(std::string("ground truth: missing reference scale for ") + name);
  }
  if (spec.uses_outcomes()) {
    for (auto s : kAllSubmodels) {
      for (auto c : spec.columns[index(s)]) {
        if (is_outcome_covariate(c) && c != Covariate::det && !derived.find(covariate_name(c))) {
          throw ConfigError("ground truth: missing moments for outcome covariate " + std::string(covariate_name(c)));
        }
      }
    }
  }
}

GroundTruth default_ground_truth() {
  GroundTruth gt;
  const double sa = gt.population.age.scale;
  const double sp = gt.population.partner_age.scale;
  gt.reference.set("age", gt.population.age.location, sa);
  gt.reference.set("partner_age", gt.population.partner_age.location, sp);

  // Per-year slopes rescaled to standardized ages.
  auto& p = gt.params;
  p.b(Submodel::O) = vec({2.10, -0.04 * sa, 0.01 * sp, 0.06, 0.14, 0.04});
  p.b(Submodel::M) = vec({-0.95, 0.02 * sa, -0.00 * sp});
  p.b(Submodel::E) = vec({0.00 * sa, 0.01 * sp, -0.27});
  p.b(Submodel::F) = vec({-0.03 * sa, 0.01 * sp, -0.33});
  p.b(Submodel::D) = vec({0.13, 0.02 * sa, -0.01 * sp, 0.23, 0.44, 0.60});
  p.b(Submodel::L) = vec({-0.49, -0.02 * sa, -0.01 * sp});
  p.alpha_E = {-4.35, -1.38, 1.33};
  p.alpha_F = {-5.11, -2.44, -0.33};
  p.theta = {0.5, 0.3, 0.8, 0.8};
  std::array<double, kNumCorrelations> eta{};
  eta.fill(0.2);
  p.corr = correlation_matrix(eta);
  return gt;
}

ParameterSet align_to_standardization(const GroundTruth& gt, const StandardizationParams& target) {
  ParameterSet out = gt.params;
  for (auto s : kAllSubmodels) {
    double shift = 0.0;
    Eigen::Index k = has_intercept(s) ? 1 : 0;
    for (auto c : gt.spec.columns[index(s)]) {
      if (c == Covariate::age || c == Covariate::partner_age) {
        const auto name = covariate_name(c);
        const auto r = gt.reference.find(name);
        const auto t = target.find(name);
        if (!r || !t) throw ConfigError("missing standardization for " + std::string(name));
        const double b = gt.params.b(s)(k);
        out.b(s)(k) = b * target.sd[*t] / gt.reference.sd[*r];
        shift += b * (target.mean[*t] - gt.reference.mean[*r]) / gt.reference.sd[*r];
      }
      ++k;
    }
    if (has_intercept(s)) {
      out.b(s)(0) += shift;
    } else {
      for (double& a : out.alpha(s)) a -= shift;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

CascadeModel::CascadeModel(const ParameterSet& p, const CovariateSpec& s, const StandardizationParams& d)
    : params(&p), spec(&s), derived(&d), chol(build_covariance(p.theta, p.corr).chol) {}

int poisson(double rate, Rng& rng) {
  if (!(rate > 0.0)) return 0;
  std::poisson_distribution<int> dist(rate);
  return dist(rng);
}

int truncated_poisson(double rate, int upper, Rng& rng) {
  if (upper <= 0 || !(rate > 0.0)) return 0;
  const double log_rate = std::log(rate);
  std::vector<double> w(static_cast<std::size_t>(upper) + 1);
  double max_log = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= upper; ++k) {
    w[static_cast<std::size_t>(k)] = k * log_rate - std::lgamma(k + 1.0);
    max_log = std::max(max_log, w[static_cast<std::size_t>(k)]);
  }
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(v - max_log);
    total += v;
  }
  double u = rng.uniform() * total;
  for (int k = 0; k <= upper; ++k) {
    u -= w[static_cast<std::size_t>(k)];
    if (u < 0.0) return k;
  }
  return upper;
}

int ordinal_draw(const Thresholds& alpha, double linpred, Rng& rng) {
  const auto p = ordinal_category_probs(alpha, linpred);
  double u = rng.uniform();
  for (int k = 0; k < 3; ++k) {
    u -= p[static_cast<std::size_t>(k)];
    if (u < 0.0) return k + 1;
  }
  return 4;
}

double truncated_normal(const TruncatedNormal& d, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double x = d.location + d.scale * rng.normal();
    if (x >= d.lo && x <= d.hi) return x;
  }
  return std::clamp(d.location, d.lo, d.hi);
}

namespace {

double linear_predictor(const CascadeModel& m, Submodel s, const CycleState& st, bool icsi) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(design_width(s, *m.spec)));
  fill_design_row(s, *m.spec, *m.derived, st, icsi, row);
  return row.dot(m.params->b(s));
}

double clamp_exp(double t) { return std::exp(std::clamp(t, -kLinpredClamp, kLinpredClamp)); }

}  // namespace

CycleOutcome simulate_cascade(const CascadeModel& model, const CycleState& state, std::optional<bool> icsi,
                              const CascadeOptions& options, Rng& rng) {
  CycleOutcome out;
  Vector6 u;
  for (int k = 0; k < kLatentDim; ++k) u(k) = rng.normal();
  Vector6 z = model.chol.triangularView<Eigen::Lower>() * u;
  if (!options.include_random_effects) z.head<4>().setZero();
  const auto& params = *model.params;
  CycleState st = state;

  // Oocytes.
  if (st.n_oocytes) {
    out.n_oocytes = *st.n_oocytes;
  } else {
    out.n_oocytes = poisson(clamp_exp(linear_predictor(model, Submodel::O, st, false) + z(0)), rng);
    st.n_oocytes = out.n_oocytes;
  }
  if (out.n_oocytes == 0) return out;

  // Mixing and fertilisation.
  if (st.n_embryos) {
    out.mixed = true;
    out.n_embryos = *st.n_embryos;
  } else {
    if (options.abandonment_prob > 0.0 && rng.bernoulli(options.abandonment_prob)) return out;
    out.mixed = true;
    const double rate = out.n_oocytes * clamp_exp(linear_predictor(model, Submodel::M, st, false) + z(1));
    out.n_embryos = truncated_poisson(rate, out.n_oocytes, rng);
    st.n_embryos = out.n_embryos;
  }
  out.icsi = icsi ? *icsi : rng.bernoulli(options.icsi_prob);
  if (out.n_embryos == 0) return out;

  // Embryo grades.
  if (st.mean_evenness && st.mean_fragmentation) {
    out.mean_evenness = st.mean_evenness;
    out.mean_fragmentation = st.mean_fragmentation;
  } else {
    const double t_E = linear_predictor(model, Submodel::E, st, out.icsi) + z(2);
    const double t_F = linear_predictor(model, Submodel::F, st, out.icsi) + z(3);
    double sum_E = 0.0, sum_F = 0.0;
    out.grades.reserve(static_cast<std::size_t>(out.n_embryos));
    for (int e = 0; e < out.n_embryos; ++e) {
      const int g_E = ordinal_draw(params.alpha_E, t_E, rng);
      const int g_F = ordinal_draw(params.alpha_F, t_F, rng);
      out.grades.push_back({g_E, g_F});
      sum_E += g_E;
      sum_F += g_F;
    }
    out.mean_evenness = sum_E / out.n_embryos;
    out.mean_fragmentation = sum_F / out.n_embryos;
    st.mean_evenness = out.mean_evenness;
    st.mean_fragmentation = out.mean_fragmentation;
  }

  // Transfer, DET and live birth. A single embryo cannot be double-transferred.
  out.transfer = true;
  if (st.det) {
    out.det = *st.det;
  } else {
    const bool latent_positive = linear_predictor(model, Submodel::D, st, out.icsi) + z(4) >= 0.0;
    out.det = latent_positive && out.n_embryos >= 2 ? 1 : 0;
    st.det = out.det;
  }
  out.lbe = linear_predictor(model, Submodel::L, st, out.icsi) + z(5) >= 0.0 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------

Dataset simulate_cohort(const GroundTruth& gt, std::size_t n_cycles, std::uint64_t seed) {
  if (n_cycles < 1) throw ConfigError("n_cycles must be at least 1");
  gt.validate();
  const CascadeModel model(gt.params, gt.spec, gt.derived);
  CascadeOptions options;
  options.include_random_effects = true;
  options.abandonment_prob = gt.abandonment_prob;
  options.icsi_prob = gt.population.icsi_prob;

  std::vector<CycleRecord> cycles(n_cycles);
  std::vector<std::vector<EmbryoRecord>> embryos(n_cycles);
  for (std::size_t c = 0; c < n_cycles; ++c) {
    Rng rng(seed, "cycle", c);
    CycleRecord& rec = cycles[c];
    rec.cycle_id = format_id(c);
    rec.age = round_tenth(truncated_normal(gt.population.age, rng));
    rec.partner_age = round_tenth(truncated_normal(gt.population.partner_age, rng));
    double u = rng.uniform();
    rec.attempt = 4;
    for (int a = 0; a < 4; ++a) {
      u -= gt.population.attempt_probs[static_cast<std::size_t>(a)];
      if (u < 0.0) {
        rec.attempt = a + 1;
        break;
      }
    }
    CycleState st;
    st.age = gt.reference.apply("age", rec.age);
    st.partner_age = gt.reference.apply("partner_age", rec.partner_age);
    st.attempt = rec.attempt;

    const auto o = simulate_cascade(model, st, std::nullopt, options, rng);
    rec.n_oocytes = o.n_oocytes;
    rec.oocytes_mixed = o.mixed;
    if (o.mixed) rec.n_embryos = o.n_embryos;
    rec.transfer_done = o.transfer;
    if (o.transfer) {
      rec.det = o.det;
      rec.lbe = o.lbe;
    }
    for (const auto& g : o.grades) embryos[c].push_back({rec.cycle_id, g[0], g[1], o.icsi});
  }
  std::vector<EmbryoRecord> flat;
  for (auto& e : embryos) flat.insert(flat.end(), e.begin(), e.end());
  return Dataset(std::move(cycles), std::move(flat));
}

CohortSummary summarize_cohort(const Dataset& data) {
  CohortSummary s;
  std::vector<double> age, partner, oocytes, per_cycle;
  for (std::size_t c = 0; c < data.num_cycles(); ++c) {
    const auto& r = data.cycles()[c];
    ++s.cycles_started;
    s.cycles_mixed += r.oocytes_mixed ? 1 : 0;
    s.transfers += r.transfer_done ? 1 : 0;
    ++s.attempts[static_cast<std::size_t>(r.attempt - 1)];
    age.push_back(r.age);
    partner.push_back(r.partner_age);
    oocytes.push_back(r.n_oocytes.value_or(0));
    per_cycle.push_back(static_cast<double>(data.embryos_of(c).size()));
    if (r.transfer_done) {
      (*r.det == 1 ? s.double_transfers : s.single_transfers) += 1;
      s.live_births += static_cast<std::size_t>(*r.lbe);
    }
  }
  s.embryos = data.num_embryos();
  auto quartiles = [](std::vector<double> v, std::array<double, 3>& q, std::array<double, 2>& range) {
    std::sort(v.begin(), v.end());
    q = {stats::quantile_sorted(v, 0.5), stats::quantile_sorted(v, 0.25), stats::quantile_sorted(v, 0.75)};
    range = {v.front(), v.back()};
  };
  if (data.num_cycles() > 0) {
    quartiles(age, s.age, s.age_range);
    quartiles(partner, s.partner_age, s.partner_age_range);
    quartiles(oocytes, s.oocytes, s.oocytes_range);
    quartiles(per_cycle, s.embryos_per_cycle, s.embryos_per_cycle_range);
  }
  return s;
}

}  // namespace ivf
