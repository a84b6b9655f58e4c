#include "ivf/likelihood.hpp"

#include "ivf/error.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <numbers>

namespace ivf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

struct ClampedLinpred {
  double value;
  bool clamped;
};

// A zero count has log pmf -e^t, exact for any t below the clamp, so only a
// positive count is clamped from below.
ClampedLinpred clamp_count_linpred(double t, int y) {
  if (t > kLinpredClamp) return {kLinpredClamp, true};
  if (t < -kLinpredClamp && y > 0) return {-kLinpredClamp, true};
  return {t, false};
}

// log p(grade | alpha, t) and its partial derivatives.
struct OrdinalTerm {
  double logp = 0.0;
  double d_t = 0.0;
  std::array<double, 3> d_alpha{};
};

OrdinalTerm ordinal_term(int grade, const Thresholds& a, double t) {
  OrdinalTerm out;
  switch (grade) {
    case 1: {
      const double b = a[0] - t;
      out.logp = -softplus(-b);
      const double s = logistic(-b);
      out.d_alpha[0] = s;
      out.d_t = -s;
      break;
    }
    case 4: {
      const double lo = a[2] - t;
      out.logp = -softplus(lo);
      const double s = logistic(lo);
      out.d_alpha[2] = -s;
      out.d_t = s;
      break;
    }
    case 2:
    case 3: {
      const auto hi_k = static_cast<std::size_t>(grade - 1);
      const double b = a[hi_k] - t;
      const double lo = a[hi_k - 1] - t;
      const double gap = std::expm1(b - lo);
      out.logp = -softplus(-b) - softplus(lo) + std::log1p(-std::exp(lo - b));
      const double db = logistic(-b) + 1.0 / gap;
      const double dlo = -logistic(lo) - 1.0 / gap;
      out.d_alpha[hi_k] = db;
      out.d_alpha[hi_k - 1] = dlo;
      out.d_t = -(db + dlo);
      break;
    }
    default:
      throw DataError("embryo grade must be in 1..4, got " + std::to_string(grade));
  }
  return out;
}

// Standard normal truncated to the half-line selected by y relative to c
// (u >= c when y = 1, u < c when y = 0), reached from an unconstrained r via
// u = s * Phi^-1(w * Phi(s c)), w = logistic(r), s = (y ? -1 : 1). The
// density of r is P * w (1 - w) with P = Phi(s c) the probit probability.
struct TruncatedLatent {
  double u = 0.0;
  double log_p = 0.0;      // log P
  double dlogp_dc = 0.0;
  double log_jac = 0.0;    // log w (1 - w)
  double dlogjac_dr = 0.0;
  double du_dr = 0.0;
  double du_dc = 0.0;
  bool ok = true;
};

TruncatedLatent truncated_latent(double r, double c, int y) {
  TruncatedLatent out;
  const double s = y == 1 ? -1.0 : 1.0;
  const double sc = s * c;
  const double p = normal_cdf(sc);
  const double w = logistic(r);
  const double w_c = logistic(-r);
  out.log_p = normal_log_cdf(sc);
  out.log_jac = -softplus(-r) - softplus(r);
  out.dlogjac_dr = w_c - w;
  if (!(p > 0.0) || !(w > 0.0) || !(w_c > 0.0)) {
    out.ok = false;
    return out;
  }
  const double q = w * p;
  double g;
  if (q <= 0.5) {
    g = normal_quantile(q);
  } else {
    const double q_c = w_c + w * normal_cdf(-sc);
    g = -normal_quantile(q_c);
  }
  const double phi_g = normal_pdf(g);
  const double phi_c = normal_pdf(c);
  if (!std::isfinite(g) || !(phi_g > 0.0)) {
    out.ok = false;
    return out;
  }
  out.u = s * g;
  out.dlogp_dc = s * phi_c / p;
  out.du_dr = s * p * w * w_c / phi_g;
  out.du_dc = w * phi_c / phi_g;
  return out;
}

void add_normal_prior(const Eigen::VectorXd& x, double sd, double& lp, double* grad) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    lp += normal_lpdf(x(i), sd);
    if (grad) grad[i] -= x(i) / (sd * sd);
  }
}

// Maps threshold gradients onto (alpha_1, log-increment, log-increment) and
// adds the log-Jacobian gradient.
void threshold_backprop(const double* u, const std::array<double, 3>& g_alpha, double* g_u) {
  const double e1 = std::exp(u[1]);
  const double e2 = std::exp(u[2]);
  g_u[0] += g_alpha[0] + g_alpha[1] + g_alpha[2];
  g_u[1] += (g_alpha[1] + g_alpha[2]) * e1 + 1.0;
  g_u[2] += g_alpha[2] * e2 + 1.0;
}

double half_cauchy_dlog(double x, double scale) { return -2.0 * x / (scale * scale + x * x); }

}  // namespace

// ---------------------------------------------------------------------------

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_log_cdf(double x) {
  if (x > 5.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  return std::log(0.5 * std::erfc(-x * kInvSqrt2));
}

double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double poisson_log_pmf(int y, double log_rate) {
  return y * log_rate - std::exp(log_rate) - std::lgamma(static_cast<double>(y) + 1.0);
}

double oocyte_loglik(int y, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::VectorXd& beta, double z) {
  if (y < 0) throw DataError("negative oocyte count");
  return poisson_log_pmf(y, clamp_count_linpred(x.dot(beta) + z, y).value);
}

double fertilisation_loglik(int y_M, int y_O, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            const Eigen::VectorXd& beta, double z) {
  if (y_O < 1) throw DataError("fertilisation submodel requires at least one oocyte");
  if (y_M < 0) throw DataError("negative embryo count");
  return poisson_log_pmf(y_M, std::log(static_cast<double>(y_O)) + clamp_count_linpred(x.dot(beta) + z, y_M).value);
}

std::array<double, 4> ordinal_category_probs(const Thresholds& alpha, double linpred) {
  std::array<double, 4> p{};
  double prev = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double gamma = logistic(alpha[k] - linpred);
    p[k] = gamma - prev;
    prev = gamma;
  }
  p[3] = 1.0 - prev;
  return p;
}

double ordinal_loglik(int grade, const Thresholds& alpha, double linpred) {
  return ordinal_term(grade, alpha, linpred).logp;
}

double probit_collapsed_loglik(int y, double linpred) {
  return normal_log_cdf(y == 1 ? linpred : -linpred);
}

double probit_indicator_loglik(int y, double linpred, double z) {
  const bool positive = linpred + z >= 0.0;
  if (positive != (y == 1)) {
    throw NumericalError("latent value inconsistent with observed binary outcome");
  }
  return 0.0;
}

double latent_prior_logpdf(const Vector6& z, const LatentCovariance& cov) {
  const Vector6 w = cov.chol.triangularView<Eigen::Lower>().solve(z);
  const double log_det = 2.0 * cov.chol.diagonal().array().log().sum();
  return -0.5 * (kLatentDim * kLog2Pi + log_det + w.squaredNorm());
}

double normal_lpdf(double x, double sd) { return -0.5 * kLog2Pi - std::log(sd) - 0.5 * (x / sd) * (x / sd); }

double half_cauchy_lpdf(double x, double scale) {
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p((x / scale) * (x / scale));
}

double lkj_uniform_log_volume(int dim) {
  if (dim < 1) throw Error("correlation dimension must be positive");
  double log_v = 0.0;
  for (int k = 1; k <= dim - 1; ++k) {
    const double a = 1.0 + 0.5 * (dim - k - 1);
    const double log_beta = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
    log_v += (dim - k) * ((dim - k) * std::log(2.0) + log_beta);
  }
  return log_v;
}

double lkj_uniform_logpdf() { return -lkj_uniform_log_volume(kLatentDim); }

double coefficient_prior_sd(Submodel s) noexcept { return is_probit(s) ? kProbitPriorSd : kWeakPriorSd; }

double hyperprior_logpdf(const ParameterSet& params) {
  double lp = 0.0;
  for (auto s : kAllSubmodels) add_normal_prior(params.b(s), coefficient_prior_sd(s), lp, nullptr);
  for (const auto* a : {&params.alpha_E, &params.alpha_F}) {
    for (double v : *a) lp += normal_lpdf(v, kWeakPriorSd);
  }
  for (double t : params.theta) lp += half_cauchy_lpdf(t, kScalePriorScale);
  lp += lkj_uniform_logpdf();
  return lp;
}

// ---------------------------------------------------------------------------

std::array<std::size_t, kNumSubmodels> ModelData::widths() const {
  std::array<std::size_t, kNumSubmodels> w{};
  for (auto s : kAllSubmodels) w[index(s)] = static_cast<std::size_t>(X[index(s)].cols());
  return w;
}

ModelData ModelData::build(const Dataset& data, const DesignMatrices& design) {
  ModelData md;
  for (auto s : kAllSubmodels) md.X[index(s)] = design[s].X;

  const auto n = data.num_cycles();
  std::array<std::vector<int>, kNumSubmodels> row_of;
  for (auto s : {Submodel::O, Submodel::M, Submodel::D, Submodel::L}) {
    row_of[index(s)].assign(n, -1);
    const auto& units = design[s].units;
    for (std::size_t r = 0; r < units.size(); ++r) row_of[index(s)][units[r]] = static_cast<int>(r);
  }
  const auto cycles = data.cycles();
  for (auto c : design[Submodel::O].units) md.y_O.push_back(*cycles[c].n_oocytes);
  for (auto c : design[Submodel::M].units) {
    md.y_M.push_back(*cycles[c].n_embryos);
    md.log_y_O.push_back(std::log(static_cast<double>(*cycles[c].n_oocytes)));
  }
  // Embryo rows follow dataset order, which groups embryos by cycle.
  const auto embryos = data.embryos();
  if (design[Submodel::E].units.size() != embryos.size() || design[Submodel::F].units.size() != embryos.size()) {
    throw DataError("embryo design rows do not cover all embryos");
  }
  for (std::size_t r = 0; r < embryos.size(); ++r) {
    if (design[Submodel::E].units[r] != r || design[Submodel::F].units[r] != r) {
      throw DataError("embryo design rows are not in dataset order");
    }
    md.grade_E.push_back(embryos[r].evenness);
    md.grade_F.push_back(embryos[r].fragmentation);
  }
  for (auto c : design[Submodel::D].units) md.y_D.push_back(*cycles[c].det);
  for (auto c : design[Submodel::L].units) md.y_L.push_back(*cycles[c].lbe);

  for (auto c : design[Submodel::O].units) {
    Patient p;
    p.cycle = c;
    p.row_O = row_of[index(Submodel::O)][c];
    p.row_M = row_of[index(Submodel::M)][c];
    p.row_D = row_of[index(Submodel::D)][c];
    p.row_L = row_of[index(Submodel::L)][c];
    const auto [b, e] = data.embryo_range(c);
    p.embryo_begin = static_cast<int>(b);
    p.embryo_end = static_cast<int>(e);
    if (p.row_D >= 0 || p.row_L >= 0) {
      if (p.row_D < 0 || p.row_L < 0 || p.row_M < 0) throw DataError("transfer cycle missing upstream stages");
      p.level = 6;
    } else if (e > b) {
      p.level = 4;
    } else if (p.row_M >= 0) {
      p.level = 2;
    } else {
      p.level = 1;
    }
    md.patients.push_back(p);
  }
  for (auto s : {Submodel::M, Submodel::D, Submodel::L}) {
    for (auto c : design[s].units) {
      if (row_of[index(Submodel::O)][c] < 0) {
        throw DataError("cycle " + cycles[c].cycle_id + " enters submodel " + std::string(submodel_code(s)) +
                        " without an oocyte count");
      }
    }
  }
  return md;
}

// ---------------------------------------------------------------------------

double PosteriorModel::log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
  grad.resize(static_cast<Eigen::Index>(dimension()));
  const auto ev = evaluate(q, &grad);
  if (!std::isfinite(ev.value)) return -std::numeric_limits<double>::infinity();
  return ev.value;
}

double PosteriorModel::checked_log_density(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const {
  const auto ev = evaluate(q, grad);
  if (!std::isfinite(ev.value)) {
    throw NumericalError("non-finite log posterior", ev.bad_patient);
  }
  return ev.value;
}

// ---------------------------------------------------------------------------

JointPosterior::JointPosterior(std::shared_ptr<const ModelData> data) : data_(std::move(data)) {
  std::size_t k = 0;
  for (auto s : kAllSubmodels) {
    beta_offset_[index(s)] = k;
    k += static_cast<std::size_t>(data_->X[index(s)].cols());
  }
  alpha_E_offset_ = k;
  k += 3;
  alpha_F_offset_ = k;
  k += 3;
  theta_offset_ = k;
  k += 4;
  corr_offset_ = k;
  k += kNumCorrelations;
  latent_offsets_.reserve(data_->patients.size());
  for (const auto& p : data_->patients) {
    latent_offsets_.push_back(k);
    k += static_cast<std::size_t>(p.level);
  }
  dim_ = k;
}

ParameterNames JointPosterior::parameter_names() const {
  ParameterNames n;
  n.widths = data_->widths();
  return n;
}

ParameterSet JointPosterior::constrain(const Eigen::VectorXd& q) const {
  ParameterSet p;
  for (auto s : kAllSubmodels) {
    p.b(s) = q.segment(static_cast<Eigen::Index>(beta_offset_[index(s)]), data_->X[index(s)].cols());
  }
  p.alpha_E = thresholds_from_unconstrained(q.data() + alpha_E_offset_);
  p.alpha_F = thresholds_from_unconstrained(q.data() + alpha_F_offset_);
  for (std::size_t i = 0; i < 4; ++i) p.theta[i] = std::exp(q(static_cast<Eigen::Index>(theta_offset_ + i)));
  const auto cc = corr_cholesky_from_unconstrained(q.data() + corr_offset_);
  p.corr = cc.L * cc.L.transpose();
  p.corr.diagonal().setOnes();
  return p;
}

Eigen::VectorXd JointPosterior::project(const Eigen::VectorXd& q) const {
  return parameter_names().flatten(constrain(q));
}

Eigen::VectorXd JointPosterior::unconstrain(const ParameterSet& params) const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  for (auto s : kAllSubmodels) {
    if (params.b(s).size() != data_->X[index(s)].cols()) throw Error("coefficient width mismatch");
    q.segment(static_cast<Eigen::Index>(beta_offset_[index(s)]), params.b(s).size()) = params.b(s);
  }
  thresholds_to_unconstrained(params.alpha_E, q.data() + alpha_E_offset_);
  thresholds_to_unconstrained(params.alpha_F, q.data() + alpha_F_offset_);
  for (std::size_t i = 0; i < 4; ++i) q(static_cast<Eigen::Index>(theta_offset_ + i)) = std::log(params.theta[i]);
  corr_to_unconstrained(params.corr, q.data() + corr_offset_);
  return q;
}

namespace {

// Per-patient forward quantities shared by evaluate() and realized_latent().
struct PatientLatents {
  std::array<double, kLatentDim> u{};
  std::array<double, kLatentDim> v{};  // (L u)_k
  TruncatedLatent det, lbe;
  double m_D = 0.0, m_L = 0.0;
  double c_D = 0.0, c_L = 0.0;
  bool ok = true;
};

PatientLatents forward_latents(const double* q_lat, int level, const Matrix6& L, double eta_D, double eta_L,
                               int y_D, int y_L) {
  PatientLatents pl;
  const int n_free = std::min(level, 4);
  for (int k = 0; k < n_free; ++k) pl.u[static_cast<std::size_t>(k)] = q_lat[k];
  for (int k = 0; k < n_free; ++k) {
    double acc = 0.0;
    for (int i = 0; i <= k; ++i) acc += L(k, i) * pl.u[static_cast<std::size_t>(i)];
    pl.v[static_cast<std::size_t>(k)] = acc;
  }
  if (level == 6) {
    for (int i = 0; i < 4; ++i) pl.m_D += L(4, i) * pl.u[static_cast<std::size_t>(i)];
    pl.c_D = -(eta_D + pl.m_D) / L(4, 4);
    pl.det = truncated_latent(q_lat[4], pl.c_D, y_D);
    pl.u[4] = pl.det.u;
    for (int i = 0; i < 5; ++i) pl.m_L += L(5, i) * pl.u[static_cast<std::size_t>(i)];
    pl.c_L = -(eta_L + pl.m_L) / L(5, 5);
    pl.lbe = truncated_latent(q_lat[5], pl.c_L, y_L);
    pl.u[5] = pl.lbe.u;
    pl.ok = pl.det.ok && pl.lbe.ok;
    pl.v[4] = pl.m_D + L(4, 4) * pl.u[4];
    pl.v[5] = pl.m_L + L(5, 5) * pl.u[5];
  }
  return pl;
}

}  // namespace

Vector6 JointPosterior::realized_latent(const Eigen::VectorXd& q, std::size_t patient) const {
  const auto& md = *data_;
  const auto& p = md.patients.at(patient);
  const auto params = constrain(q);
  const auto cc = corr_cholesky_from_unconstrained(q.data() + corr_offset_);
  const double eta_D = p.row_D >= 0 ? md.X[index(Submodel::D)].row(p.row_D).dot(params.b(Submodel::D)) : 0.0;
  const double eta_L = p.row_L >= 0 ? md.X[index(Submodel::L)].row(p.row_L).dot(params.b(Submodel::L)) : 0.0;
  const int y_D = p.row_D >= 0 ? md.y_D[static_cast<std::size_t>(p.row_D)] : 0;
  const int y_L = p.row_L >= 0 ? md.y_L[static_cast<std::size_t>(p.row_L)] : 0;
  const auto pl = forward_latents(q.data() + latent_offsets_[patient], p.level, cc.L, eta_D, eta_L, y_D, y_L);
  Vector6 z = Vector6::Constant(std::numeric_limits<double>::quiet_NaN());
  const Vector6 scale = latent_scales(params.theta);
  const int used = p.level == 6 ? 6 : std::min(p.level, 4);
  for (int k = 0; k < used; ++k) z(k) = scale(k) * pl.v[static_cast<std::size_t>(k)];
  return z;
}

PosteriorModel::Evaluation JointPosterior::evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad_out) const {
  const auto& md = *data_;
  Evaluation ev;
  if (static_cast<std::size_t>(q.size()) != dim_) throw Error("joint posterior: wrong parameter dimension");
  Eigen::VectorXd local_grad;
  Eigen::VectorXd& grad = grad_out ? *grad_out : local_grad;
  grad.setZero(static_cast<Eigen::Index>(dim_));
  double* g = grad.data();
  double lp = 0.0;

  // Unpack and priors.
  std::array<Eigen::VectorXd, kNumSubmodels> beta;
  for (auto s : kAllSubmodels) {
    const auto off = beta_offset_[index(s)];
    beta[index(s)] = q.segment(static_cast<Eigen::Index>(off), md.X[index(s)].cols());
    add_normal_prior(beta[index(s)], coefficient_prior_sd(s), lp, g + off);
  }
  const Thresholds alpha_E = thresholds_from_unconstrained(q.data() + alpha_E_offset_);
  const Thresholds alpha_F = thresholds_from_unconstrained(q.data() + alpha_F_offset_);
  std::array<double, 3> g_alpha_E{}, g_alpha_F{};
  for (std::size_t k = 0; k < 3; ++k) {
    lp += normal_lpdf(alpha_E[k], kWeakPriorSd) + normal_lpdf(alpha_F[k], kWeakPriorSd);
    g_alpha_E[k] -= alpha_E[k] / (kWeakPriorSd * kWeakPriorSd);
    g_alpha_F[k] -= alpha_F[k] / (kWeakPriorSd * kWeakPriorSd);
  }
  lp += q(static_cast<Eigen::Index>(alpha_E_offset_ + 1)) + q(static_cast<Eigen::Index>(alpha_E_offset_ + 2));
  lp += q(static_cast<Eigen::Index>(alpha_F_offset_ + 1)) + q(static_cast<Eigen::Index>(alpha_F_offset_ + 2));

  std::array<double, 4> theta{}, g_theta{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double tau = q(static_cast<Eigen::Index>(theta_offset_ + i));
    theta[i] = std::exp(tau);
    lp += half_cauchy_lpdf(theta[i], kScalePriorScale) + tau;
    g_theta[i] += half_cauchy_dlog(theta[i], kScalePriorScale);
  }
  const auto cc = corr_cholesky_from_unconstrained(q.data() + corr_offset_);
  lp += cc.log_jacobian + lkj_uniform_logpdf();
  const Matrix6& L = cc.L;
  Matrix6 gL = Matrix6::Zero();

  std::array<Eigen::VectorXd, kNumSubmodels> eta, g_eta;
  for (auto s : kAllSubmodels) {
    eta[index(s)] = md.X[index(s)] * beta[index(s)];
    g_eta[index(s)] = Eigen::VectorXd::Zero(eta[index(s)].size());
  }
  const auto& eta_O = eta[index(Submodel::O)];
  const auto& eta_M = eta[index(Submodel::M)];
  const auto& eta_E = eta[index(Submodel::E)];
  const auto& eta_F = eta[index(Submodel::F)];
  const auto& eta_D = eta[index(Submodel::D)];
  const auto& eta_L = eta[index(Submodel::L)];

  for (std::size_t j = 0; j < md.patients.size(); ++j) {
    const auto& p = md.patients[j];
    const auto lat = latent_offsets_[j];
    const double* q_lat = q.data() + lat;
    const int n_free = std::min(p.level, 4);
    const double e_D = p.level == 6 ? eta_D(p.row_D) : 0.0;
    const double e_L = p.level == 6 ? eta_L(p.row_L) : 0.0;
    const int y_D = p.level == 6 ? md.y_D[static_cast<std::size_t>(p.row_D)] : 0;
    const int y_L = p.level == 6 ? md.y_L[static_cast<std::size_t>(p.row_L)] : 0;
    const auto pl = forward_latents(q_lat, p.level, L, e_D, e_L, y_D, y_L);

    double lp_j = 0.0;
    std::array<double, kLatentDim> gu{}, gz{};
    for (int k = 0; k < n_free; ++k) {
      const double u = pl.u[static_cast<std::size_t>(k)];
      lp_j += -0.5 * (kLog2Pi + u * u);
      gu[static_cast<std::size_t>(k)] = -u;
    }
    std::array<double, 4> z{};
    for (int k = 0; k < n_free; ++k) z[static_cast<std::size_t>(k)] = theta[static_cast<std::size_t>(k)] * pl.v[static_cast<std::size_t>(k)];

    {
      const int y = md.y_O[static_cast<std::size_t>(p.row_O)];
      const auto t = clamp_count_linpred(eta_O(p.row_O) + z[0], y);
      lp_j += poisson_log_pmf(y, t.value);
      ev.clamped |= t.clamped;
      const double d = t.clamped ? 0.0 : y - std::exp(t.value);
      g_eta[index(Submodel::O)](p.row_O) += d;
      gz[0] += d;
    }
    if (p.level >= 2) {
      const auto r = static_cast<std::size_t>(p.row_M);
      const int y = md.y_M[r];
      const auto t = clamp_count_linpred(eta_M(p.row_M) + z[1], y);
      const double log_rate = md.log_y_O[r] + t.value;
      lp_j += poisson_log_pmf(y, log_rate);
      ev.clamped |= t.clamped;
      const double d = t.clamped ? 0.0 : y - std::exp(log_rate);
      g_eta[index(Submodel::M)](p.row_M) += d;
      gz[1] += d;
    }
    if (p.level >= 4) {
      for (int e = p.embryo_begin; e < p.embryo_end; ++e) {
        const auto te = ordinal_term(md.grade_E[static_cast<std::size_t>(e)], alpha_E, eta_E(e) + z[2]);
        const auto tf = ordinal_term(md.grade_F[static_cast<std::size_t>(e)], alpha_F, eta_F(e) + z[3]);
        lp_j += te.logp + tf.logp;
        g_eta[index(Submodel::E)](e) += te.d_t;
        g_eta[index(Submodel::F)](e) += tf.d_t;
        gz[2] += te.d_t;
        gz[3] += tf.d_t;
        for (std::size_t k = 0; k < 3; ++k) {
          g_alpha_E[k] += te.d_alpha[k];
          g_alpha_F[k] += tf.d_alpha[k];
        }
      }
    }
    double* g_lat = g + lat;
    if (p.level == 6) {
      if (!pl.ok) {
        lp_j = -std::numeric_limits<double>::infinity();
      } else {
        lp_j += pl.det.log_p + pl.det.log_jac + pl.lbe.log_p + pl.lbe.log_jac;
        // LBE component.
        g_lat[5] += pl.lbe.dlogjac_dr;
        const double gc_L = pl.lbe.dlogp_dc;
        const double inv_LL = 1.0 / L(5, 5);
        g_eta[index(Submodel::L)](p.row_L) += -gc_L * inv_LL;
        gL(5, 5) += -gc_L * pl.c_L * inv_LL;
        const double gm_L = -gc_L * inv_LL;
        for (int i = 0; i < 5; ++i) {
          gL(5, i) += gm_L * pl.u[static_cast<std::size_t>(i)];
          gu[static_cast<std::size_t>(i)] += gm_L * L(5, i);
        }
        // DET component, including the path through u_D into the LBE bound.
        g_lat[4] += pl.det.dlogjac_dr + gu[4] * pl.det.du_dr;
        const double gc_D = pl.det.dlogp_dc + gu[4] * pl.det.du_dc;
        const double inv_LD = 1.0 / L(4, 4);
        g_eta[index(Submodel::D)](p.row_D) += -gc_D * inv_LD;
        gL(4, 4) += -gc_D * pl.c_D * inv_LD;
        const double gm_D = -gc_D * inv_LD;
        for (int i = 0; i < 4; ++i) {
          gL(4, i) += gm_D * pl.u[static_cast<std::size_t>(i)];
          gu[static_cast<std::size_t>(i)] += gm_D * L(4, i);
        }
      }
    }
    for (int k = 0; k < n_free; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      g_theta[ku] += gz[ku] * pl.v[ku];
      const double gv = theta[ku] * gz[ku];
      for (int i = 0; i <= k; ++i) {
        gu[static_cast<std::size_t>(i)] += gv * L(k, i);
        gL(k, i) += gv * pl.u[static_cast<std::size_t>(i)];
      }
    }
    for (int k = 0; k < n_free; ++k) g_lat[k] += gu[static_cast<std::size_t>(k)];

    if (!std::isfinite(lp_j) && !ev.bad_patient) ev.bad_patient = j;
    lp += lp_j;
  }

  for (auto s : kAllSubmodels) {
    const auto off = static_cast<Eigen::Index>(beta_offset_[index(s)]);
    grad.segment(off, md.X[index(s)].cols()).noalias() += md.X[index(s)].transpose() * g_eta[index(s)];
  }
  threshold_backprop(q.data() + alpha_E_offset_, g_alpha_E, g + alpha_E_offset_);
  threshold_backprop(q.data() + alpha_F_offset_, g_alpha_F, g + alpha_F_offset_);
  for (std::size_t i = 0; i < 4; ++i) g[theta_offset_ + i] += g_theta[i] * theta[i] + 1.0;
  corr_cholesky_backprop(q.data() + corr_offset_, cc, gL, g + corr_offset_);

  ev.value = lp;
  return ev;
}

// ---------------------------------------------------------------------------

SeparatePosterior::SeparatePosterior(Submodel submodel, std::shared_ptr<const ModelData> data)
    : submodel_(submodel), data_(std::move(data)) {
  width_ = static_cast<std::size_t>(data_->X[index(submodel_)].cols());
  std::size_t k = width_;
  if (is_ordinal(submodel_)) {
    alpha_offset_ = k;
    k += 3;
  }
  if (has_scale(submodel_)) {
    theta_offset_ = k;
    k += 1;
    const int min_level = submodel_ == Submodel::O ? 1 : submodel_ == Submodel::M ? 2 : 4;
    for (std::size_t j = 0; j < data_->patients.size(); ++j) {
      if (data_->patients[j].level >= min_level) latent_patients_.push_back(j);
    }
    latent_offset_ = k;
    k += latent_patients_.size();
  }
  dim_ = k;
}

ParameterNames SeparatePosterior::parameter_names() const {
  ParameterNames n;
  n.widths[index(submodel_)] = width_;
  n.include_alpha_E = submodel_ == Submodel::E;
  n.include_alpha_F = submodel_ == Submodel::F;
  n.include_theta = {false, false, false, false};
  if (has_scale(submodel_)) n.include_theta[index(submodel_)] = true;
  n.include_corr = false;
  return n;
}

ParameterSet SeparatePosterior::constrain(const Eigen::VectorXd& q) const {
  ParameterSet p = ParameterSet::zeros(parameter_names().widths);
  p.b(submodel_) = q.head(static_cast<Eigen::Index>(width_));
  if (is_ordinal(submodel_)) p.alpha(submodel_) = thresholds_from_unconstrained(q.data() + alpha_offset_);
  if (has_scale(submodel_)) p.theta[index(submodel_)] = std::exp(q(static_cast<Eigen::Index>(theta_offset_)));
  return p;
}

Eigen::VectorXd SeparatePosterior::project(const Eigen::VectorXd& q) const {
  return parameter_names().flatten(constrain(q));
}

Eigen::VectorXd SeparatePosterior::unconstrain(const ParameterSet& params) const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  if (static_cast<std::size_t>(params.b(submodel_).size()) != width_) throw Error("coefficient width mismatch");
  q.head(static_cast<Eigen::Index>(width_)) = params.b(submodel_);
  if (is_ordinal(submodel_)) thresholds_to_unconstrained(params.alpha(submodel_), q.data() + alpha_offset_);
  if (has_scale(submodel_)) q(static_cast<Eigen::Index>(theta_offset_)) = std::log(params.theta[index(submodel_)]);
  return q;
}

PosteriorModel::Evaluation SeparatePosterior::evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad_out) const {
  const auto& md = *data_;
  const auto s = submodel_;
  Evaluation ev;
  if (static_cast<std::size_t>(q.size()) != dim_) throw Error("separate posterior: wrong parameter dimension");
  Eigen::VectorXd local_grad;
  Eigen::VectorXd& grad = grad_out ? *grad_out : local_grad;
  grad.setZero(static_cast<Eigen::Index>(dim_));
  double* g = grad.data();
  double lp = 0.0;

  const Eigen::VectorXd beta = q.head(static_cast<Eigen::Index>(width_));
  add_normal_prior(beta, coefficient_prior_sd(s), lp, g);
  const Eigen::MatrixXd& X = md.X[index(s)];
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd g_eta = Eigen::VectorXd::Zero(eta.size());

  Thresholds alpha{};
  std::array<double, 3> g_alpha{};
  if (is_ordinal(s)) {
    alpha = thresholds_from_unconstrained(q.data() + alpha_offset_);
    for (std::size_t k = 0; k < 3; ++k) {
      lp += normal_lpdf(alpha[k], kWeakPriorSd);
      g_alpha[k] -= alpha[k] / (kWeakPriorSd * kWeakPriorSd);
    }
    lp += q(static_cast<Eigen::Index>(alpha_offset_ + 1)) + q(static_cast<Eigen::Index>(alpha_offset_ + 2));
  }
  double theta = 0.0, g_theta = 0.0;
  if (has_scale(s)) {
    const double tau = q(static_cast<Eigen::Index>(theta_offset_));
    theta = std::exp(tau);
    lp += half_cauchy_lpdf(theta, kScalePriorScale) + tau;
    g_theta += half_cauchy_dlog(theta, kScalePriorScale);
  }

  if (is_probit(s)) {
    const auto& y = s == Submodel::D ? md.y_D : md.y_L;
    for (Eigen::Index r = 0; r < eta.size(); ++r) {
      const int yr = y[static_cast<std::size_t>(r)];
      const double t = yr == 1 ? eta(r) : -eta(r);
      const double term = normal_log_cdf(t);
      lp += term;
      const double ratio = normal_pdf(t) / normal_cdf(t);
      g_eta(r) += yr == 1 ? ratio : -ratio;
      if (!std::isfinite(term) && !ev.bad_patient) ev.bad_patient = static_cast<std::size_t>(r);
    }
  } else {
    for (std::size_t k = 0; k < latent_patients_.size(); ++k) {
      const auto j = latent_patients_[k];
      const auto& p = md.patients[j];
      const auto li = latent_offset_ + k;
      const double u = q(static_cast<Eigen::Index>(li));
      double lp_j = -0.5 * (kLog2Pi + u * u);
      double gu = -u;
      const double z = theta * u;
      double gz = 0.0;
      if (s == Submodel::O || s == Submodel::M) {
        const int row = s == Submodel::O ? p.row_O : p.row_M;
        const auto r = static_cast<std::size_t>(row);
        const int y = s == Submodel::O ? md.y_O[r] : md.y_M[r];
        const auto t = clamp_count_linpred(eta(row) + z, y);
        const double log_rate = (s == Submodel::O ? 0.0 : md.log_y_O[r]) + t.value;
        lp_j += poisson_log_pmf(y, log_rate);
        ev.clamped |= t.clamped;
        const double d = t.clamped ? 0.0 : y - std::exp(log_rate);
        g_eta(row) += d;
        gz += d;
      } else {
        const auto& grades = s == Submodel::E ? md.grade_E : md.grade_F;
        for (int e = p.embryo_begin; e < p.embryo_end; ++e) {
          const auto te = ordinal_term(grades[static_cast<std::size_t>(e)], alpha, eta(e) + z);
          lp_j += te.logp;
          g_eta(e) += te.d_t;
          gz += te.d_t;
          for (std::size_t a = 0; a < 3; ++a) g_alpha[a] += te.d_alpha[a];
        }
      }
      gu += theta * gz;
      g_theta += gz * u;
      g[li] += gu;
      if (!std::isfinite(lp_j) && !ev.bad_patient) ev.bad_patient = j;
      lp += lp_j;
    }
  }

  grad.head(static_cast<Eigen::Index>(width_)).noalias() += X.transpose() * g_eta;
  if (is_ordinal(s)) threshold_backprop(q.data() + alpha_offset_, g_alpha, g + alpha_offset_);
  if (has_scale(s)) g[theta_offset_] += g_theta * theta + 1.0;
  ev.value = lp;
  return ev;
}

}  // namespace ivf
