#include "ivf/parameters.hpp"

#include "ivf/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <regex>

namespace ivf {

ParameterSet ParameterSet::zeros(const std::array<std::size_t, kNumSubmodels>& widths) {
  ParameterSet p;
  for (auto s : kAllSubmodels) p.b(s) = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[index(s)]));
  return p;
}

void ParameterSet::validate() const {
  for (const auto* a : {&alpha_E, &alpha_F}) {
    if (!((*a)[0] < (*a)[1] && (*a)[1] < (*a)[2])) throw Error("thresholds must be strictly increasing");
  }
  for (double t : theta) {
    if (!(t > 0.0) || !std::isfinite(t)) throw Error("theta must be positive");
  }
  for (int i = 0; i < kLatentDim; ++i) {
    if (std::abs(corr(i, i) - 1.0) > 1e-12) throw Error("correlation matrix must have unit diagonal");
    for (int j = 0; j < i; ++j) {
      if (std::abs(corr(i, j) - corr(j, i)) > 1e-12) throw Error("correlation matrix must be symmetric");
    }
  }
  Eigen::LLT<Matrix6> llt(corr);
  if (llt.info() != Eigen::Success) throw Error("correlation matrix must be positive-definite");
}

std::pair<int, int> correlation_position(int k) {
  int n = 0;
  for (int i = 0; i < kLatentDim; ++i) {
    for (int j = i + 1; j < kLatentDim; ++j) {
      if (n++ == k) return {i, j};
    }
  }
  throw Error("correlation index out of range");
}

std::array<double, kNumCorrelations> correlations(const Matrix6& corr) {
  std::array<double, kNumCorrelations> eta{};
  for (int k = 0; k < kNumCorrelations; ++k) {
    const auto [i, j] = correlation_position(k);
    eta[static_cast<std::size_t>(k)] = corr(i, j);
  }
  return eta;
}

Matrix6 correlation_matrix(const std::array<double, kNumCorrelations>& eta) {
  Matrix6 c = Matrix6::Identity();
  for (int k = 0; k < kNumCorrelations; ++k) {
    const auto [i, j] = correlation_position(k);
    c(i, j) = c(j, i) = eta[static_cast<std::size_t>(k)];
  }
  return c;
}

Vector6 latent_scales(const std::array<double, 4>& theta) {
  Vector6 d;
  d << theta[0], theta[1], theta[2], theta[3], 1.0, 1.0;
  return d;
}

LatentCovariance build_covariance(const std::array<double, 4>& theta, const Matrix6& corr) {
  for (double t : theta) {
    if (!(t > 0.0)) throw NumericalError("latent scales must be positive");
  }
  Eigen::LLT<Matrix6> llt(corr);
  if (llt.info() != Eigen::Success) throw NumericalError("correlation matrix is not positive-definite");
  const Vector6 d = latent_scales(theta);
  LatentCovariance out;
  out.sigma = d.asDiagonal() * corr * d.asDiagonal();
  out.sigma.diagonal().tail<2>().setOnes();
  out.chol = d.asDiagonal() * Matrix6(llt.matrixL());
  return out;
}

// ---------------------------------------------------------------------------

Thresholds thresholds_from_unconstrained(const double* u) {
  Thresholds a;
  a[0] = u[0];
  a[1] = a[0] + std::exp(u[1]);
  a[2] = a[1] + std::exp(u[2]);
  return a;
}

void thresholds_to_unconstrained(const Thresholds& alpha, double* u) {
  if (!(alpha[0] < alpha[1] && alpha[1] < alpha[2])) throw Error("thresholds must be strictly increasing");
  u[0] = alpha[0];
  u[1] = std::log(alpha[1] - alpha[0]);
  u[2] = std::log(alpha[2] - alpha[1]);
}

namespace {

// Exponent of log(1 - z^2) in the Jacobian for a partial correlation in column j,
// including the tanh term.
constexpr double jacobian_weight(int j) { return 1.0 + 0.5 * (kLatentDim - j - 2); }

}  // namespace

CorrCholesky corr_cholesky_from_unconstrained(const double* y) {
  CorrCholesky out;
  out.L.setZero();
  out.L(0, 0) = 1.0;
  int k = 0;
  for (int i = 1; i < kLatentDim; ++i) {
    double rem = 1.0;
    for (int j = 0; j < i; ++j, ++k) {
      const double z = std::tanh(y[k]);
      out.cpc[static_cast<std::size_t>(k)] = z;
      out.L(i, j) = z * std::sqrt(rem);
      const double one_minus = 1.0 - z * z;
      rem *= one_minus;
      out.log_jacobian += jacobian_weight(j) * std::log(one_minus);
    }
    out.L(i, i) = std::sqrt(rem);
  }
  return out;
}

void corr_to_unconstrained(const Matrix6& corr, double* y) {
  Eigen::LLT<Matrix6> llt(corr);
  if (llt.info() != Eigen::Success) throw NumericalError("correlation matrix is not positive-definite");
  const Matrix6 L = llt.matrixL();
  int k = 0;
  for (int i = 1; i < kLatentDim; ++i) {
    double rem = 1.0;
    for (int j = 0; j < i; ++j, ++k) {
      const double z = L(i, j) / std::sqrt(rem);
      y[k] = std::atanh(z);
      rem -= L(i, j) * L(i, j);
    }
  }
}

void corr_cholesky_backprop(const double* y, const CorrCholesky& cc, const Matrix6& gL, double* gy) {
  int k0 = 0;
  for (int i = 1; i < kLatentDim; ++i) {
    // Forward remainders rem_0..rem_i for this row.
    std::array<double, kLatentDim + 1> rem{};
    rem[0] = 1.0;
    for (int j = 0; j < i; ++j) {
      const double z = cc.cpc[static_cast<std::size_t>(k0 + j)];
      rem[static_cast<std::size_t>(j + 1)] = rem[static_cast<std::size_t>(j)] * (1.0 - z * z);
    }
    double g_rem = gL(i, i) * 0.5 / cc.L(i, i);  // d/d rem_i
    for (int j = i - 1; j >= 0; --j) {
      const auto k = static_cast<std::size_t>(k0 + j);
      const double z = cc.cpc[k];
      const double r = rem[static_cast<std::size_t>(j)];
      const double sr = std::sqrt(r);
      double gz = 0.0;
      // rem_{j+1} = rem_j (1 - z^2)
      gz += g_rem * r * (-2.0 * z);
      double g_rem_j = g_rem * (1.0 - z * z);
      // L_ij = z sqrt(rem_j)
      gz += gL(i, j) * sr;
      g_rem_j += gL(i, j) * z * 0.5 / sr;
      g_rem = g_rem_j;
      gy[k] += gz * (1.0 - z * z) - 2.0 * jacobian_weight(j) * z;
    }
    k0 += i;
  }
  (void)y;
}

// ---------------------------------------------------------------------------

namespace {

std::string indexed(std::string_view base, std::size_t i) {
  return std::string(base) + "[" + std::to_string(i + 1) + "]";
}

}  // namespace

std::vector<std::string> ParameterNames::names() const {
  std::vector<std::string> out;
  for (auto s : kAllSubmodels) {
    const std::string base = "beta_" + std::string(submodel_code(s));
    for (std::size_t i = 0; i < widths[index(s)]; ++i) out.push_back(indexed(base, i));
  }
  if (include_alpha_E) {
    for (std::size_t i = 0; i < 3; ++i) out.push_back(indexed("alpha_E", i));
  }
  if (include_alpha_F) {
    for (std::size_t i = 0; i < 3; ++i) out.push_back(indexed("alpha_F", i));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (include_theta[i]) out.push_back(indexed("theta", i));
  }
  if (include_corr) {
    for (std::size_t i = 0; i < kNumCorrelations; ++i) out.push_back(indexed("eta", i));
  }
  return out;
}

std::size_t ParameterNames::size() const {
  std::size_t n = 0;
  for (auto w : widths) n += w;
  n += include_alpha_E ? 3 : 0;
  n += include_alpha_F ? 3 : 0;
  for (bool t : include_theta) n += t ? 1 : 0;
  n += include_corr ? kNumCorrelations : 0;
  return n;
}

Eigen::VectorXd ParameterNames::flatten(const ParameterSet& p) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  Eigen::Index k = 0;
  for (auto s : kAllSubmodels) {
    if (static_cast<std::size_t>(p.b(s).size()) != widths[index(s)]) throw Error("coefficient width mismatch");
    for (Eigen::Index i = 0; i < p.b(s).size(); ++i) out(k++) = p.b(s)(i);
  }
  if (include_alpha_E) {
    for (double a : p.alpha_E) out(k++) = a;
  }
  if (include_alpha_F) {
    for (double a : p.alpha_F) out(k++) = a;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (include_theta[i]) out(k++) = p.theta[i];
  }
  if (include_corr) {
    for (double e : correlations(p.corr)) out(k++) = e;
  }
  return out;
}

ParameterSet ParameterNames::unflatten(const Eigen::VectorXd& flat) const {
  if (static_cast<std::size_t>(flat.size()) != size()) throw Error("flat parameter vector has wrong length");
  ParameterSet p = ParameterSet::zeros(widths);
  Eigen::Index k = 0;
  for (auto s : kAllSubmodels) {
    for (Eigen::Index i = 0; i < p.b(s).size(); ++i) p.b(s)(i) = flat(k++);
  }
  if (include_alpha_E) {
    for (double& a : p.alpha_E) a = flat(k++);
  }
  if (include_alpha_F) {
    for (double& a : p.alpha_F) a = flat(k++);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (include_theta[i]) p.theta[i] = flat(k++);
  }
  if (include_corr) {
    std::array<double, kNumCorrelations> eta{};
    for (double& e : eta) e = flat(k++);
    p.corr = correlation_matrix(eta);
  }
  return p;
}

ParameterNames parse_parameter_names(const std::vector<std::string>& names) {
  static const std::regex pattern(R"(^(beta_([OMEFDL])|alpha_([EF])|theta|eta)\[(\d+)\]$)");
  ParameterNames layout;
  layout.include_alpha_E = layout.include_alpha_F = layout.include_corr = false;
  layout.include_theta = {false, false, false, false};
  std::size_t n_eta = 0;
  for (const auto& name : names) {
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) throw DataError("unrecognised parameter name '" + name + "'");
    const auto idx = static_cast<std::size_t>(std::stoul(m[4].str()));
    if (m[2].matched) {
      const auto s = parse_submodel(m[2].str());
      layout.widths[index(s)] = std::max(layout.widths[index(s)], idx);
    } else if (m[3].matched) {
      (m[3].str() == "E" ? layout.include_alpha_E : layout.include_alpha_F) = true;
    } else if (m[1].str() == "theta") {
      if (idx < 1 || idx > 4) throw DataError("theta index out of range in '" + name + "'");
      layout.include_theta[idx - 1] = true;
    } else {
      ++n_eta;
    }
  }
  if (n_eta != 0 && n_eta != kNumCorrelations) throw DataError("expected 15 eta parameters");
  layout.include_corr = n_eta == kNumCorrelations;
  if (layout.names() != names) throw DataError("parameter names are not in canonical order");
  return layout;
}

}  // namespace ivf
