#pragma once

#include "ivf/data_model.hpp"

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

namespace ivf {

inline constexpr int kLatentDim = 6;
inline constexpr int kNumCorrelations = 15;

using Matrix6 = Eigen::Matrix<double, kLatentDim, kLatentDim>;
using Vector6 = Eigen::Matrix<double, kLatentDim, 1>;
using Thresholds = std::array<double, 3>;

struct ParameterSet {
  std::array<Eigen::VectorXd, kNumSubmodels> beta;
  Thresholds alpha_E{-1.0, 0.0, 1.0};
  Thresholds alpha_F{-1.0, 0.0, 1.0};
  std::array<double, 4> theta{1.0, 1.0, 1.0, 1.0};  // O, M, E, F
  Matrix6 corr = Matrix6::Identity();

  Eigen::VectorXd& b(Submodel s) { return beta[index(s)]; }
  const Eigen::VectorXd& b(Submodel s) const { return beta[index(s)]; }
  Thresholds& alpha(Submodel s) { return s == Submodel::E ? alpha_E : alpha_F; }
  const Thresholds& alpha(Submodel s) const { return s == Submodel::E ? alpha_E : alpha_F; }

  // Zero coefficients sized from a design.
  static ParameterSet zeros(const std::array<std::size_t, kNumSubmodels>& widths);

  // Throws Error describing the first violated invariant (ordered thresholds,
  // positive scales, unit-diagonal symmetric positive-definite correlation).
  void validate() const;
};

// eta_k in row-major upper-triangle order: eta_1 = (O,M), ..., eta_15 = (D,L).
std::array<double, kNumCorrelations> correlations(const Matrix6& corr);
Matrix6 correlation_matrix(const std::array<double, kNumCorrelations>& eta);
std::pair<int, int> correlation_position(int k);  // 0-based k -> (row, col)

struct LatentCovariance {
  Matrix6 sigma;
  Matrix6 chol;  // lower triangular, sigma = chol * chol^T
};

// sigma = diag(theta_O, theta_M, theta_E, theta_F, 1, 1) corr diag(...).
// Throws NumericalError when corr is not positive-definite.
LatentCovariance build_covariance(const std::array<double, 4>& theta, const Matrix6& corr);

// Scale vector (theta_O, theta_M, theta_E, theta_F, 1, 1).
Vector6 latent_scales(const std::array<double, 4>& theta);

// ---------------------------------------------------------------------------
// Unconstrained parameterizations

// Thresholds as (alpha_1, log(alpha_2 - alpha_1), log(alpha_3 - alpha_2)).
Thresholds thresholds_from_unconstrained(const double* u);
void thresholds_to_unconstrained(const Thresholds& alpha, double* u);

// Correlation Cholesky factor from 15 unconstrained values via canonical
// partial correlations tanh(y), ordered row by row over the strict lower
// triangle ((1,0), (2,0), (2,1), (3,0), ...).
struct CorrCholesky {
  Matrix6 L = Matrix6::Identity();
  std::array<double, kNumCorrelations> cpc{};
  double log_jacobian = 0.0;  // log |d vech(R) / d y|
};
CorrCholesky corr_cholesky_from_unconstrained(const double* y);
void corr_to_unconstrained(const Matrix6& corr, double* y);
// Accumulates d/dy of (f(L) + log_jacobian) given gL = df/dL (lower triangle read).
void corr_cholesky_backprop(const double* y, const CorrCholesky& cc, const Matrix6& gL, double* gy);

// ---------------------------------------------------------------------------
// Flat naming shared by draws, traces and summary tables.

struct ParameterNames {
  std::array<std::size_t, kNumSubmodels> widths{};
  bool include_alpha_E = true;
  bool include_alpha_F = true;
  std::array<bool, 4> include_theta{true, true, true, true};
  bool include_corr = true;

  std::vector<std::string> names() const;
  Eigen::VectorXd flatten(const ParameterSet& p) const;
  ParameterSet unflatten(const Eigen::VectorXd& flat) const;
  std::size_t size() const;
};

// Recovers the layout from a list of names (e.g. a draws CSV header).
ParameterNames parse_parameter_names(const std::vector<std::string>& names);

}  // namespace ivf
