#pragma once

#include "ivf/data_model.hpp"
#include "ivf/log_density.hpp"
#include "ivf/parameters.hpp"

#include <Eigen/Core>

#include <array>
#include <memory>
#include <optional>
#include <vector>

namespace ivf {

inline constexpr double kWeakPriorSd = 1000.0;
inline constexpr double kProbitPriorSd = 2.0;
inline constexpr double kScalePriorScale = 2.5;
inline constexpr double kLinpredClamp = 30.0;

// ---------------------------------------------------------------------------
// Unit log-densities

double poisson_log_pmf(int y, double log_rate);
double oocyte_loglik(int y, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::VectorXd& beta, double z);
// Poisson with log(y_O) offset; throws DataError when y_O < 1.
double fertilisation_loglik(int y_M, int y_O, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            const Eigen::VectorXd& beta, double z);

// P(grade = k), k = 1..4, under logit(P(grade <= k)) = alpha_k - linpred.
std::array<double, 4> ordinal_category_probs(const Thresholds& alpha, double linpred);
double ordinal_loglik(int grade, const Thresholds& alpha, double linpred);

double normal_cdf(double x);
double normal_log_cdf(double x);
double normal_quantile(double p);

// log Phi(linpred) for y = 1, log Phi(-linpred) for y = 0.
double probit_collapsed_loglik(int y, double linpred);
// Data term of the latent construction: 0 when sign(linpred + z) agrees with
// y; throws NumericalError otherwise.
double probit_indicator_loglik(int y, double linpred, double z);

double latent_prior_logpdf(const Vector6& z, const LatentCovariance& cov);

double normal_lpdf(double x, double sd);
double half_cauchy_lpdf(double x, double scale);
// Log volume of the set of dim x dim correlation matrices.
double lkj_uniform_log_volume(int dim);
// Log density of the uniform LKJ(1) distribution over 6x6 correlation matrices.
double lkj_uniform_logpdf();
// Normal(0, 1000^2) on beta_O..beta_F and thresholds, Normal(0, 2^2) on
// beta_D, beta_L, half-Cauchy(0, 2.5) on theta, LKJ(1) on the correlation.
double hyperprior_logpdf(const ParameterSet& params);
double coefficient_prior_sd(Submodel s) noexcept;

// ---------------------------------------------------------------------------
// Stage-structured data

struct ModelData {
  struct Patient {
    std::size_t cycle = 0;
    int level = 1;  // number of latent components used: 1 (O), 2 (M), 4 (E, F), 6 (D, L)
    int row_O = -1;
    int row_M = -1;
    int row_D = -1;
    int row_L = -1;
    int embryo_begin = 0;  // rows of X[E] / X[F]
    int embryo_end = 0;
  };

  std::array<Eigen::MatrixXd, kNumSubmodels> X;
  std::vector<int> y_O;          // per O row
  std::vector<int> y_M;          // per M row
  std::vector<double> log_y_O;   // offset per M row
  std::vector<int> grade_E;      // per embryo row
  std::vector<int> grade_F;
  std::vector<int> y_D;          // per D row
  std::vector<int> y_L;          // per L row
  std::vector<Patient> patients; // one per O unit, in cycle order

  std::array<std::size_t, kNumSubmodels> widths() const;
  static ModelData build(const Dataset& data, const DesignMatrices& design);
};

// Shared interface of the joint and separate posteriors.
class PosteriorModel : public LogDensity {
 public:
  struct Evaluation {
    double value = 0.0;
    bool clamped = false;                    // a linear predictor hit +-kLinpredClamp
    std::optional<std::size_t> bad_patient;  // first patient with a non-finite term
  };

  // grad may be null.
  virtual Evaluation evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const = 0;
  virtual ParameterNames parameter_names() const = 0;
  virtual Eigen::VectorXd project(const Eigen::VectorXd& q) const = 0;

  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const override;
  // Throws NumericalError naming the patient when the value is non-finite.
  double checked_log_density(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const;
};

// Joint posterior over (coefficients, thresholds, log scales, 15 correlation
// parameters, per-patient latents). Patient latents are non-centred:
// z = diag(theta, 1, 1) L u with L the correlation Cholesky factor; the D and L
// components of u live on the half-line implied by the observed binary and are
// stored as logit-uniform pre-images of a truncated normal quantile map.
// Components past a patient's last stage are integrated out analytically.
class JointPosterior final : public PosteriorModel {
 public:
  explicit JointPosterior(std::shared_ptr<const ModelData> data);

  std::size_t dimension() const override { return dim_; }
  Evaluation evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const override;
  ParameterNames parameter_names() const override;
  Eigen::VectorXd project(const Eigen::VectorXd& q) const override;

  ParameterSet constrain(const Eigen::VectorXd& q) const;
  // Latent pre-images set to zero.
  Eigen::VectorXd unconstrain(const ParameterSet& params) const;
  std::size_t latent_offset(std::size_t patient) const { return latent_offsets_.at(patient); }
  // Realized z for a patient; entries past the patient's level are NaN.
  Vector6 realized_latent(const Eigen::VectorXd& q, std::size_t patient) const;

  const ModelData& data() const noexcept { return *data_; }

  std::size_t beta_offset(Submodel s) const { return beta_offset_[index(s)]; }
  std::size_t alpha_offset(Submodel s) const { return s == Submodel::E ? alpha_E_offset_ : alpha_F_offset_; }
  std::size_t theta_offset() const noexcept { return theta_offset_; }
  std::size_t corr_offset() const noexcept { return corr_offset_; }

 private:
  std::shared_ptr<const ModelData> data_;
  std::array<std::size_t, kNumSubmodels> beta_offset_{};
  std::size_t alpha_E_offset_ = 0;
  std::size_t alpha_F_offset_ = 0;
  std::size_t theta_offset_ = 0;
  std::size_t corr_offset_ = 0;
  std::vector<std::size_t> latent_offsets_;
  std::size_t dim_ = 0;
};

// One submodel fitted on its own: Poisson (O, M) or cumulative logit (E, F)
// with a patient-level normal random intercept, or a plain probit (D, L).
class SeparatePosterior final : public PosteriorModel {
 public:
  SeparatePosterior(Submodel submodel, std::shared_ptr<const ModelData> data);

  std::size_t dimension() const override { return dim_; }
  Evaluation evaluate(const Eigen::VectorXd& q, Eigen::VectorXd* grad) const override;
  ParameterNames parameter_names() const override;
  Eigen::VectorXd project(const Eigen::VectorXd& q) const override;

  Submodel submodel() const noexcept { return submodel_; }
  // Coefficient blocks of the other submodels are empty.
  ParameterSet constrain(const Eigen::VectorXd& q) const;
  Eigen::VectorXd unconstrain(const ParameterSet& params) const;
  // Patients carrying a random effect, in latent order.
  const std::vector<std::size_t>& latent_patients() const noexcept { return latent_patients_; }
  std::size_t latent_offset() const noexcept { return latent_offset_; }

 private:
  Submodel submodel_;
  std::shared_ptr<const ModelData> data_;
  std::size_t width_ = 0;
  std::size_t alpha_offset_ = 0;
  std::size_t theta_offset_ = 0;
  std::size_t latent_offset_ = 0;
  std::vector<std::size_t> latent_patients_;
  std::size_t dim_ = 0;
};

}  // namespace ivf
