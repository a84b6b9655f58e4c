#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace ivf {

// Differentiable target over an unconstrained space. Implementations must be
// safe to call concurrently from several chains.
class LogDensity {
 public:
  virtual ~LogDensity() = default;
  virtual std::size_t dimension() const = 0;
  // Returns the log density at q (possibly -inf or NaN outside the support)
  // and writes its gradient into `grad` (resized by the callee).
  virtual double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const = 0;
};

}  // namespace ivf
