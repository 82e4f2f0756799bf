#pragma once

#include <vector>

#include "dode/field.hpp"
#include "dode/rng.hpp"
#include "dode/schedule.hpp"

namespace dode {

/// Isotropic component N(mean, std^2 I); std may be 0 (point mass).
struct MixtureComponent {
  double weight;
  Vec mean;
  double std;
};

/// Exact diffusion-path quantities for data distributed as an isotropic
/// Gaussian mixture: marginal densities, score, optimal normalized velocity
/// and its Jacobian, and the x0-posterior.
class GaussianMixtureOracle final : public VelocityField {
 public:
  GaussianMixtureOracle(LogSnrSchedule s, std::vector<MixtureComponent> comps);
  static GaussianMixtureOracle gaussian(LogSnrSchedule s, Eigen::Index d, double s0);

  const LogSnrSchedule& schedule() const { return sched_; }
  const std::vector<MixtureComponent>& components() const { return comps_; }

  Eigen::Index dim() const override { return d_; }
  /// Optimal normalized velocity E[v | x_gamma] / norm.
  Vec value(const Vec& x, double gamma) const override;
  Mat jvp(const Vec& x, double gamma, const Mat& tangents, Vec* value_out) const override;

  double log_density(const Vec& x, double gamma) const;
  Vec score(const Vec& x, double gamma) const;
  /// Unnormalized optimal velocity v* = E[dalpha x0 + dsigma eps | x_gamma].
  Vec velocity(const Vec& x, double gamma) const;
  /// Exact tr(grad_x v*).
  double velocity_divergence(const Vec& x, double gamma) const;

  struct Posterior {
    std::vector<double> resp;  // component responsibilities
    std::vector<Vec> mean;     // per-component posterior mean of x0
    std::vector<double> var;   // per-component isotropic posterior variance of x0
    Vec overall_mean;
    double total_var;          // E||x0 - E[x0|x]||^2 (summed over dims)
  };
  Posterior posterior(const Vec& x, double gamma) const;
  /// E[||v* - v||^2 | x_gamma] with v the path velocity.
  double conditional_velocity_error(const Vec& x, double gamma) const;
  Vec sample_posterior_x0(const Vec& x, double gamma, Rng& rng) const;

  Vec sample_data(Rng& rng) const;
  /// log q0 for continuous mixtures (requires every std > 0).
  double data_log_density(const Vec& x0) const;

 private:
  LogSnrSchedule sched_;
  std::vector<MixtureComponent> comps_;
  Eigen::Index d_;
};

}  // namespace dode
