#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dode/field.hpp"
#include "dode/odeflow.hpp"
#include "dode/rng.hpp"
#include "dode/schedule.hpp"

namespace dode {

struct TruncNormParams {
  double tau;
  double Z;
  double sigma_eps;
  double alpha_eps;

  static TruncNormParams from_schedule(const LogSnrSchedule& s);
  /// tau and Z for a given alpha/sigma pair.
  static TruncNormParams from_alpha_sigma(double alpha, double sigma);
};

/// Standard normal restricted to [-tau, tau] per coordinate (rejection).
Vec tn_sample(const TruncNormParams& p, Eigen::Index d, Rng& rng);
/// -inf outside the support.
double tn_log_density(const Vec& eps_hat, const TruncNormParams& p);
/// d log Z - d tau phi(tau) / Z: entropy minus the standard normal's.
double tn_entropy_correction(const TruncNormParams& p, Eigen::Index d);

enum class BoundKind { Uniform, TruncNormal, Variational };
std::string to_string(BoundKind k);
BoundKind parse_bound_kind(const std::string& s);

struct BoundTerm {
  std::string label;
  double value;
};

struct LikelihoodBound {
  BoundKind kind = BoundKind::TruncNormal;
  std::size_t K = 1;
  Eigen::Index d = 0;
  double ode_term = 0;
  std::vector<BoundTerm> corrections;
  double total_logp = 0;
  double bpd = 0;
  std::size_t nfe = 0;

  double sum_of_parts() const;
};

double bpd(double total_logp, Eigen::Index d);

/// Log density of the continuous model at its start time, in x_gamma space.
using LogDensityFn = std::function<double(const Vec& x)>;

struct BoundOptions {
  std::size_t K = 1;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::uint64_t datum = 0;  // stream index; draws use task_rng(seed, datum, draw)
};

/// Per-datum bounds. `X` holds levels 0..255.
LikelihoodBound tn_bound(const TruncNormParams& p, const LogDensityFn& logp, const Eigen::VectorXi& X,
                         const BoundOptions& opt);
/// alpha is the schedule's alpha at the density's start time.
LikelihoodBound uniform_bound(double alpha, const LogDensityFn& logp, const Eigen::VectorXi& X,
                              const BoundOptions& opt);
LikelihoodBound variational_bound(double alpha, double sigma, const LogDensityFn& logp, const Eigen::VectorXi& X,
                                  const BoundOptions& opt);

/// sum_i log softmax_j(-(x_i - alpha l_j)^2 / (2 sigma^2))[X_i] over the level table.
double reconstruction_log_prob(const Vec& x_eps, const Eigen::VectorXi& X, double alpha, double sigma);

/// ODE-backed bounds for one datum.
LikelihoodBound nll_trunc_normal(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                                 const BoundOptions& opt, const LikelihoodConfig& cfg = {});
LikelihoodBound nll_uniform(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                            double gamma_eval, const BoundOptions& opt, const LikelihoodConfig& cfg = {});
LikelihoodBound nll_variational(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                                const BoundOptions& opt, const LikelihoodConfig& cfg = {});

struct DatasetBound {
  std::vector<LikelihoodBound> per_datum;
  double mean_logp = 0;
  double mean_bpd = 0;
  double stderr_bpd = 0;
};

/// Evaluates the chosen bound on every row of X (n x d); datum i uses stream i.
DatasetBound evaluate_bound(BoundKind kind, const LogSnrSchedule& s, const VelocityField& model,
                            const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& X, BoundOptions opt,
                            const LikelihoodConfig& cfg = {}, double gamma_eval = std::numeric_limits<double>::quiet_NaN());

}  // namespace dode
