#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dode/field.hpp"
#include "dode/objectives.hpp"
#include "dode/schedule.hpp"

namespace dode {

struct SolverConfig {
  double rtol = 1e-5;
  double atol = 1e-5;
  std::size_t max_steps = 100000;
  std::optional<double> initial_step;  // empty: automatic

  void validate() const;
};

struct SolverRun {
  Vec final_state;
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

using OdeRhs = std::function<Vec(double t, const Vec& y)>;

/// Dormand-Prince 5(4) with FSAL and PI step control. Works in either direction
/// and lands exactly on t1.
SolverRun integrate(const OdeRhs& rhs, const Vec& y0, double t0, double t1, const SolverConfig& cfg);

/// dx/dgamma = norm(gamma) * v(x, gamma)
Vec drift(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma);

struct DivergenceMode {
  enum Kind { Exact, Hutchinson } kind = Exact;
  std::size_t probes = 1;
  ProbeKind probe = ProbeKind::Rademacher;
  std::uint64_t seed = 0;

  std::string label() const;
};

/// tr(d drift / dx). Hutchinson probes are drawn from mode.seed.
double divergence(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma,
                  const DivergenceMode& mode);

struct LikelihoodConfig {
  SolverConfig solver;
  DivergenceMode divergence;
  /// Start of the likelihood ODE; NaN means the schedule's gamma_min.
  double gamma_start = std::numeric_limits<double>::quiet_NaN();
  /// Prior at gamma_max is N(0, (alpha_T^2 prior_data_scale^2 + sigma_T^2) I).
  /// 0 gives the plain N(0, sigma_T^2 I) prior.
  double prior_data_scale = 0.0;
};

double prior_variance(const LogSnrSchedule& s, double prior_data_scale);
double prior_log_density(const LogSnrSchedule& s, const Vec& x, double prior_data_scale);

struct LikelihoodResult {
  double logp;
  std::size_t nfe;
  double delta_logp;  // integral of the divergence
  Vec x_end;
};

LikelihoodResult ode_log_likelihood(const LogSnrSchedule& s, const VelocityField& model, const Vec& x_eps,
                                    const LikelihoodConfig& cfg = {});

struct SampleResult {
  Mat samples;  // d x n
  std::vector<std::size_t> nfe;
  double mean_nfe() const;
};

/// Prior draws for sample i come from task_rng(seed, i).
SampleResult ode_sample(const LogSnrSchedule& s, const VelocityField& model, std::size_t n,
                        const SolverConfig& cfg, std::uint64_t seed, double prior_data_scale = 0.0);

/// Integrates x from gamma_from to gamma_to along the drift.
SolverRun transport(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma_from,
                    double gamma_to, const SolverConfig& cfg);

}  // namespace dode
