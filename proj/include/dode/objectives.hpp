#pragma once

#include <span>
#include <string>
#include <vector>

#include "dode/field.hpp"
#include "dode/netcore.hpp"
#include "dode/rng.hpp"
#include "dode/schedule.hpp"

namespace dode {

struct PathSample {
  Vec x0;
  Vec eps;
  double gamma;
  Vec x_gamma;
  Vec v_target;  // normalized velocity (dalpha x0 + dsigma eps) / norm
};

PathSample sample_path(const LogSnrSchedule& s, const Vec& x0, const Vec& eps, double gamma);

enum class PredictorKind { Score, Noise, Data, Velocity, NormalizedVelocity };

std::string to_string(PredictorKind k);

/// Converts a predictor output at (x, gamma) between parameterizations.
Vec convert_predictor(const LogSnrSchedule& s, PredictorKind from, PredictorKind to, const Vec& value,
                      const Vec& x, double gamma);

/// 2 norm^2 / sigma^2: 0.5 alpha^2 for VP, alpha^2 for SP.
double likelihood_weight(const LogSnrSchedule& s, double gamma);

enum class ProbeKind { Rademacher, Gaussian };

struct TraceOptions {
  bool hutchinson = false;
  std::size_t probes = 1;
  ProbeKind probe = ProbeKind::Rademacher;
};

/// Draws an n-column probe matrix.
Mat draw_probes(Eigen::Index d, std::size_t n, ProbeKind kind, Rng& rng);

struct LossValue {
  double total = 0;    // batch mean
  double per_dim = 0;  // total / d
  std::vector<double> per_sample;
};

/// Likelihood-weighted first-order flow matching, one importance weight per sample.
LossValue fm_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                  std::span<const double> is_weights);

/// sigma tr(grad v) - (dsigma / norm) d + (2 norm / sigma) ||v_stop - v_target||^2
double trace_residual(const LogSnrSchedule& s, double gamma, double trace, const Vec& v_model,
                      const Vec& v_target);

/// Second-order objective; rng is used only for Hutchinson probes.
LossValue fm_trace_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                        std::span<const double> is_weights, const TraceOptions& opt = {}, Rng* rng = nullptr);

LossValue mixed_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                     std::span<const double> is_weights, double lambda, const TraceOptions& opt = {},
                     Rng* rng = nullptr);

/// Same values as above, plus the exact parameter gradient of `total`.
LossValue fm_loss_grad(const LogSnrSchedule& s, const VelocityModel& model, std::span<const PathSample> batch,
                       std::span<const double> is_weights, std::vector<double>& grad);
LossValue mixed_loss_grad(const LogSnrSchedule& s, const VelocityModel& model, std::span<const PathSample> batch,
                          std::span<const double> is_weights, double lambda, std::vector<double>& grad,
                          const TraceOptions& opt = {}, Rng* rng = nullptr);

struct Preconditioning {
  double c_in;
  double c_skip;
  double c_out;
};

Preconditioning preconditioning(const LogSnrSchedule& s, double gamma, double sigma_data);

}  // namespace dode
