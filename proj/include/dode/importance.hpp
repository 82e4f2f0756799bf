#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dode/field.hpp"
#include "dode/netcore.hpp"
#include "dode/optim.hpp"
#include "dode/rng.hpp"
#include "dode/schedule.hpp"

namespace dode {

enum class StrategyKind { Uniform, Designed, Adaptive };

std::string to_string(StrategyKind k);
StrategyKind parse_strategy(const std::string& s);

struct GammaDraw {
  double gamma;
  double is_weight;  // 1 / p(gamma)
  double t;          // underlying uniform variate
};

/// `net` is required for Adaptive and ignored otherwise.
GammaDraw draw_gamma(StrategyKind kind, const LogSnrSchedule& s, Rng& rng, const MonotoneGammaNet* net = nullptr);
std::vector<GammaDraw> sample_gamma(StrategyKind kind, const LogSnrSchedule& s, std::size_t n, Rng& rng,
                                    const MonotoneGammaNet* net = nullptr);

/// Weighted per-sample loss w W(gamma) ||v_model - v_target||^2 at one path point.
double weighted_sample_loss(const LogSnrSchedule& s, const VelocityField& model, const Vec& x0, const Vec& eps,
                            double gamma, double is_weight);

struct AdaptiveBatch {
  std::vector<Vec> x0;
  std::vector<Vec> eps;
  std::vector<double> t;
};

/// Mean over the batch of L^2 with L = gamma'(t) W(gamma(t)) ||v_model - v_target||^2.
/// When grad is non-null it receives the gradient w.r.t. the net parameters.
double adaptive_objective(const LogSnrSchedule& s, const VelocityModel& model, const MonotoneGammaNet& net,
                          const AdaptiveBatch& batch, std::vector<double>* grad);

struct AdaptiveStepResult {
  double objective;
  bool skipped;
};

/// One optimizer step on the net with the model frozen.
AdaptiveStepResult adaptive_is_step(const LogSnrSchedule& s, const VelocityModel& model, MonotoneGammaNet& net,
                                    const AdaptiveBatch& batch, AdamState& opt, const AdamConfig& cfg);

/// Fixed (x0, eps) pools for the variance diagnostics.
struct DiagnosticPools {
  std::vector<Vec> x0;
  std::vector<Vec> eps;
};

/// First n_data rows of `data` (n x d) and n_noise standard normal draws.
DiagnosticPools make_pools(const Eigen::MatrixXd& data, std::size_t n_data, std::size_t n_noise, std::uint64_t seed);

struct EstimatorStats {
  double mean = 0;
  double variance = 0;
  double stderr_mean = 0;
  std::size_t n = 0;
};

/// Statistics of the single-draw weighted loss: gamma from the strategy,
/// (x0, eps) uniformly from the pools.
EstimatorStats estimator_stats(const LogSnrSchedule& s, const VelocityField& model, StrategyKind kind,
                               const MonotoneGammaNet* net, const DiagnosticPools& pools, std::size_t n_draws,
                               std::uint64_t seed);

struct VarianceBin {
  double lo, hi;
  std::size_t count = 0;
  std::optional<double> mean;
  std::optional<double> variance;  // absent when fewer than two draws landed
};

struct VarianceProfile {
  std::vector<VarianceBin> bins;
  std::optional<std::size_t> peak_bin;
};

VarianceProfile variance_profile(const LogSnrSchedule& s, const VelocityField& model, StrategyKind kind,
                                 const MonotoneGammaNet* net, const DiagnosticPools& pools, std::size_t n_bins,
                                 std::size_t n_draws, std::uint64_t seed);

struct MseProfile {
  std::vector<double> gamma;
  std::vector<double> mse_velocity;  // E||v_model - v||^2 (normalized velocity)
  std::vector<double> mse_noise;     // E||eps_model - eps||^2 after conversion
  double ratio_velocity = 0;         // max / min over the grid
  double ratio_noise = 0;
};

MseProfile mse_profile(const LogSnrSchedule& s, const VelocityField& model, const DiagnosticPools& pools,
                       const std::vector<double>& gammas);

}  // namespace dode
