#include "dode/odeflow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dode/errors.hpp"
#include "dode/rng.hpp"

namespace dode {

void SolverConfig::validate() const {
  if (!(rtol > 0) || !(atol > 0)) throw InvalidInput("integrate: rtol and atol must be > 0");
  if (max_steps == 0) throw InvalidInput("integrate: max_steps must be >= 1");
  if (initial_step && !(*initial_step > 0)) throw InvalidInput("integrate: initial_step must be > 0");
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b_hat
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

double rms_scaled(const Vec& v, const Vec& y, double atol, double rtol) {
  const Vec sc = (atol + rtol * y.array().abs()).matrix();
  return std::sqrt((v.array() / sc.array()).square().mean());
}

}  // namespace

SolverRun integrate(const OdeRhs& rhs, const Vec& y0, double t0, double t1, const SolverConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(t0) || !std::isfinite(t1) || t0 == t1)
    throw InvalidInput("integrate: need finite gamma_from != gamma_to");
  if (!y0.allFinite()) throw NumericFailure("integrate: non-finite initial state");
  SolverRun run;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  auto f = [&](double t, const Vec& y) {
    ++run.nfe;
    Vec k = rhs(t, y);
    if (!k.allFinite()) throw NumericFailure("integrate: non-finite derivative at t=" + std::to_string(t));
    return k;
  };

  Vec y = y0;
  double t = t0;
  Vec k1 = f(t, y);

  double h;
  if (cfg.initial_step) {
    h = std::min(*cfg.initial_step, span);
  } else {
    const double d0 = rms_scaled(y, y, cfg.atol, cfg.rtol);
    const double d1 = rms_scaled(k1, y, cfg.atol, cfg.rtol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    const Vec y1 = y + dir * h0 * k1;
    const Vec f1 = f(t + dir * h0, y1);
    const double d2 = rms_scaled(f1 - k1, y, cfg.atol, cfg.rtol) / h0;
    if (std::max(d1, d2) <= 1e-15) {
      h = span;  // nothing moves; let error control decide
    } else {
      const double h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
      h = std::min(100.0 * h0, h1);
    }
  }
  h = std::min(h, span);

  constexpr double safe = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
  const double expo = 0.2 - beta * 0.75;
  double err_old = 1e-4;
  bool last_rejected = false;
  std::size_t attempts = 0;

  while (dir * (t1 - t) > 0) {
    if (++attempts > cfg.max_steps)
      throw NonConvergence("integrate: max_steps (" + std::to_string(cfg.max_steps) + ") exceeded at t=" +
                               std::to_string(t),
                           y, t);
    const double remaining = std::abs(t1 - t);
    bool final_step = false;
    if (h >= remaining * (1.0 - 1e-12)) {
      h = remaining;
      final_step = true;
    }
    const double hs = dir * h;
    const Vec k2 = f(t + c2 * hs, y + hs * (a21 * k1));
    const Vec k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    const Vec k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vec k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const double t_new = final_step ? t1 : t + hs;
    const Vec k6 = f(t_new, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vec y_new = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    if (!y_new.allFinite()) throw NumericFailure("integrate: non-finite state at t=" + std::to_string(t_new));
    const Vec k7 = f(t_new, y_new);
    const Vec err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const Vec sc = (cfg.atol + cfg.rtol * y.array().abs().max(y_new.array().abs())).matrix();
    const double en = std::sqrt((err.array() / sc.array()).square().mean());

    const double fac11 = std::pow(std::max(en, 1e-300), expo);
    if (en <= 1.0) {
      double fac = fac11 / std::pow(err_old, beta);
      fac = std::clamp(fac / safe, 1.0 / fac_max, 1.0 / fac_min);
      double h_new = h / fac;
      if (last_rejected) h_new = std::min(h_new, h);
      err_old = std::max(en, 1e-4);
      ++run.accepted;
      t = t_new;
      y = y_new;
      k1 = k7;
      h = h_new;
      last_rejected = false;
    } else {
      const double fac = std::min(1.0 / fac_min, fac11 / safe);
      h = h / fac;
      ++run.rejected;
      last_rejected = true;
    }
  }
  run.final_state = std::move(y);
  return run;
}

Vec drift(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma) {
  if (x.size() != model.dim()) throw InvalidInput("drift: dimension mismatch");
  return eval_schedule(s, gamma).norm * model.value(x, gamma);
}

std::string DivergenceMode::label() const {
  if (kind == Exact) return "exact";
  return std::string("hutchinson-") + (probe == ProbeKind::Rademacher ? "rademacher" : "gaussian") + "-" +
         std::to_string(probes);
}

double divergence(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma,
                  const DivergenceMode& mode) {
  const double n = eval_schedule(s, gamma).norm;
  if (mode.kind == DivergenceMode::Exact) return n * model.trace_jacobian(x, gamma);
  Rng rng = task_rng(mode.seed, 0);
  const Mat U = draw_probes(model.dim(), mode.probes, mode.probe, rng);
  const Mat JU = model.jvp(x, gamma, U, nullptr);
  return n * U.cwiseProduct(JU).sum() / static_cast<double>(mode.probes);
}

double prior_variance(const LogSnrSchedule& s, double prior_data_scale) {
  const ScheduleEval e = eval_schedule(s, s.gamma_max);
  return e.alpha * e.alpha * prior_data_scale * prior_data_scale + e.sigma * e.sigma;
}

double prior_log_density(const LogSnrSchedule& s, const Vec& x, double prior_data_scale) {
  const double v = prior_variance(s, prior_data_scale);
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2 * std::numbers::pi * v) - 0.5 * x.squaredNorm() / v;
}

LikelihoodResult ode_log_likelihood(const LogSnrSchedule& s, const VelocityField& model, const Vec& x_eps,
                                    const LikelihoodConfig& cfg) {
  const Eigen::Index d = model.dim();
  if (x_eps.size() != d) throw InvalidInput("ode_log_likelihood: dimension mismatch");
  const double g0 = std::isnan(cfg.gamma_start) ? s.gamma_min : cfg.gamma_start;
  Mat U;
  double uscale = 1.0;
  const bool hutch = cfg.divergence.kind == DivergenceMode::Hutchinson;
  if (hutch) {
    Rng rng = task_rng(cfg.divergence.seed, 0);
    U = draw_probes(d, cfg.divergence.probes, cfg.divergence.probe, rng);
    uscale = 1.0 / static_cast<double>(cfg.divergence.probes);
  } else {
    U = Mat::Identity(d, d);
  }
  OdeRhs rhs = [&](double g, const Vec& y) {
    const double n = eval_schedule(s, g).norm;
    Vec v;
    const Mat JU = model.jvp(y.head(d), g, U, &v);
    Vec out(d + 1);
    out.head(d) = n * v;
    out[d] = n * uscale * U.cwiseProduct(JU).sum();
    return out;
  };
  Vec y0(d + 1);
  y0.head(d) = x_eps;
  y0[d] = 0.0;
  const SolverRun run = integrate(rhs, y0, g0, s.gamma_max, cfg.solver);
  LikelihoodResult r;
  r.x_end = run.final_state.head(d);
  r.delta_logp = run.final_state[d];
  r.logp = prior_log_density(s, r.x_end, cfg.prior_data_scale) + r.delta_logp;
  r.nfe = run.nfe;
  return r;
}

SolverRun transport(const LogSnrSchedule& s, const VelocityField& model, const Vec& x, double gamma_from,
                    double gamma_to, const SolverConfig& cfg) {
  OdeRhs rhs = [&](double g, const Vec& y) { return drift(s, model, y, g); };
  return integrate(rhs, x, gamma_from, gamma_to, cfg);
}

double SampleResult::mean_nfe() const {
  if (nfe.empty()) return 0.0;
  double s = 0;
  for (auto n : nfe) s += static_cast<double>(n);
  return s / static_cast<double>(nfe.size());
}

SampleResult ode_sample(const LogSnrSchedule& s, const VelocityField& model, std::size_t n,
                        const SolverConfig& cfg, std::uint64_t seed, double prior_data_scale) {
  if (n == 0) throw InvalidInput("ode_sample: n must be >= 1");
  const Eigen::Index d = model.dim();
  const double sd = std::sqrt(prior_variance(s, prior_data_scale));
  SampleResult r;
  r.samples.resize(d, static_cast<Eigen::Index>(n));
  r.nfe.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = task_rng(seed, i);
    const Vec xT = sd * standard_normal(d, rng);
    const SolverRun run = transport(s, model, xT, s.gamma_max, s.gamma_min, cfg);
    r.samples.col(static_cast<Eigen::Index>(i)) = run.final_state;
    r.nfe[i] = run.nfe;
  }
  return r;
}

}  // namespace dode
