#include "dode/schedule.hpp"

#include <cmath>

#include "dode/errors.hpp"

namespace dode {

std::string to_string(ScheduleKind k) { return k == ScheduleKind::VP ? "vp" : "sp"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "vp" || s == "VP") return ScheduleKind::VP;
  if (s == "sp" || s == "SP") return ScheduleKind::SP;
  throw InvalidInput("schedule: unknown kind '" + std::string(s) + "' (expected vp or sp)");
}

void LogSnrSchedule::validate() const {
  if (!std::isfinite(gamma_min) || !std::isfinite(gamma_max) || !(gamma_min < gamma_max))
    throw InvalidInput("schedule: need finite gamma_min < gamma_max");
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return -softplus(-x); }

ScheduleEval eval_schedule(const LogSnrSchedule& s, double gamma) {
  if (!std::isfinite(gamma)) throw InvalidInput("eval_schedule: non-finite gamma");
  ScheduleEval e{};
  if (s.kind == ScheduleKind::VP) {
    e.alpha = std::sqrt(sigmoid(-gamma));
    e.sigma = std::sqrt(sigmoid(gamma));
    e.dalpha = -0.5 * e.alpha * e.sigma * e.sigma;
    e.dsigma = 0.5 * e.alpha * e.alpha * e.sigma;
    e.norm = 0.5 * e.alpha * e.sigma;
  } else {
    e.alpha = sigmoid(-0.5 * gamma);
    e.sigma = sigmoid(0.5 * gamma);
    e.dalpha = -0.5 * e.alpha * e.sigma;
    e.dsigma = 0.5 * e.alpha * e.sigma;
    e.norm = e.alpha * e.sigma / std::sqrt(2.0);
  }
  return e;
}

namespace {

// Antiderivative of alpha^2 for SP, up to the factor 2.
double sp_F(double g) { return log_sigmoid(0.5 * g) - sigmoid(0.5 * g); }

}  // namespace

double designed_normalizer(const LogSnrSchedule& s) {
  s.validate();
  if (s.kind == ScheduleKind::VP) return softplus(-s.gamma_min) - softplus(-s.gamma_max);
  return 2.0 * (sp_F(s.gamma_max) - sp_F(s.gamma_min));
}

double designed_cdf(const LogSnrSchedule& s, double gamma) {
  s.validate();
  if (gamma <= s.gamma_min) return 0.0;
  if (gamma >= s.gamma_max) return 1.0;
  if (s.kind == ScheduleKind::VP)
    return (softplus(-s.gamma_min) - softplus(-gamma)) / designed_normalizer(s);
  return (sp_F(gamma) - sp_F(s.gamma_min)) / (sp_F(s.gamma_max) - sp_F(s.gamma_min));
}

double designed_gamma_of_t(const LogSnrSchedule& s, double t) {
  s.validate();
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("designed_gamma_of_t: t outside [0,1]");
  if (t == 0.0) return s.gamma_min;
  if (t == 1.0) return s.gamma_max;
  if (s.kind == ScheduleKind::VP) {
    // -log sigma^2 falls linearly in t; invert softplus with expm1.
    const double a = softplus(-s.gamma_min) - designed_normalizer(s) * t;
    return -std::log(std::expm1(a));
  }
  const double f0 = sp_F(s.gamma_min);
  const double target = f0 + t * (sp_F(s.gamma_max) - f0);
  double lo = s.gamma_min - 1.0, hi = s.gamma_max + 1.0;
  while (hi - lo >= 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (sp_F(mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double designed_density(const LogSnrSchedule& s, double gamma) {
  s.validate();
  if (!(gamma >= s.gamma_min && gamma <= s.gamma_max)) return 0.0;
  const double a = eval_schedule(s, gamma).alpha;
  return a * a / designed_normalizer(s);
}

}  // namespace dode
