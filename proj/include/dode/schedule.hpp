#pragma once

#include <string>
#include <string_view>

namespace dode {

enum class ScheduleKind { VP, SP };

std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

/// Noise schedule in negative log-SNR time gamma = log(sigma^2 / alpha^2).
struct LogSnrSchedule {
  ScheduleKind kind = ScheduleKind::VP;
  double gamma_min = -13.3;
  double gamma_max = 5.0;

  void validate() const;
};

struct ScheduleEval {
  double alpha;
  double sigma;
  double dalpha;  // d alpha / d gamma
  double dsigma;  // d sigma / d gamma
  double norm;    // sqrt(dalpha^2 + dsigma^2)
};

ScheduleEval eval_schedule(const LogSnrSchedule& s, double gamma);

// Stable scalar helpers shared by the rest of the library.
double softplus(double x);
double sigmoid(double x);
double log_sigmoid(double x);

/// Importance density p(gamma) proportional to alpha_gamma^2 on [gamma_min, gamma_max].
double designed_normalizer(const LogSnrSchedule& s);
double designed_cdf(const LogSnrSchedule& s, double gamma);
double designed_gamma_of_t(const LogSnrSchedule& s, double t);
double designed_density(const LogSnrSchedule& s, double gamma);

}  // namespace dode
