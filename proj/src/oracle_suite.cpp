#include "dode/oracle_suite.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <json.hpp>

#include "dode/analytic.hpp"
#include "dode/data.hpp"
#include "dode/dequant.hpp"
#include "dode/objectives.hpp"
#include "dode/odeflow.hpp"
#include "dode/rng.hpp"

namespace dode {

bool OracleReport::all_passed() const { return first_failure() == nullptr; }

const OracleCheck* OracleReport::first_failure() const {
  for (const auto& c : checks)
    if (!c.passed) return &c;
  return nullptr;
}

std::string OracleReport::to_json() const {
  nlohmann::json j;
  j["all_passed"] = all_passed();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"name", c.name},
                           {"passed", c.passed},
                           {"error", std::isfinite(c.error) ? nlohmann::json(c.error) : nlohmann::json("nan")},
                           {"tolerance", c.tolerance},
                           {"detail", c.detail}});
  if (const auto* f = first_failure()) j["first_failure"] = f->name;
  return j.dump(2);
}

namespace {

std::vector<double> grid(const LogSnrSchedule& s, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = s.gamma_min + (s.gamma_max - s.gamma_min) * i / (n - 1);
  return g;
}

OracleCheck make(std::string name, double err, double tol, std::string detail = {}) {
  return {std::move(name), std::isfinite(err) && err <= tol, err, tol, std::move(detail)};
}

const LogSnrSchedule kVP{ScheduleKind::VP, -13.3, 5.0};
const LogSnrSchedule kSP{ScheduleKind::SP, -13.3, 5.0};

}  // namespace

OracleReport run_oracle_suite(std::uint64_t seed, const ScheduleFn& sf) {
  OracleReport rep;
  auto& out = rep.checks;

  for (const auto& s : {kVP, kSP}) {
    const std::string tag = to_string(s.kind);
    double ec = 0, eg = 0, efd = 0, eg2 = 0;
    for (double g : grid(s, 1000)) {
      const ScheduleEval e = sf(s, g);
      ec = std::max(ec, std::abs(s.kind == ScheduleKind::VP ? e.alpha * e.alpha + e.sigma * e.sigma - 1.0
                                                            : e.alpha + e.sigma - 1.0));
      eg = std::max(eg, std::abs(std::log(e.sigma * e.sigma / (e.alpha * e.alpha)) - g) / std::max(1.0, std::abs(g)));
      const double h = 1e-5;
      const ScheduleEval ep = sf(s, g + h), em = sf(s, g - h);
      const double fa = (ep.alpha - em.alpha) / (2 * h), fs = (ep.sigma - em.sigma) / (2 * h);
      // double-precision differencing floor ~1e-11 absolute
      efd = std::max(efd, std::abs(fa - e.dalpha) / (std::abs(e.dalpha) + 1e-5));
      efd = std::max(efd, std::abs(fs - e.dsigma) / (std::abs(e.dsigma) + 1e-5));
      const double lhs = 2 * e.sigma * e.dsigma - 2 * (e.dalpha / e.alpha) * e.sigma * e.sigma;
      eg2 = std::max(eg2, std::abs(lhs - e.sigma * e.sigma) / (e.sigma * e.sigma));
      const double nrm = std::sqrt(e.dalpha * e.dalpha + e.dsigma * e.dsigma);
      eg2 = std::max(eg2, std::abs(nrm - e.norm) / e.norm);
    }
    out.push_back(make("schedule_constraint_" + tag, ec, 1e-12));
    out.push_back(make("schedule_logsnr_recovery_" + tag, eg, 1e-12));
    out.push_back(make("schedule_derivative_fd_" + tag, efd, 1e-6));
    out.push_back(make("schedule_g2_identity_" + tag, eg2, 1e-10));
  }

  {
    double err = 0;
    for (const auto& s : {kVP, kSP}) {
      auto f = [&](double g) { return std::pow(eval_schedule(s, g).alpha, 2); };
      const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, s.gamma_min, s.gamma_max, 15, 1e-14);
      err = std::max(err, std::abs(q - designed_normalizer(s)) / q);
      for (double t = 0.01; t < 1.0; t += 0.01)
        err = std::max(err, std::abs(designed_cdf(s, designed_gamma_of_t(s, t)) - t));
    }
    out.push_back(make("designed_is_inverse_transform", err, 1e-7));
  }

  {
    const auto p = TruncNormParams::from_schedule(kVP);
    const double err = std::max(std::abs(p.tau - 3.01869) / 1e-4, std::abs(p.Z - 0.9974613) / 1e-6);
    out.push_back(make("tn_constants", err, 1.0, "tau=" + std::to_string(p.tau) + " Z=" + std::to_string(p.Z)));
    out.push_back(make("tn_entropy_correction", std::abs(tn_entropy_correction(p, 1) + 0.01522), 1e-5));
  }

  Rng rng = task_rng(seed, 1);
  std::uniform_real_distribution<double> ug(-13.3, 5.0);
  {
    const PredictorKind kinds[] = {PredictorKind::Score, PredictorKind::Noise, PredictorKind::Data,
                                   PredictorKind::Velocity, PredictorKind::NormalizedVelocity};
    double err = 0;
    for (const auto& s : {kVP, kSP})
      for (int i = 0; i < 100; ++i) {
        const double g = std::uniform_real_distribution<double>(-8.0, 5.0)(rng);
        const Vec x = standard_normal(3, rng), v = standard_normal(3, rng);
        for (auto a : kinds)
          for (auto b : kinds) {
            if (a == b) continue;
            const Vec back = convert_predictor(s, b, a, convert_predictor(s, a, b, v, x, g), x, g);
            err = std::max(err, (back - v).norm() / std::max(1.0, v.norm()));
          }
      }
    out.push_back(make("predictor_round_trips", err, 1e-10));
  }

  {
    double err = 0;
    for (const auto& s : {kVP, kSP}) {
      const auto o = GaussianMixtureOracle::gaussian(s, 2, 0.7);
      for (int i = 0; i < 100; ++i) {
        const double g = ug(rng);
        const Vec x = standard_normal(2, rng);
        const Vec v = convert_predictor(s, PredictorKind::Score, PredictorKind::Velocity, o.score(x, g), x, g);
        err = std::max(err, (v - o.velocity(x, g)).norm() / std::max(1e-3, o.velocity(x, g).norm()));
      }
    }
    out.push_back(make("score_to_velocity_gaussian", err, 1e-10));
  }

  {
    double err = 0;
    for (const auto& s : {kVP, kSP}) {
      const auto o = GaussianMixtureOracle::gaussian(s, 3, 0.5);
      for (int i = 0; i < 20; ++i) {
        const double g = ug(rng);
        const Vec x = standard_normal(3, rng);
        const ScheduleEval e = eval_schedule(s, g);
        const double lhs = o.velocity_divergence(x, g);
        const double rhs = (e.dsigma / e.sigma) * 3 - 2.0 / (e.sigma * e.sigma) * o.conditional_velocity_error(x, g);
        err = std::max(err, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300));
      }
    }
    out.push_back(make("trace_identity_gaussian", err, 1e-8));
  }

  {
    const auto o = GaussianMixtureOracle::gaussian(kVP, 2, 0.5);
    LikelihoodConfig lc;
    lc.prior_data_scale = 0.5;
    double err = 0;
    for (int i = 0; i < 5; ++i) {
      const Vec x = standard_normal(2, rng);
      err = std::max(err, std::abs(ode_log_likelihood(kVP, o, x, lc).logp - o.log_density(x, kVP.gamma_min)));
    }
    out.push_back(make("ode_logp_gaussian", err, 2e-3));
  }

  {
    // Analytic model density; truth is a normal CDF difference over each bin.
    const double s0 = 0.3;
    const auto o = GaussianMixtureOracle::gaussian(kVP, 1, s0);
    const auto p = TruncNormParams::from_schedule(kVP);
    const double a = p.alpha_eps, v = a * a * s0 * s0 + p.sigma_eps * p.sigma_eps;
    LogDensityFn f = [&](const Vec& x) { return o.log_density(x, kVP.gamma_min); };
    double worst = -INFINITY;
    for (int X = 40; X < 216; X += 7) {
      const double lo = a * (level_value(X) - 1.0 / 256), hi = a * (level_value(X) + 1.0 / 256);
      const double truth = std::log(0.5 * (std::erfc(-hi / std::sqrt(2 * v)) - std::erfc(-lo / std::sqrt(2 * v))));
      BoundOptions opt;
      opt.seed = seed;
      opt.datum = static_cast<std::uint64_t>(X);
      const double b = tn_bound(p, f, Eigen::VectorXi::Constant(1, X), opt).total_logp;
      worst = std::max(worst, b - truth);
    }
    out.push_back(make("tn_bound_below_bin_truth", std::max(worst, 0.0), 0.0,
                       "max(bound - truth) = " + std::to_string(worst)));
  }

  {
    const auto pc = preconditioning(kVP, 0.37, 1.0);
    const auto e = eval_schedule(kVP, 0.37);
    const double err = std::max({std::abs(pc.c_in - 1), std::abs(pc.c_skip - e.sigma), std::abs(pc.c_out - e.alpha)});
    out.push_back(make("preconditioning_vp_unit_data", err, 1e-12));
  }
  return rep;
}

}  // namespace dode
