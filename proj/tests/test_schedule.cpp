#include <doctest.h>

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dode/errors.hpp"
#include "dode/schedule.hpp"

using namespace dode;

namespace {

const LogSnrSchedule VP{ScheduleKind::VP, -13.3, 5.0};
const LogSnrSchedule SP{ScheduleKind::SP, -13.3, 5.0};

// Closed forms written out in long double, kept apart from the library code.
long double ref_alpha(ScheduleKind k, long double g) {
  return k == ScheduleKind::VP ? std::sqrt(1.0L / (1.0L + std::exp(g))) : 1.0L / (1.0L + std::exp(g / 2));
}
long double ref_sigma(ScheduleKind k, long double g) {
  return k == ScheduleKind::VP ? std::sqrt(1.0L / (1.0L + std::exp(-g))) : 1.0L / (1.0L + std::exp(-g / 2));
}

std::vector<double> grid1000() {
  std::vector<double> g;
  for (int i = 0; i < 1000; ++i) g.push_back(-13.3 + 18.3 * i / 999.0);
  return g;
}

}  // namespace

TEST_CASE("gamma = 0 closed forms") {
  const auto v = eval_schedule(VP, 0.0);
  CHECK(v.alpha == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(v.sigma == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(v.norm == doctest::Approx(0.25).epsilon(1e-15));
  const auto s = eval_schedule(SP, 0.0);
  CHECK(s.alpha == doctest::Approx(0.5));
  CHECK(s.sigma == doctest::Approx(0.5));
  CHECK(s.norm == doctest::Approx(0.25 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("tau at gamma_min") {
  const auto e = eval_schedule(VP, -13.3);
  CHECK(e.alpha / e.sigma == doctest::Approx(std::exp(6.65)).epsilon(1e-13));
  CHECK(e.alpha / (256 * e.sigma) == doctest::Approx(3.01869).epsilon(1e-4 / 3.01869));
}

TEST_CASE("non-finite gamma is rejected") {
  CHECK_THROWS_AS(eval_schedule(VP, std::nan("")), InvalidInput);
  CHECK_THROWS_AS(eval_schedule(SP, INFINITY), InvalidInput);
  CHECK_THROWS_AS(parse_schedule_kind("ve"), InvalidInput);
  CHECK(parse_schedule_kind("sp") == ScheduleKind::SP);
}

TEST_CASE("constraint residuals on the grid") {
  double vp = 0, sp = 0;
  for (double g : grid1000()) {
    const auto a = eval_schedule(VP, g), b = eval_schedule(SP, g);
    vp = std::max(vp, std::abs(a.alpha * a.alpha + a.sigma * a.sigma - 1));
    sp = std::max(sp, std::abs(b.alpha + b.sigma - 1));
  }
  CHECK(vp < 1e-12);
  CHECK(sp < 1e-12);
}

TEST_CASE("values agree with long double closed forms") {
  for (auto k : {ScheduleKind::VP, ScheduleKind::SP})
    for (double g : grid1000()) {
      const auto e = eval_schedule({k, -13.3, 5.0}, g);
      CHECK(std::abs(e.alpha - static_cast<double>(ref_alpha(k, g))) <= 1e-15 * e.alpha + 1e-300);
      CHECK(std::abs(e.sigma - static_cast<double>(ref_sigma(k, g))) <= 1e-14 * e.sigma);
    }
}

TEST_CASE("derivatives match central differences at step 1e-5") {
  const long double h = 1e-5L;
  for (auto k : {ScheduleKind::VP, ScheduleKind::SP}) {
    double worst = 0;
    for (double g : grid1000()) {
      const auto e = eval_schedule({k, -13.3, 5.0}, g);
      const long double fa = (ref_alpha(k, g + h) - ref_alpha(k, g - h)) / (2 * h);
      const long double fs = (ref_sigma(k, g + h) - ref_sigma(k, g - h)) / (2 * h);
      worst = std::max(worst, static_cast<double>(std::abs((fa - e.dalpha) / fa)));
      worst = std::max(worst, static_cast<double>(std::abs((fs - e.dsigma) / fs)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("g^2 identity: 2 sigma dsigma - 2 (dalpha / alpha) sigma^2 = sigma^2") {
  for (const auto& s : {VP, SP}) {
    double worst = 0;
    for (double g : grid1000()) {
      const auto e = eval_schedule(s, g);
      const double g2 = 2 * e.sigma * e.dsigma - 2 * (e.dalpha / e.alpha) * e.sigma * e.sigma;
      worst = std::max(worst, std::abs(g2 / (e.sigma * e.sigma) - 1));
      worst = std::max(worst, std::abs(std::hypot(e.dalpha, e.dsigma) / e.norm - 1));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("designed normalizer matches quadrature and frozen values") {
  // log(sigma^2(5) / sigma^2(-13.3)), 30-digit reference
  CHECK(designed_normalizer(VP) == doctest::Approx(13.2932863260).epsilon(1e-11));
  CHECK(designed_normalizer(SP) == doctest::Approx(11.2991079622).epsilon(1e-11));
  for (const auto& s : {VP, SP}) {
    auto f = [&](double g) { return static_cast<double>(std::pow(ref_alpha(s.kind, g), 2)); };
    const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -13.3, 5.0, 15, 1e-14);
    CHECK(designed_normalizer(s) == doctest::Approx(q).epsilon(1e-10));
  }
}

TEST_CASE("designed_gamma_of_t endpoints, monotonicity and inverse") {
  CHECK(designed_gamma_of_t(VP, 0.0) == -13.3);
  CHECK(designed_gamma_of_t(VP, 1.0) == 5.0);
  CHECK(designed_gamma_of_t(SP, 0.0) == -13.3);
  CHECK(designed_gamma_of_t(SP, 1.0) == 5.0);
  CHECK_THROWS_AS(designed_gamma_of_t(VP, -0.01), InvalidInput);
  CHECK_THROWS_AS(designed_gamma_of_t(VP, 1.01), InvalidInput);
  for (const auto& [s, tol] : {std::pair{VP, 1e-8}, std::pair{SP, 1e-7}}) {
    double prev = -INFINITY, worst = 0;
    for (int i = 0; i <= 2000; ++i) {
      const double t = i / 2000.0;
      const double g = designed_gamma_of_t(s, t);
      CHECK(g > prev);
      prev = g;
      worst = std::max(worst, std::abs(designed_cdf(s, g) - t));
    }
    CHECK(worst < tol);
  }
}

TEST_CASE("designed density") {
  // alpha^2(-13.3) = 1 - sigma^2(-13.3); sigma^2(-13.3) = 1.67449040551e-6
  CHECK(designed_density(VP, -13.3) * designed_normalizer(VP) == doctest::Approx(1 - 1.67449040551e-6).epsilon(1e-14));
  CHECK(designed_density(VP, -14.0) == 0.0);
  CHECK(designed_density(VP, 5.5) == 0.0);
  for (const auto& s : {VP, SP}) {
    auto f = [&](double g) { return designed_density(s, g); };
    CHECK(boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -13.3, 5.0, 15, 1e-14) ==
          doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("stable helpers at extreme arguments") {
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(std::isfinite(log_sigmoid(800.0)));
}
