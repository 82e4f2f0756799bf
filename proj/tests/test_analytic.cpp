#include <doctest.h>

#include <cmath>

#include "dode/analytic.hpp"
#include "dode/errors.hpp"

using namespace dode;

namespace {

const LogSnrSchedule VP{ScheduleKind::VP, -13.3, 5.0};
const LogSnrSchedule SP{ScheduleKind::SP, -13.3, 5.0};

GaussianMixtureOracle three_blobs(const LogSnrSchedule& s) {
  return GaussianMixtureOracle(s, {{0.2, (Vec(2) << -1.0, 0.5).finished(), 0.3},
                                   {0.5, (Vec(2) << 0.8, -0.2).finished(), 0.5},
                                   {0.3, (Vec(2) << 0.0, 1.2).finished(), 0.15}});
}

}  // namespace

TEST_CASE("gaussian marginal density and score") {
  const auto o = GaussianMixtureOracle::gaussian(VP, 2, 0.5);
  const Vec x = (Vec(2) << 0.3, -0.7).finished();
  const double g = -1.2;
  const auto e = eval_schedule(VP, g);
  const double v = e.alpha * e.alpha * 0.25 + e.sigma * e.sigma;
  CHECK(o.log_density(x, g) == doctest::Approx(-std::log(2 * M_PI * v) - x.squaredNorm() / (2 * v)).epsilon(1e-14));
  CHECK((o.score(x, g) + x / v).norm() < 1e-14);
}

TEST_CASE("mixture score matches finite differences of the log density") {
  for (const auto& s : {VP, SP}) {
    const auto o = three_blobs(s);
    Rng rng(3);
    for (double g : {-8.0, -1.0, 2.5}) {
      const Vec x = standard_normal(2, rng);
      const Vec sc = o.score(x, g);
      for (int j = 0; j < 2; ++j) {
        Vec xp = x, xm = x;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        CHECK(sc[j] == doctest::Approx((o.log_density(xp, g) - o.log_density(xm, g)) / 2e-6).epsilon(1e-6).scale(1e-3));
      }
    }
  }
}

TEST_CASE("oracle velocity jacobian matches finite differences") {
  for (const auto& s : {VP, SP}) {
    const auto o = three_blobs(s);
    Rng rng(5);
    for (double g : {-6.0, 0.0, 3.0}) {
      const Vec x = standard_normal(2, rng);
      const Mat J = o.jvp(x, g, Mat::Identity(2, 2), nullptr);
      for (int j = 0; j < 2; ++j) {
        Vec xp = x, xm = x;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        const Vec col = (o.value(xp, g) - o.value(xm, g)) / 2e-6;
        CHECK((col - J.col(j)).norm() < 1e-6 * (1 + col.norm()));
      }
      const auto e = eval_schedule(s, g);
      CHECK(o.velocity_divergence(x, g) == doctest::Approx(e.norm * J.trace()).epsilon(1e-12));
    }
  }
}

TEST_CASE("divergence identity with the posterior velocity error") {
  for (const auto& s : {VP, SP}) {
    const auto o = three_blobs(s);
    Rng rng(9);
    for (int i = 0; i < 10; ++i) {
      const double g = -10.0 + 14.0 * uniform01(rng);
      const Vec x = standard_normal(2, rng);
      const auto e = eval_schedule(s, g);
      // Tweedie covariance: tr(d E[x0|x] / dx) = alpha total_var / sigma^2
      const double rhs = e.dsigma / e.sigma * 2 - 2.0 / (e.sigma * e.sigma) * o.conditional_velocity_error(x, g);
      CHECK(o.velocity_divergence(x, g) == doctest::Approx(rhs).epsilon(1e-9));
    }
  }
}

TEST_CASE("posterior sampling moments") {
  const auto o = three_blobs(VP);
  Rng rng(17);
  const Vec x = (Vec(2) << 0.2, 0.1).finished();
  const double g = 0.5;
  const auto post = o.posterior(x, g);
  const int n = 200000;
  Vec mean = Vec::Zero(2);
  double sq = 0;
  std::vector<Vec> draws;
  for (int i = 0; i < n; ++i) draws.push_back(o.sample_posterior_x0(x, g, rng));
  for (const auto& d : draws) mean += d;
  mean /= n;
  for (const auto& d : draws) sq += (d - post.overall_mean).squaredNorm();
  const double se = std::sqrt(post.total_var / n);
  CHECK((mean - post.overall_mean).cwiseAbs().maxCoeff() < 4 * se);
  CHECK(sq / n == doctest::Approx(post.total_var).epsilon(0.02));
}

TEST_CASE("point-mass components") {
  GaussianMixtureOracle o(VP, {{0.5, Vec::Constant(1, -0.5), 0.0}, {0.5, Vec::Constant(1, 0.5), 0.0}});
  CHECK_THROWS_AS(o.data_log_density(Vec::Zero(1)), InvalidInput);
  CHECK(std::isfinite(o.log_density(Vec::Zero(1), -5.0)));
  // far to the right, x0 = 0.5 almost surely
  const auto p = o.posterior(Vec::Constant(1, 3.0), -5.0);
  CHECK(p.overall_mean[0] == doctest::Approx(0.5));
  CHECK(p.total_var < 1e-12);
}

TEST_CASE("weights are normalised") {
  GaussianMixtureOracle o(VP, {{2.0, Vec::Zero(1), 1.0}, {6.0, Vec::Ones(1), 1.0}});
  CHECK(o.components()[0].weight == doctest::Approx(0.25));
  CHECK_THROWS_AS(GaussianMixtureOracle(VP, {}), InvalidInput);
}
