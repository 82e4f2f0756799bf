#include <doctest.h>

#include <cmath>

#include "dode/analytic.hpp"
#include "dode/errors.hpp"
#include "dode/objectives.hpp"

using namespace dode;

namespace {

const LogSnrSchedule VP{ScheduleKind::VP, -13.3, 5.0};
const LogSnrSchedule SP{ScheduleKind::SP, -13.3, 5.0};
constexpr PredictorKind kAll[] = {PredictorKind::Score, PredictorKind::Noise, PredictorKind::Data,
                                  PredictorKind::Velocity, PredictorKind::NormalizedVelocity};

std::vector<PathSample> batch_for(const LogSnrSchedule& s, Eigen::Index d, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PathSample> b;
  for (int i = 0; i < n; ++i)
    b.push_back(sample_path(s, standard_normal(d, rng), standard_normal(d, rng), -10.0 + 14.0 * uniform01(rng)));
  return b;
}

VelocityModel random_model(Eigen::Index d, std::uint64_t seed) {
  ModelShape sh;
  sh.data_dim = d;
  sh.hidden = {12, 12};
  sh.embed_freqs = 2;
  VelocityModel m = VelocityModel::initialized(sh, seed);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.25);
  for (auto& p : m.params()) p += n(rng);
  return m;
}

}  // namespace

TEST_CASE("sample_path examples") {
  const Vec x0 = (Vec(2) << 1.0, 0.0).finished(), eps = (Vec(2) << 0.0, 1.0).finished();
  const auto p = sample_path(VP, x0, eps, 0.0);
  CHECK(p.x_gamma[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(p.x_gamma[1] == doctest::Approx(std::sqrt(0.5)));
  CHECK(p.v_target[0] == doctest::Approx(-std::sqrt(0.5)));
  CHECK(p.v_target[1] == doctest::Approx(std::sqrt(0.5)));

  const auto z = sample_path(VP, x0, Vec::Zero(2), -2.0);
  const auto e = eval_schedule(VP, -2.0);
  CHECK((z.x_gamma - e.alpha * x0).norm() == 0.0);
  CHECK((z.v_target - e.dalpha / e.norm * x0).norm() < 1e-15);

  for (double g : {-7.0, 0.0, 3.0}) CHECK(sample_path(SP, x0, x0, g).v_target.norm() < 1e-15);
  CHECK_THROWS_AS(sample_path(VP, x0, Vec::Zero(3), 0.0), InvalidInput);
}

TEST_CASE("VP normalized velocity is the v-prediction target") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const double g = -13.0 + 18.0 * uniform01(rng);
    const Vec x0 = standard_normal(3, rng), eps = standard_normal(3, rng);
    const auto e = eval_schedule(VP, g);
    CHECK((sample_path(VP, x0, eps, g).v_target - (e.alpha * eps - e.sigma * x0)).norm() < 1e-14);
  }
}

TEST_CASE("score to noise example") {
  const double g = -std::log(3.0);  // VP sigma = 0.5
  const Vec s = (Vec(2) << 1.0, -1.0).finished();
  const Vec eps = convert_predictor(VP, PredictorKind::Score, PredictorKind::Noise, s, Vec::Zero(2), g);
  CHECK(eps[0] == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(eps[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("conversion round trips at random points") {
  Rng rng(7);
  double worst = 0, worst_noise = 0;
  for (const auto& s : {VP, SP})
    for (int i = 0; i < 100; ++i) {
      const double g = -13.3 + 18.3 * uniform01(rng);
      const Vec x = standard_normal(2, rng), v = standard_normal(2, rng);
      for (auto a : kAll)
        for (auto b : kAll) {
          if (a == b) continue;
          const Vec back = convert_predictor(s, b, a, convert_predictor(s, a, b, v, x, g), x, g);
          const double err = (back - v).norm() / std::max(1.0, v.norm());
          worst = std::max(worst, err);
          if (a == PredictorKind::Noise && b == PredictorKind::Score) worst_noise = std::max(worst_noise, err);
        }
    }
  CHECK(worst < 1e-10);
  CHECK(worst_noise < 1e-12);
}

TEST_CASE("singular conversions name the pair") {
  const Vec x = Vec::Ones(2);
  try {
    convert_predictor(VP, PredictorKind::Noise, PredictorKind::Data, x, x, -1500.0);
    FAIL("expected SingularityError");
  } catch (const SingularityError& e) {
    CHECK(std::string(e.what()).find("noise -> data") != std::string::npos);
  }
  CHECK_THROWS_AS(convert_predictor(VP, PredictorKind::Data, PredictorKind::Noise, x, x, 1500.0), SingularityError);
  CHECK_THROWS_AS(convert_predictor(VP, PredictorKind::Data, PredictorKind::Noise, x, Vec::Ones(3), 0.0), InvalidInput);
}

TEST_CASE("gaussian score converts to the optimal velocity") {
  for (const auto& s : {VP, SP}) {
    const auto o = GaussianMixtureOracle::gaussian(s, 2, 0.7);
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
      const double g = -13.3 + 18.3 * uniform01(rng);
      const Vec x = standard_normal(2, rng);
      const auto e = eval_schedule(s, g);
      const Vec score = -x / (e.alpha * e.alpha * 0.49 + e.sigma * e.sigma);
      const Vec v = convert_predictor(s, PredictorKind::Score, PredictorKind::Velocity, score, x, g);
      CHECK((v - o.velocity(x, g)).norm() <= 1e-10 * std::max(1e-3, v.norm()));
    }
  }
}

TEST_CASE("likelihood weight closed forms") {
  for (double g : {-10.0, 0.0, 4.0}) {
    const double a = eval_schedule(VP, g).alpha, b = eval_schedule(SP, g).alpha;
    CHECK(likelihood_weight(VP, g) == doctest::Approx(0.5 * a * a).epsilon(1e-12));
    CHECK(likelihood_weight(SP, g) == doctest::Approx(b * b).epsilon(1e-12));
  }
}

TEST_CASE("fm_loss: exact model is zero, noise form equivalence") {
  const auto b = batch_for(VP, 2, 8, 1);
  std::vector<double> w(8, 1.0);
  struct Exact : VelocityField {
    const std::vector<PathSample>* b;
    Eigen::Index dim() const override { return 2; }
    Vec value(const Vec& x, double g) const override {
      for (const auto& p : *b)
        if (p.gamma == g && p.x_gamma == x) return p.v_target;
      return Vec::Zero(2);
    }
    Mat jvp(const Vec& x, double g, const Mat& t, Vec* v) const override {
      if (v) *v = value(x, g);
      return Mat::Zero(2, t.cols());
    }
  } exact;
  exact.b = &b;
  CHECK(fm_loss(VP, exact, b, w).total == 0.0);

  for (const auto& s : {VP, SP}) {
    const auto bs = batch_for(s, 3, 16, 4);
    const auto m = random_model(3, 9);
    std::vector<double> ws;
    for (int i = 0; i < 16; ++i) ws.push_back(0.5 + i);
    const LossValue lv = fm_loss(s, m, bs, ws);
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const auto& p = bs[i];
      const Vec eps_hat = convert_predictor(s, PredictorKind::NormalizedVelocity, PredictorKind::Noise,
                                            m.value(p.x_gamma, p.gamma), p.x_gamma, p.gamma);
      const double noise_form = ws[i] * 0.5 * (eps_hat - p.eps).squaredNorm();
      CHECK(lv.per_sample[i] == doctest::Approx(noise_form).epsilon(1e-10));
    }
    CHECK(lv.per_dim == doctest::Approx(lv.total / 3));
  }
}

TEST_CASE("fm_loss with the optimal field equals the conditional variance term") {
  const double s0 = 0.8, g = -0.5;
  const auto o = GaussianMixtureOracle::gaussian(VP, 2, s0);
  const auto e = eval_schedule(VP, g);
  Rng rng(21);
  const int n = 40000;
  std::vector<PathSample> b;
  for (int i = 0; i < n; ++i) b.push_back(sample_path(VP, s0 * standard_normal(2, rng), standard_normal(2, rng), g));
  std::vector<double> w(n, 1.0);
  const LossValue lv = fm_loss(VP, o, b, w);
  // posterior variance of x0 is isotropic and x-independent for Gaussian data
  const double expected = likelihood_weight(VP, g) * o.conditional_velocity_error(Vec::Zero(2), g) / (e.norm * e.norm);
  double var = 0;
  for (double l : lv.per_sample) var += (l - lv.total) * (l - lv.total);
  const double se = std::sqrt(var / (n - 1) / n);
  CHECK(expected > 0);
  CHECK(std::abs(lv.total - expected) < 4 * se);
}

TEST_CASE("trace residual") {
  // d = 1, linear model v = a x: tr = a
  const auto p = sample_path(VP, Vec::Constant(1, 0.4), Vec::Constant(1, -0.9), 1.3);
  const auto e = eval_schedule(VP, 1.3);
  const double a = -0.7;
  LinearField f(Mat::Constant(1, 1, a));
  const Vec v = f.value(p.x_gamma, p.gamma);
  const double hand = e.sigma * a - e.dsigma / e.norm + 2 * e.norm / e.sigma * std::pow(v[0] - p.v_target[0], 2);
  CHECK(trace_residual(VP, 1.3, a, v, p.v_target) == doctest::Approx(hand).epsilon(1e-14));
  std::vector<PathSample> b{p};
  std::vector<double> w{1.0};
  CHECK(fm_trace_loss(VP, f, b, w).total == doctest::Approx(likelihood_weight(VP, 1.3) * hand * hand).epsilon(1e-13));
  // zero first-order error and the matching trace cancel
  const double tr0 = e.dsigma / (e.sigma * e.norm) * 3;
  CHECK(std::abs(trace_residual(VP, 1.3, tr0, Vec::Ones(3), Vec::Ones(3))) < 1e-15);
}

TEST_CASE("trace residual of the optimal field averages to zero") {
  const auto o = GaussianMixtureOracle::gaussian(SP, 2, 0.6);
  const double g = 0.7;
  Rng rng(31);
  const Vec x = standard_normal(2, rng);
  const auto e = eval_schedule(SP, g);
  Vec vs;
  const double tr = o.jvp(x, g, Mat::Identity(2, 2), &vs).trace();
  double sum = 0, sum2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const Vec x0 = o.sample_posterior_x0(x, g, rng);
    const Vec eps = (x - e.alpha * x0) / e.sigma;
    const Vec vt = (e.dalpha * x0 + e.dsigma * eps) / e.norm;
    const double r = trace_residual(SP, g, tr, vs, vt);
    sum += r;
    sum2 += r * r;
  }
  const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean) < 4 * se);
}

TEST_CASE("mixed loss: lambda = 0, linearity, gradients") {
  const auto b = batch_for(VP, 2, 6, 3);
  const auto m = random_model(2, 5);
  std::vector<double> w{1, 2, 3, 1, 2, 3};
  CHECK(mixed_loss(VP, m, b, w, 0.0).total == fm_loss(VP, m, b, w).total);
  const double fm = fm_loss(VP, m, b, w).total;
  CHECK(mixed_loss(VP, m, b, w, 0.1).total + mixed_loss(VP, m, b, w, 0.3).total - fm ==
        doctest::Approx(mixed_loss(VP, m, b, w, 0.4).total).epsilon(1e-10));
  CHECK_THROWS_AS(mixed_loss(VP, m, b, w, -1.0), InvalidInput);

  std::vector<double> g0, g1;
  const LossValue a = fm_loss_grad(VP, m, b, w, g0);
  const LossValue c = mixed_loss_grad(VP, m, b, w, 0.1, g1);
  CHECK(a.total == doctest::Approx(fm).epsilon(1e-13));
  CHECK(c.total == doctest::Approx(mixed_loss(VP, m, b, w, 0.1).total).epsilon(1e-12));
}

TEST_CASE("mixed loss gradient holds the stopped term fixed") {
  for (const auto& s : {VP, SP}) {
    const auto b = batch_for(s, 2, 5, 8);
    auto m = random_model(2, 13);
    std::vector<double> w(5, 1.3), grad;
    const double lambda = 0.1;
    mixed_loss_grad(s, m, b, w, lambda, grad);
    std::vector<double> frozen;
    for (const auto& p : b) frozen.push_back((m.value(p.x_gamma, p.gamma) - p.v_target).squaredNorm());
    auto ref = [&]() {
      double sum = 0;
      for (std::size_t i = 0; i < b.size(); ++i) {
        const auto& p = b[i];
        Vec v;
        const double tr = m.jvp(p.x_gamma, p.gamma, Mat::Identity(2, 2), &v).trace();
        const auto e = eval_schedule(s, p.gamma);
        const double r = e.sigma * tr - e.dsigma / e.norm * 2 + 2 * e.norm / e.sigma * frozen[i];
        sum += w[i] * likelihood_weight(s, p.gamma) * ((v - p.v_target).squaredNorm() + lambda * r * r);
      }
      return sum / static_cast<double>(b.size());
    };
    double gmax = 0, worst = 0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double p0 = m.params()[i];
      m.params()[i] = p0 + 1e-4;
      const double lp = ref();
      m.params()[i] = p0 - 1e-4;
      const double lm = ref();
      m.params()[i] = p0;
      const double fd = (lp - lm) / 2e-4;
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3 * gmax}));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("hutchinson trace loss needs an rng and probes") {
  const auto b = batch_for(VP, 2, 3, 1);
  const auto m = random_model(2, 2);
  std::vector<double> w(3, 1.0);
  TraceOptions opt;
  opt.hutchinson = true;
  CHECK_THROWS_AS(fm_trace_loss(VP, m, b, w, opt, nullptr), InvalidInput);
  Rng rng(1);
  CHECK_THROWS_AS(draw_probes(2, 0, ProbeKind::Rademacher, rng), InvalidInput);
  const Mat u = draw_probes(4, 1000, ProbeKind::Rademacher, rng);
  CHECK((u.array().abs() == 1.0).all());
  CHECK(std::isfinite(fm_trace_loss(VP, m, b, w, opt, &rng).total));
}

TEST_CASE("preconditioning") {
  for (double g : {-13.3, -2.0, 0.37, 5.0}) {
    const auto p = preconditioning(VP, g, 1.0);
    const auto e = eval_schedule(VP, g);
    CHECK(std::abs(p.c_in - 1) <= 1e-12);
    CHECK(std::abs(p.c_skip - e.sigma) <= 1e-12);
    CHECK(std::abs(p.c_out - e.alpha) <= 1e-12);
  }
  const auto far = preconditioning(VP, 60.0, 1.0);
  CHECK(far.c_out < 1e-12);
  CHECK(far.c_skip == doctest::Approx(1.0));
  CHECK(preconditioning(SP, 0.0, 1.0).c_in == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(preconditioning(VP, 0.0, 0.0), InvalidInput);
}
