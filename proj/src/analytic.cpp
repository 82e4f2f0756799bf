#include "dode/analytic.hpp"

#include <cmath>
#include <numbers>

#include "dode/errors.hpp"

namespace dode {

namespace {

double logsumexp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

GaussianMixtureOracle::GaussianMixtureOracle(LogSnrSchedule s, std::vector<MixtureComponent> comps)
    : sched_(s), comps_(std::move(comps)) {
  sched_.validate();
  if (comps_.empty()) throw InvalidInput("mixture oracle: no components");
  d_ = comps_[0].mean.size();
  double wsum = 0;
  for (const auto& c : comps_) {
    if (c.mean.size() != d_) throw InvalidInput("mixture oracle: component dimension mismatch");
    if (!(c.weight > 0) || !(c.std >= 0)) throw InvalidInput("mixture oracle: invalid weight or std");
    wsum += c.weight;
  }
  for (auto& c : comps_) c.weight /= wsum;
}

GaussianMixtureOracle GaussianMixtureOracle::gaussian(LogSnrSchedule s, Eigen::Index d, double s0) {
  return GaussianMixtureOracle(s, {{1.0, Vec::Zero(d), s0}});
}

GaussianMixtureOracle::Posterior GaussianMixtureOracle::posterior(const Vec& x, double gamma) const {
  if (x.size() != d_) throw InvalidInput("mixture oracle: dimension mismatch");
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const double a = e.alpha, s2 = e.sigma * e.sigma, dd = static_cast<double>(d_);
  const std::size_t K = comps_.size();
  Posterior p;
  std::vector<double> logw(K);
  p.mean.resize(K);
  p.var.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = comps_[k];
    const double sk2 = c.std * c.std;
    const double v = a * a * sk2 + s2;
    const Vec r = x - a * c.mean;
    logw[k] = std::log(c.weight) - 0.5 * dd * std::log(2 * std::numbers::pi * v) - 0.5 * r.squaredNorm() / v;
    p.mean[k] = c.mean + (a * sk2 / v) * r;
    p.var[k] = sk2 * s2 / v;
  }
  const double lse = logsumexp(logw);
  p.resp.resize(K);
  p.overall_mean = Vec::Zero(d_);
  for (std::size_t k = 0; k < K; ++k) {
    p.resp[k] = std::exp(logw[k] - lse);
    p.overall_mean += p.resp[k] * p.mean[k];
  }
  p.total_var = 0;
  for (std::size_t k = 0; k < K; ++k)
    p.total_var += p.resp[k] * (dd * p.var[k] + (p.mean[k] - p.overall_mean).squaredNorm());
  return p;
}

double GaussianMixtureOracle::log_density(const Vec& x, double gamma) const {
  if (x.size() != d_) throw InvalidInput("mixture oracle: dimension mismatch");
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const double a = e.alpha, s2 = e.sigma * e.sigma, dd = static_cast<double>(d_);
  std::vector<double> lw;
  lw.reserve(comps_.size());
  for (const auto& c : comps_) {
    const double v = a * a * c.std * c.std + s2;
    lw.push_back(std::log(c.weight) - 0.5 * dd * std::log(2 * std::numbers::pi * v) -
                 0.5 * (x - a * c.mean).squaredNorm() / v);
  }
  return logsumexp(lw);
}

Vec GaussianMixtureOracle::score(const Vec& x, double gamma) const {
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const Posterior p = posterior(x, gamma);
  Vec s = Vec::Zero(d_);
  for (std::size_t k = 0; k < comps_.size(); ++k) {
    const double v = e.alpha * e.alpha * comps_[k].std * comps_[k].std + e.sigma * e.sigma;
    s -= p.resp[k] * (x - e.alpha * comps_[k].mean) / v;
  }
  return s;
}

Vec GaussianMixtureOracle::velocity(const Vec& x, double gamma) const {
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const double ca = e.dalpha - e.dsigma * e.alpha / e.sigma, cb = e.dsigma / e.sigma;
  return ca * posterior(x, gamma).overall_mean + cb * x;
}

Vec GaussianMixtureOracle::value(const Vec& x, double gamma) const {
  return velocity(x, gamma) / eval_schedule(sched_, gamma).norm;
}

Mat GaussianMixtureOracle::jvp(const Vec& x, double gamma, const Mat& tangents, Vec* value_out) const {
  if (tangents.rows() != d_) throw InvalidInput("mixture oracle: tangent dimension mismatch");
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const double ca = e.dalpha - e.dsigma * e.alpha / e.sigma, cb = e.dsigma / e.sigma;
  const Posterior p = posterior(x, gamma);
  const std::size_t K = comps_.size();
  std::vector<Vec> g(K);
  Vec gbar = Vec::Zero(d_);
  double rc = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double sk2 = comps_[k].std * comps_[k].std;
    const double v = e.alpha * e.alpha * sk2 + e.sigma * e.sigma;
    g[k] = -(x - e.alpha * comps_[k].mean) / v;
    gbar += p.resp[k] * g[k];
    rc += p.resp[k] * e.alpha * sk2 / v;
  }
  // d E[x0|x] u = rc u + sum_k r_k m_k (g_k - gbar).u
  Mat out = (cb + ca * rc) * tangents;
  for (std::size_t k = 0; k < K; ++k) {
    const Eigen::RowVectorXd proj = (g[k] - gbar).transpose() * tangents;
    out.noalias() += (ca * p.resp[k]) * p.mean[k] * proj;
  }
  if (value_out) *value_out = (ca * p.overall_mean + cb * x) / e.norm;
  return out / e.norm;
}

double GaussianMixtureOracle::velocity_divergence(const Vec& x, double gamma) const {
  const ScheduleEval e = eval_schedule(sched_, gamma);
  return e.norm * jvp(x, gamma, Mat::Identity(d_, d_), nullptr).trace();
}

double GaussianMixtureOracle::conditional_velocity_error(const Vec& x, double gamma) const {
  const ScheduleEval e = eval_schedule(sched_, gamma);
  const double ca = e.dalpha - e.dsigma * e.alpha / e.sigma;
  return ca * ca * posterior(x, gamma).total_var;
}

Vec GaussianMixtureOracle::sample_posterior_x0(const Vec& x, double gamma, Rng& rng) const {
  const Posterior p = posterior(x, gamma);
  std::discrete_distribution<std::size_t> pick(p.resp.begin(), p.resp.end());
  const std::size_t k = pick(rng);
  return p.mean[k] + std::sqrt(p.var[k]) * standard_normal(d_, rng);
}

Vec GaussianMixtureOracle::sample_data(Rng& rng) const {
  std::vector<double> w;
  for (const auto& c : comps_) w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  const auto& c = comps_[pick(rng)];
  return c.mean + c.std * standard_normal(d_, rng);
}

double GaussianMixtureOracle::data_log_density(const Vec& x0) const {
  std::vector<double> lw;
  const double dd = static_cast<double>(d_);
  for (const auto& c : comps_) {
    if (!(c.std > 0)) throw InvalidInput("mixture oracle: data density undefined for point masses");
    const double v = c.std * c.std;
    lw.push_back(std::log(c.weight) - 0.5 * dd * std::log(2 * std::numbers::pi * v) -
                 0.5 * (x0 - c.mean).squaredNorm() / v);
  }
  return logsumexp(lw);
}

}  // namespace dode
