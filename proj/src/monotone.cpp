#include <algorithm>
#include <cmath>
#include <random>

#include "dode/errors.hpp"
#include "dode/netcore.hpp"
#include "dode/schedule.hpp"

namespace dode {

MonotoneGammaNet::MonotoneGammaNet(double gamma0, double gamma1, std::size_t hidden)
    : g0_(gamma0), g1_(gamma1), hidden_(hidden), params_(3 * hidden, 0.0) {
  if (!(gamma0 < gamma1)) throw InvalidInput("monotone_gamma: need gamma0 < gamma1");
  if (hidden == 0) throw InvalidInput("monotone_gamma: hidden must be >= 1");
}

MonotoneGammaNet MonotoneGammaNet::initialized(double gamma0, double gamma1, std::uint64_t seed,
                                               std::size_t hidden) {
  MonotoneGammaNet n(gamma0, gamma1, hidden);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.1);
  const std::size_t H = hidden;
  const double slope = 20.0;
  for (std::size_t j = 0; j < H; ++j) {
    const double center = (static_cast<double>(j) + 0.5) / static_cast<double>(H);
    n.params_[j] = std::log(slope) + jitter(rng);
    n.params_[H + j] = -std::exp(n.params_[j]) * center;
    n.params_[2 * H + j] = jitter(rng);
  }
  return n;
}

MonotoneGammaNet MonotoneGammaNet::near_linear(double gamma0, double gamma1, std::size_t hidden) {
  MonotoneGammaNet n(gamma0, gamma1, hidden);
  for (std::size_t j = 0; j < hidden; ++j) n.params_[j] = std::log(1e-4);
  return n;
}

MonotoneGammaNet::Eval MonotoneGammaNet::operator()(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("monotone_gamma: t outside [0,1]");
  const std::size_t H = hidden_;
  double gt = 0, g0 = 0, g1 = 0, rate = 0;
  for (std::size_t j = 0; j < H; ++j) {
    const double w1 = std::exp(params_[j]), b1 = params_[H + j], w2 = std::exp(params_[2 * H + j]);
    const double st = sigmoid(w1 * t + b1);
    gt += w2 * st;
    g0 += w2 * sigmoid(b1);
    g1 += w2 * sigmoid(w1 + b1);
    rate += w2 * st * (1.0 - st) * w1;
  }
  const double A = g1 - g0, span = g1_ - g0_;
  Eval e;
  if (t == 0.0) e.gamma = g0_;
  else if (t == 1.0) e.gamma = g1_;
  else e.gamma = std::clamp(g0_ + span * (gt - g0) / A, g0_, g1_);
  e.dgamma_dt = span * rate / A;
  return e;
}

MonotoneGammaNet::Eval monotone_gamma(const MonotoneGammaNet& net, double t) { return net(t); }

void MonotoneGammaNet::accumulate_grad(double t, double gbar, double rbar, std::vector<double>& grad) const {
  const std::size_t H = hidden_;
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  double gt = 0, g0 = 0, g1 = 0, rate = 0;
  for (std::size_t j = 0; j < H; ++j) {
    const double w1 = std::exp(params_[j]), b1 = params_[H + j], w2 = std::exp(params_[2 * H + j]);
    const double st = sigmoid(w1 * t + b1);
    gt += w2 * st;
    g0 += w2 * sigmoid(b1);
    g1 += w2 * sigmoid(w1 + b1);
    rate += w2 * st * (1.0 - st) * w1;
  }
  const double A = g1 - g0, c = gt - g0, span = g1_ - g0_;
  // gamma = g0_ + span c / A ; rate_out = span rate / A
  const double dg_dc = span / A, dg_dA = -span * c / (A * A);
  const double dr_drate = span / A, dr_dA = -span * rate / (A * A);
  for (std::size_t j = 0; j < H; ++j) {
    const double w1 = std::exp(params_[j]), b1 = params_[H + j], w2 = std::exp(params_[2 * H + j]);
    const double st = sigmoid(w1 * t + b1), s0 = sigmoid(b1), s1 = sigmoid(w1 + b1);
    const double pt = st * (1 - st), p0 = s0 * (1 - s0), p1 = s1 * (1 - s1);
    // partials of c, A, rate w.r.t. w1, b1, w2
    const double dc_w1 = w2 * pt * t, dc_b1 = w2 * (pt - p0), dc_w2 = st - s0;
    const double dA_w1 = w2 * p1, dA_b1 = w2 * (p1 - p0), dA_w2 = s1 - s0;
    const double drate_w1 = w2 * (pt + w1 * t * pt * (1 - 2 * st));
    const double drate_b1 = w2 * w1 * pt * (1 - 2 * st);
    const double drate_w2 = pt * w1;
    const double gw1 = gbar * (dg_dc * dc_w1 + dg_dA * dA_w1) + rbar * (dr_drate * drate_w1 + dr_dA * dA_w1);
    const double gb1 = gbar * (dg_dc * dc_b1 + dg_dA * dA_b1) + rbar * (dr_drate * drate_b1 + dr_dA * dA_b1);
    const double gw2 = gbar * (dg_dc * dc_w2 + dg_dA * dA_w2) + rbar * (dr_drate * drate_w2 + dr_dA * dA_w2);
    grad[j] += gw1 * w1;
    grad[H + j] += gb1;
    grad[2 * H + j] += gw2 * w2;
  }
}

}  // namespace dode
