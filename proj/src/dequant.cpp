#include "dode/dequant.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dode/data.hpp"
#include "dode/errors.hpp"

namespace dode {

TruncNormParams TruncNormParams::from_alpha_sigma(double alpha, double sigma) {
  if (!(alpha > 0) || !(sigma > 0)) throw InvalidInput("TruncNormParams: alpha and sigma must be > 0");
  TruncNormParams p;
  p.alpha_eps = alpha;
  p.sigma_eps = sigma;
  p.tau = alpha / (256.0 * sigma);
  p.Z = std::erf(p.tau / std::numbers::sqrt2);
  return p;
}

TruncNormParams TruncNormParams::from_schedule(const LogSnrSchedule& s) {
  const ScheduleEval e = eval_schedule(s, s.gamma_min);
  return from_alpha_sigma(e.alpha, e.sigma);
}

Vec tn_sample(const TruncNormParams& p, Eigen::Index d, Rng& rng) {
  if (d < 1) throw InvalidInput("tn_sample: d must be >= 1");
  std::normal_distribution<double> n01;
  Vec v(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double z;
    do z = n01(rng);
    while (std::abs(z) > p.tau);
    v[i] = z;
  }
  return v;
}

double tn_log_density(const Vec& eps_hat, const TruncNormParams& p) {
  if ((eps_hat.array().abs() > p.tau).any()) return -std::numeric_limits<double>::infinity();
  const double d = static_cast<double>(eps_hat.size());
  return -0.5 * d * std::log(2 * std::numbers::pi * p.Z * p.Z) - 0.5 * eps_hat.squaredNorm();
}

double tn_entropy_correction(const TruncNormParams& p, Eigen::Index d) {
  const double dd = static_cast<double>(d);
  if (std::isinf(p.tau)) return 0.0;
  return dd * std::log(p.Z) - dd * p.tau / (std::sqrt(2 * std::numbers::pi) * p.Z) * std::exp(-0.5 * p.tau * p.tau);
}

std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::Uniform: return "uniform";
    case BoundKind::TruncNormal: return "tn";
    case BoundKind::Variational: return "variational";
  }
  return "?";
}

BoundKind parse_bound_kind(const std::string& s) {
  if (s == "uniform") return BoundKind::Uniform;
  if (s == "tn" || s == "trunc-normal") return BoundKind::TruncNormal;
  if (s == "variational") return BoundKind::Variational;
  throw InvalidInput("nll: unknown bound '" + s + "' (expected uniform, tn or variational)");
}

double LikelihoodBound::sum_of_parts() const {
  double t = ode_term;
  for (const auto& c : corrections) t += c.value;
  return t;
}

double bpd(double total_logp, Eigen::Index d) {
  if (d < 1) throw InvalidInput("bpd: d must be >= 1");
  return -total_logp / (static_cast<double>(d) * std::numbers::ln2);
}

namespace {

double log_mean_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

void check_opts(const BoundOptions& opt, const Eigen::VectorXi& X) {
  if (opt.K < 1) throw InvalidInput("dequant: K must be >= 1");
  if (opt.repeats < 1) throw InvalidInput("dequant: repeats must be >= 1");
  if (X.size() < 1) throw InvalidInput("dequant: empty datum");
  if ((X.array() < 0).any() || (X.array() > 255).any()) throw InvalidInput("dequant: levels must be in 0..255");
}

Vec scaled(const Eigen::VectorXi& X) {
  Vec x(X.size());
  for (Eigen::Index i = 0; i < X.size(); ++i) x[i] = level_value(X[i]);
  return x;
}

// Runs repeats x K draws. `draw(rng)` returns the log-weight of one draw; the
// K = 1 estimate is the plain mean, K > 1 the mean over repeats of log-mean-exp.
template <class Draw>
double estimate(const BoundOptions& opt, Draw draw) {
  double acc = 0;
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    std::vector<double> w(opt.K);
    for (std::size_t k = 0; k < opt.K; ++k) {
      Rng rng = task_rng(opt.seed, opt.datum, r * opt.K + k);
      w[k] = draw(rng);
    }
    acc += opt.K == 1 ? w[0] : log_mean_exp(w);
  }
  return acc / static_cast<double>(opt.repeats);
}

void finalize(LikelihoodBound& b) {
  b.total_logp = b.sum_of_parts();
  b.bpd = bpd(b.total_logp, b.d);
}

}  // namespace

double reconstruction_log_prob(const Vec& x_eps, const Eigen::VectorXi& X, double alpha, double sigma) {
  const auto& L = level_table();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double total = 0;
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    std::array<double, 256> logit;
    for (int j = 0; j < 256; ++j) {
      const double r = x_eps[i] - alpha * L[static_cast<std::size_t>(j)];
      logit[static_cast<std::size_t>(j)] = -r * r * inv;
      m = std::max(m, logit[static_cast<std::size_t>(j)]);
    }
    double s = 0;
    for (double l : logit) s += std::exp(l - m);
    total += logit[static_cast<std::size_t>(X[i])] - m - std::log(s);
  }
  return total;
}

LikelihoodBound tn_bound(const TruncNormParams& p, const LogDensityFn& logp, const Eigen::VectorXi& X,
                         const BoundOptions& opt) {
  check_opts(opt, X);
  const Eigen::Index d = X.size();
  const Vec x0 = scaled(X);
  LikelihoodBound b;
  b.kind = BoundKind::TruncNormal;
  b.K = opt.K;
  b.d = d;
  const double dd = static_cast<double>(d);
  if (opt.K == 1) {
    b.ode_term = estimate(opt, [&](Rng& rng) {
      const Vec e = tn_sample(p, d, rng);
      return logp(p.alpha_eps * x0 + p.sigma_eps * e);
    });
    b.corrections = {
        {"gaussian_entropy", 0.5 * dd * (1.0 + std::log(2 * std::numbers::pi * p.sigma_eps * p.sigma_eps))},
        {"log_Z", dd * std::log(p.Z)},
        {"tail", -dd * p.tau / (std::sqrt(2 * std::numbers::pi) * p.Z) * std::exp(-0.5 * p.tau * p.tau)},
    };
  } else {
    b.ode_term = estimate(opt, [&](Rng& rng) {
      const Vec e = tn_sample(p, d, rng);
      return logp(p.alpha_eps * x0 + p.sigma_eps * e) - tn_log_density(e, p);
    });
    b.corrections = {{"log_sigma", dd * std::log(p.sigma_eps)}};
  }
  finalize(b);
  return b;
}

LikelihoodBound uniform_bound(double alpha, const LogDensityFn& logp, const Eigen::VectorXi& X,
                              const BoundOptions& opt) {
  check_opts(opt, X);
  if (!(alpha > 0)) throw InvalidInput("uniform_bound: alpha must be > 0");
  const Eigen::Index d = X.size();
  const Vec x0 = scaled(X);
  LikelihoodBound b;
  b.kind = BoundKind::Uniform;
  b.K = opt.K;
  b.d = d;
  const double dd = static_cast<double>(d);
  b.ode_term = estimate(opt, [&](Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0 / 256.0, 1.0 / 256.0);
    Vec x = x0;
    for (Eigen::Index i = 0; i < d; ++i) x[i] += u(rng);
    return logp(alpha * x);
  });
  // density of x0 + u is alpha^d times the density of alpha (x0 + u)
  b.corrections = {{"log_alpha", dd * std::log(alpha)}, {"uniform_entropy", -dd * std::log(128.0)}};
  finalize(b);
  return b;
}

LikelihoodBound variational_bound(double alpha, double sigma, const LogDensityFn& logp, const Eigen::VectorXi& X,
                                  const BoundOptions& opt) {
  check_opts(opt, X);
  const Eigen::Index d = X.size();
  const Vec x0 = scaled(X);
  LikelihoodBound b;
  b.kind = BoundKind::Variational;
  b.K = opt.K;
  b.d = d;
  const double dd = static_cast<double>(d);
  if (opt.K == 1) {
    double recon = 0;
    b.ode_term = estimate(opt, [&](Rng& rng) {
      const Vec x = alpha * x0 + sigma * standard_normal(d, rng);
      recon += reconstruction_log_prob(x, X, alpha, sigma);
      return logp(x);
    });
    b.corrections = {
        {"reconstruction", recon / static_cast<double>(opt.repeats)},
        {"gaussian_entropy", 0.5 * dd * (1.0 + std::log(2 * std::numbers::pi * sigma * sigma))},
    };
  } else {
    b.ode_term = estimate(opt, [&](Rng& rng) {
      const Vec e = standard_normal(d, rng);
      const Vec x = alpha * x0 + sigma * e;
      const double logq = -0.5 * dd * std::log(2 * std::numbers::pi * sigma * sigma) - 0.5 * e.squaredNorm();
      return logp(x) + reconstruction_log_prob(x, X, alpha, sigma) - logq;
    });
  }
  finalize(b);
  return b;
}

namespace {

LogDensityFn ode_density(const LogSnrSchedule& s, const VelocityField& model, LikelihoodConfig cfg,
                         std::size_t& nfe) {
  return [&s, &model, cfg, &nfe](const Vec& x) {
    const LikelihoodResult r = ode_log_likelihood(s, model, x, cfg);
    nfe += r.nfe;
    return r.logp;
  };
}

}  // namespace

LikelihoodBound nll_trunc_normal(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                                 const BoundOptions& opt, const LikelihoodConfig& cfg) {
  if (X.size() != model.dim()) throw InvalidInput("nll_trunc_normal: datum dimension does not match model");
  std::size_t nfe = 0;
  LikelihoodConfig c = cfg;
  c.gamma_start = s.gamma_min;
  LikelihoodBound b = tn_bound(TruncNormParams::from_schedule(s), ode_density(s, model, c, nfe), X, opt);
  b.nfe = nfe;
  return b;
}

LikelihoodBound nll_uniform(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                            double gamma_eval, const BoundOptions& opt, const LikelihoodConfig& cfg) {
  if (X.size() != model.dim()) throw InvalidInput("nll_uniform: datum dimension does not match model");
  if (std::isnan(gamma_eval)) gamma_eval = s.gamma_min;
  if (!(gamma_eval >= s.gamma_min && gamma_eval < s.gamma_max))
    throw InvalidInput("nll_uniform: gamma_eval outside [gamma_min, gamma_max)");
  std::size_t nfe = 0;
  LikelihoodConfig c = cfg;
  c.gamma_start = gamma_eval;
  LikelihoodBound b = uniform_bound(eval_schedule(s, gamma_eval).alpha, ode_density(s, model, c, nfe), X, opt);
  b.nfe = nfe;
  return b;
}

LikelihoodBound nll_variational(const LogSnrSchedule& s, const VelocityField& model, const Eigen::VectorXi& X,
                                const BoundOptions& opt, const LikelihoodConfig& cfg) {
  if (X.size() != model.dim()) throw InvalidInput("nll_variational: datum dimension does not match model");
  std::size_t nfe = 0;
  LikelihoodConfig c = cfg;
  c.gamma_start = s.gamma_min;
  const ScheduleEval e = eval_schedule(s, s.gamma_min);
  LikelihoodBound b = variational_bound(e.alpha, e.sigma, ode_density(s, model, c, nfe), X, opt);
  b.nfe = nfe;
  return b;
}

DatasetBound evaluate_bound(BoundKind kind, const LogSnrSchedule& s, const VelocityField& model,
                            const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& X, BoundOptions opt,
                            const LikelihoodConfig& cfg, double gamma_eval) {
  if (X.rows() < 1) throw InvalidInput("nll: empty dataset");
  DatasetBound out;
  double sb = 0, sb2 = 0, sl = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    opt.datum = static_cast<std::uint64_t>(i);
    const Eigen::VectorXi row = X.row(i).transpose();
    LikelihoodBound b;
    try {
      switch (kind) {
        case BoundKind::TruncNormal: b = nll_trunc_normal(s, model, row, opt, cfg); break;
        case BoundKind::Uniform: b = nll_uniform(s, model, row, gamma_eval, opt, cfg); break;
        case BoundKind::Variational: b = nll_variational(s, model, row, opt, cfg); break;
      }
    } catch (const NumericFailure& e) {
      throw NumericFailure(std::string(e.what()) + " [datum " + std::to_string(i) + "]", static_cast<std::size_t>(i));
    } catch (const NonConvergence& e) {
      throw NonConvergence(std::string(e.what()) + " [datum " + std::to_string(i) + "]", e.partial_state(),
                           e.reached_time());
    }
    sb += b.bpd;
    sb2 += b.bpd * b.bpd;
    sl += b.total_logp;
    out.per_datum.push_back(std::move(b));
  }
  const double n = static_cast<double>(X.rows());
  out.mean_logp = sl / n;
  out.mean_bpd = sb / n;
  const double var = n > 1 ? std::max(0.0, (sb2 - n * out.mean_bpd * out.mean_bpd) / (n - 1)) : 0.0;
  out.stderr_bpd = std::sqrt(var / n);
  return out;
}

}  // namespace dode
