#include "dode/importance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dode/errors.hpp"
#include "dode/objectives.hpp"

namespace dode {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Uniform: return "uniform";
    case StrategyKind::Designed: return "designed";
    case StrategyKind::Adaptive: return "adaptive";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& s) {
  if (s == "uniform") return StrategyKind::Uniform;
  if (s == "designed") return StrategyKind::Designed;
  if (s == "adaptive") return StrategyKind::Adaptive;
  throw InvalidInput("importance: unknown strategy '" + s + "' (expected uniform, designed or adaptive)");
}

GammaDraw draw_gamma(StrategyKind kind, const LogSnrSchedule& s, Rng& rng, const MonotoneGammaNet* net) {
  const double t = uniform01(rng);
  switch (kind) {
    case StrategyKind::Uniform:
      return {s.gamma_min + t * (s.gamma_max - s.gamma_min), s.gamma_max - s.gamma_min, t};
    case StrategyKind::Designed: {
      const double g = designed_gamma_of_t(s, t);
      const double a = eval_schedule(s, g).alpha;
      return {g, designed_normalizer(s) / (a * a), t};
    }
    case StrategyKind::Adaptive: {
      if (!net) throw InvalidInput("sample_gamma: adaptive strategy needs a MonotoneGammaNet");
      const auto e = (*net)(t);
      return {e.gamma, e.dgamma_dt, t};
    }
  }
  throw InvalidInput("sample_gamma: bad strategy");
}

std::vector<GammaDraw> sample_gamma(StrategyKind kind, const LogSnrSchedule& s, std::size_t n, Rng& rng,
                                    const MonotoneGammaNet* net) {
  if (n < 1) throw InvalidInput("sample_gamma: n must be >= 1");
  std::vector<GammaDraw> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_gamma(kind, s, rng, net));
  return out;
}

double weighted_sample_loss(const LogSnrSchedule& s, const VelocityField& model, const Vec& x0, const Vec& eps,
                            double gamma, double is_weight) {
  const PathSample p = sample_path(s, x0, eps, gamma);
  return is_weight * likelihood_weight(s, gamma) * (model.value(p.x_gamma, gamma) - p.v_target).squaredNorm();
}

namespace {

// d/dgamma of the likelihood weight and of the normalized-velocity target.
double weight_derivative(const LogSnrSchedule& s, const ScheduleEval& e) {
  return s.kind == ScheduleKind::VP ? e.alpha * e.dalpha : 2.0 * e.alpha * e.dalpha;
}

Vec target_derivative(const LogSnrSchedule& s, const ScheduleEval& e, const Vec& x0, const Vec& eps) {
  if (s.kind == ScheduleKind::SP) return Vec::Zero(x0.size());
  return e.dalpha * eps - e.dsigma * x0;
}

}  // namespace

double adaptive_objective(const LogSnrSchedule& s, const VelocityModel& model, const MonotoneGammaNet& net,
                          const AdaptiveBatch& batch, std::vector<double>* grad) {
  const std::size_t N = batch.t.size();
  if (N == 0 || batch.x0.size() != N || batch.eps.size() != N)
    throw InvalidInput("adaptive_is_step: batch arrays must have equal nonzero length");
  const Eigen::Index d = model.dim();
  Mat X(d, static_cast<Eigen::Index>(N));
  Vec G(static_cast<Eigen::Index>(N));
  Mat T(model.shape().input_dim(), static_cast<Eigen::Index>(N));
  std::vector<MonotoneGammaNet::Eval> ge(N);
  std::vector<ScheduleEval> se(N);
  std::vector<Vec> target(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    ge[i] = net(batch.t[i]);
    se[i] = eval_schedule(s, ge[i].gamma);
    const PathSample p = sample_path(s, batch.x0[i], batch.eps[i], ge[i].gamma);
    X.col(c) = p.x_gamma;
    G[c] = ge[i].gamma;
    target[i] = p.v_target;
    T.col(c).head(d) = se[i].dalpha * batch.x0[i] + se[i].dsigma * batch.eps[i];
    T.col(c).tail(model.shape().embed_dim()) = model.embed_derivative(ge[i].gamma);
  }
  const ForwardPass fp = model.forward(model.make_input(X, G), {T});
  const Mat& V = fp.output();
  const Mat& dV = fp.tangent_output(0);
  double obj = 0;
  if (grad) grad->assign(net.params().size(), 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const Vec e = V.col(c) - target[i];
    const double W = 2.0 * se[i].norm * se[i].norm / (se[i].sigma * se[i].sigma);
    const double sq = e.squaredNorm();
    const double L = ge[i].dgamma_dt * W * sq;
    if (!std::isfinite(L)) return std::numeric_limits<double>::quiet_NaN();
    obj += L * L;
    if (grad) {
      const Vec de = dV.col(c) - target_derivative(s, se[i], batch.x0[i], batch.eps[i]);
      const double dL_dgamma = ge[i].dgamma_dt * (weight_derivative(s, se[i]) * sq + 2.0 * W * e.dot(de));
      const double dL_drate = W * sq;
      const double k = 2.0 * L / static_cast<double>(N);
      net.accumulate_grad(batch.t[i], k * dL_dgamma, k * dL_drate, *grad);
    }
  }
  return obj / static_cast<double>(N);
}

AdaptiveStepResult adaptive_is_step(const LogSnrSchedule& s, const VelocityModel& model, MonotoneGammaNet& net,
                                    const AdaptiveBatch& batch, AdamState& opt, const AdamConfig& cfg) {
  std::vector<double> g;
  const double obj = adaptive_objective(s, model, net, batch, &g);
  if (!std::isfinite(obj)) {
    ++opt.skipped;
    return {obj, true};
  }
  const bool ok = adamw_step(net.params(), g, opt, cfg);
  return {obj, !ok};
}

DiagnosticPools make_pools(const Eigen::MatrixXd& data, std::size_t n_data, std::size_t n_noise, std::uint64_t seed) {
  if (data.rows() < 1 || n_data < 1 || n_noise < 1) throw InvalidInput("make_pools: empty pool");
  DiagnosticPools p;
  const auto nd = std::min<std::size_t>(n_data, static_cast<std::size_t>(data.rows()));
  for (std::size_t i = 0; i < nd; ++i) p.x0.push_back(data.row(static_cast<Eigen::Index>(i)).transpose());
  Rng rng = task_rng(seed, 0);
  for (std::size_t j = 0; j < n_noise; ++j) p.eps.push_back(standard_normal(data.cols(), rng));
  return p;
}

namespace {

struct Weighted {
  double gamma;
  double value;
};

std::vector<Weighted> draw_weighted(const LogSnrSchedule& s, const VelocityField& model, StrategyKind kind,
                                    const MonotoneGammaNet* net, const DiagnosticPools& pools, std::size_t n,
                                    std::uint64_t seed) {
  if (pools.x0.empty() || pools.eps.empty()) throw InvalidInput("importance diagnostics: empty pools");
  Rng rng = task_rng(seed, 1);
  std::uniform_int_distribution<std::size_t> pi(0, pools.x0.size() - 1), pj(0, pools.eps.size() - 1);
  std::vector<Weighted> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const GammaDraw g = draw_gamma(kind, s, rng, net);
    const Vec& x0 = pools.x0[pi(rng)];
    const Vec& eps = pools.eps[pj(rng)];
    out.push_back({g.gamma, weighted_sample_loss(s, model, x0, eps, g.gamma, g.is_weight)});
  }
  return out;
}

}  // namespace

EstimatorStats estimator_stats(const LogSnrSchedule& s, const VelocityField& model, StrategyKind kind,
                               const MonotoneGammaNet* net, const DiagnosticPools& pools, std::size_t n_draws,
                               std::uint64_t seed) {
  if (n_draws < 2) throw InvalidInput("estimator_stats: need at least two draws");
  const auto w = draw_weighted(s, model, kind, net, pools, n_draws, seed);
  EstimatorStats st;
  st.n = n_draws;
  for (const auto& x : w) st.mean += x.value;
  st.mean /= static_cast<double>(n_draws);
  for (const auto& x : w) st.variance += (x.value - st.mean) * (x.value - st.mean);
  st.variance /= static_cast<double>(n_draws - 1);
  st.stderr_mean = std::sqrt(st.variance / static_cast<double>(n_draws));
  return st;
}

VarianceProfile variance_profile(const LogSnrSchedule& s, const VelocityField& model, StrategyKind kind,
                                 const MonotoneGammaNet* net, const DiagnosticPools& pools, std::size_t n_bins,
                                 std::size_t n_draws, std::uint64_t seed) {
  if (n_bins < 2) throw InvalidInput("variance_profile: n_bins must be >= 2");
  const auto w = draw_weighted(s, model, kind, net, pools, n_draws, seed);
  const double width = (s.gamma_max - s.gamma_min) / static_cast<double>(n_bins);
  std::vector<double> sum(n_bins, 0.0), sum2(n_bins, 0.0);
  VarianceProfile vp;
  vp.bins.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    vp.bins[b].lo = s.gamma_min + width * static_cast<double>(b);
    vp.bins[b].hi = b + 1 == n_bins ? s.gamma_max : s.gamma_min + width * static_cast<double>(b + 1);
  }
  for (const auto& x : w) {
    auto b = static_cast<std::size_t>(std::floor((x.gamma - s.gamma_min) / width));
    b = std::min(b, n_bins - 1);
    ++vp.bins[b].count;
    sum[b] += x.value;
  }
  for (std::size_t b = 0; b < n_bins; ++b)
    if (vp.bins[b].count > 0) vp.bins[b].mean = sum[b] / static_cast<double>(vp.bins[b].count);
  for (const auto& x : w) {
    auto b = std::min(static_cast<std::size_t>(std::floor((x.gamma - s.gamma_min) / width)), n_bins - 1);
    sum2[b] += (x.value - *vp.bins[b].mean) * (x.value - *vp.bins[b].mean);
  }
  double best = -1;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (vp.bins[b].count >= 2) {
      vp.bins[b].variance = sum2[b] / static_cast<double>(vp.bins[b].count - 1);
      if (*vp.bins[b].variance > best) {
        best = *vp.bins[b].variance;
        vp.peak_bin = b;
      }
    }
  }
  return vp;
}

MseProfile mse_profile(const LogSnrSchedule& s, const VelocityField& model, const DiagnosticPools& pools,
                       const std::vector<double>& gammas) {
  if (gammas.empty()) throw InvalidInput("mse_profile: empty gamma grid");
  MseProfile mp;
  for (double g : gammas) {
    double mv = 0, mn = 0;
    std::size_t n = 0;
    for (const auto& x0 : pools.x0)
      for (const auto& eps : pools.eps) {
        const PathSample p = sample_path(s, x0, eps, g);
        const Vec v = model.value(p.x_gamma, g);
        mv += (v - p.v_target).squaredNorm();
        const Vec e = convert_predictor(s, PredictorKind::NormalizedVelocity, PredictorKind::Noise, v, p.x_gamma, g);
        mn += (e - eps).squaredNorm();
        ++n;
      }
    mp.gamma.push_back(g);
    mp.mse_velocity.push_back(mv / static_cast<double>(n));
    mp.mse_noise.push_back(mn / static_cast<double>(n));
  }
  auto ratio = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi / *lo;
  };
  mp.ratio_velocity = ratio(mp.mse_velocity);
  mp.ratio_noise = ratio(mp.mse_noise);
  return mp;
}

}  // namespace dode
