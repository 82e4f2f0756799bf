#include "dode/objectives.hpp"

#include <cmath>

#include "dode/errors.hpp"

namespace dode {

std::string to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::Score: return "score";
    case PredictorKind::Noise: return "noise";
    case PredictorKind::Data: return "data";
    case PredictorKind::Velocity: return "velocity";
    case PredictorKind::NormalizedVelocity: return "normalized-velocity";
  }
  return "?";
}

PathSample sample_path(const LogSnrSchedule& s, const Vec& x0, const Vec& eps, double gamma) {
  if (x0.size() != eps.size()) throw InvalidInput("sample_path: x0 and eps dimensions differ");
  const ScheduleEval e = eval_schedule(s, gamma);
  PathSample p;
  p.x0 = x0;
  p.eps = eps;
  p.gamma = gamma;
  p.x_gamma = e.alpha * x0 + e.sigma * eps;
  p.v_target = (e.dalpha * x0 + e.dsigma * eps) / e.norm;
  return p;
}

namespace {

[[noreturn]] void singular(PredictorKind from, PredictorKind to, const char* what) {
  throw SingularityError("convert_predictor(" + to_string(from) + " -> " + to_string(to) + "): " + what +
                         " is zero at this gamma");
}

}  // namespace

Vec convert_predictor(const LogSnrSchedule& s, PredictorKind from, PredictorKind to, const Vec& value,
                      const Vec& x, double gamma) {
  if (value.size() != x.size()) throw InvalidInput("convert_predictor: dimension mismatch");
  if (from == to) return value;
  const ScheduleEval e = eval_schedule(s, gamma);
  const double a = e.alpha, sg = e.sigma;
  if (sg == 0.0) singular(from, to, "sigma");
  if (a == 0.0) singular(from, to, "alpha");
  const double s2 = sg * sg;
  const double lin = e.dalpha / a;                  // coefficient of x in v
  const double sc = lin * s2 - sg * e.dsigma;       // coefficient of the score in v
  if (sc == 0.0) singular(from, to, "velocity score coefficient");

  Vec score;
  switch (from) {
    case PredictorKind::Score: score = value; break;
    case PredictorKind::Noise: score = -value / sg; break;
    case PredictorKind::Data: score = (a * value - x) / s2; break;
    case PredictorKind::Velocity: score = (value - lin * x) / sc; break;
    case PredictorKind::NormalizedVelocity: score = (e.norm * value - lin * x) / sc; break;
  }
  switch (to) {
    case PredictorKind::Score: return score;
    case PredictorKind::Noise: return -sg * score;
    case PredictorKind::Data: return (x + s2 * score) / a;
    case PredictorKind::Velocity: return lin * x + sc * score;
    case PredictorKind::NormalizedVelocity: return (lin * x + sc * score) / e.norm;
  }
  return score;
}

double likelihood_weight(const LogSnrSchedule& s, double gamma) {
  const ScheduleEval e = eval_schedule(s, gamma);
  return 2.0 * e.norm * e.norm / (e.sigma * e.sigma);
}

Mat draw_probes(Eigen::Index d, std::size_t n, ProbeKind kind, Rng& rng) {
  if (n == 0) throw InvalidInput("divergence: Hutchinson needs at least one probe");
  Mat u(d, static_cast<Eigen::Index>(n));
  if (kind == ProbeKind::Gaussian) {
    std::normal_distribution<double> n01;
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n01(rng);
  } else {
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = coin(rng) ? 1.0 : -1.0;
  }
  return u;
}

namespace {

void check_batch(std::span<const PathSample> batch, std::span<const double> w, Eigen::Index d) {
  if (batch.empty()) throw InvalidInput("objectives: empty batch");
  if (w.size() != batch.size()) throw InvalidInput("objectives: one importance weight per sample required");
  for (const auto& p : batch)
    if (p.x_gamma.size() != d) throw InvalidInput("objectives: sample dimension does not match model");
}

void finish(LossValue& r, Eigen::Index d) {
  double sum = 0;
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    if (!std::isfinite(r.per_sample[i])) throw NumericFailure("objectives: non-finite loss at batch index " + std::to_string(i), i);
    sum += r.per_sample[i];
  }
  r.total = sum / static_cast<double>(r.per_sample.size());
  r.per_dim = r.total / static_cast<double>(d);
}

}  // namespace

double trace_residual(const LogSnrSchedule& s, double gamma, double trace, const Vec& v_model,
                      const Vec& v_target) {
  const ScheduleEval e = eval_schedule(s, gamma);
  const double d = static_cast<double>(v_model.size());
  return e.sigma * trace - (e.dsigma / e.norm) * d + (2.0 * e.norm / e.sigma) * (v_model - v_target).squaredNorm();
}

LossValue fm_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                  std::span<const double> is_weights) {
  check_batch(batch, is_weights, model.dim());
  LossValue r;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    const Vec v = model.value(p.x_gamma, p.gamma);
    if (!v.allFinite()) throw NumericFailure("fm_loss: non-finite model output at batch index " + std::to_string(i), i);
    r.per_sample.push_back(is_weights[i] * likelihood_weight(s, p.gamma) * (v - p.v_target).squaredNorm());
  }
  finish(r, model.dim());
  return r;
}

namespace {

Mat trace_tangents(Eigen::Index d, const TraceOptions& opt, Rng* rng, double& scale) {
  if (!opt.hutchinson) {
    scale = 1.0;
    return Mat::Identity(d, d);
  }
  if (!rng) throw InvalidInput("fm_trace_loss: Hutchinson mode needs an rng");
  scale = 1.0 / static_cast<double>(opt.probes);
  return draw_probes(d, opt.probes, opt.probe, *rng);
}

}  // namespace

LossValue fm_trace_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                        std::span<const double> is_weights, const TraceOptions& opt, Rng* rng) {
  check_batch(batch, is_weights, model.dim());
  LossValue r;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    double scale;
    const Mat U = trace_tangents(model.dim(), opt, rng, scale);
    Vec v;
    const Mat JU = model.jvp(p.x_gamma, p.gamma, U, &v);
    if (!v.allFinite() || !JU.allFinite())
      throw NumericFailure("fm_trace_loss: non-finite model output at batch index " + std::to_string(i), i);
    const double tr = scale * U.cwiseProduct(JU).sum();
    const double res = trace_residual(s, p.gamma, tr, v, p.v_target);
    r.per_sample.push_back(is_weights[i] * likelihood_weight(s, p.gamma) * res * res);
  }
  finish(r, model.dim());
  return r;
}

LossValue mixed_loss(const LogSnrSchedule& s, const VelocityField& model, std::span<const PathSample> batch,
                     std::span<const double> is_weights, double lambda, const TraceOptions& opt, Rng* rng) {
  if (!(lambda >= 0)) throw InvalidInput("mixed_loss: lambda must be >= 0");
  LossValue a = fm_loss(s, model, batch, is_weights);
  if (lambda == 0.0) return a;
  const LossValue b = fm_trace_loss(s, model, batch, is_weights, opt, rng);
  for (std::size_t i = 0; i < a.per_sample.size(); ++i) a.per_sample[i] += lambda * b.per_sample[i];
  finish(a, model.dim());
  return a;
}

LossValue mixed_loss_grad(const LogSnrSchedule& s, const VelocityModel& model, std::span<const PathSample> batch,
                          std::span<const double> is_weights, double lambda, std::vector<double>& grad,
                          const TraceOptions& opt, Rng* rng) {
  if (!(lambda >= 0)) throw InvalidInput("mixed_loss: lambda must be >= 0");
  const Eigen::Index d = model.dim();
  check_batch(batch, is_weights, d);
  const auto B = static_cast<Eigen::Index>(batch.size());
  ModelBatch mb;
  mb.x.resize(d, B);
  mb.gamma.resize(B);
  Mat Y(d, B);
  std::vector<double> W(batch.size()), sig(batch.size()), off(batch.size()), quad(batch.size());
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& p = batch[static_cast<std::size_t>(i)];
    mb.x.col(i) = p.x_gamma;
    mb.gamma[i] = p.gamma;
    Y.col(i) = p.v_target;
    const ScheduleEval e = eval_schedule(s, p.gamma);
    W[i] = is_weights[i] * 2.0 * e.norm * e.norm / (e.sigma * e.sigma);
    sig[i] = e.sigma;
    off[i] = (e.dsigma / e.norm) * static_cast<double>(d);
    quad[i] = 2.0 * e.norm / e.sigma;
  }
  const bool second = lambda > 0.0;
  std::vector<Mat> probes;  // d x B per stream
  double scale = 1.0;
  if (second) {
    const std::size_t K = opt.hutchinson ? opt.probes : static_cast<std::size_t>(d);
    probes.assign(K, Mat::Zero(d, B));
    if (opt.hutchinson) {
      if (!rng) throw InvalidInput("fm_trace_loss: Hutchinson mode needs an rng");
      scale = 1.0 / static_cast<double>(K);
      for (Eigen::Index i = 0; i < B; ++i) {
        const Mat U = draw_probes(d, K, opt.probe, *rng);
        for (std::size_t k = 0; k < K; ++k) probes[k].col(i) = U.col(static_cast<Eigen::Index>(k));
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) probes[k].row(static_cast<Eigen::Index>(k)).setOnes();
    }
    for (const auto& u : probes) mb.input_tangents.push_back(model.pad_data_tangent(u));
  }
  const double invB = 1.0 / static_cast<double>(B);
  auto fn = [&](const Mat& V, const std::vector<Mat>& T) {
    BatchLoss r;
    r.d_value.resize(d, B);
    r.per_sample.resize(batch.size());
    if (second) r.d_tangents.assign(probes.size(), Mat::Zero(d, B));
    double sum = 0;
    for (Eigen::Index i = 0; i < B; ++i) {
      const Vec diff = V.col(i) - Y.col(i);
      const double sq = diff.squaredNorm();
      double li = W[i] * sq;
      r.d_value.col(i) = (2.0 * W[i] * invB) * diff;
      if (second) {
        double tr = 0;
        for (std::size_t k = 0; k < probes.size(); ++k) tr += probes[k].col(i).dot(T[k].col(i));
        tr *= scale;
        const double res = sig[i] * tr - off[i] + quad[i] * sq;
        li += lambda * W[i] * res * res;
        const double c = lambda * invB * 2.0 * W[i] * res * sig[i] * scale;
        for (std::size_t k = 0; k < probes.size(); ++k) r.d_tangents[k].col(i) = c * probes[k].col(i);
      }
      r.per_sample[i] = li;
      sum += li;
    }
    r.loss = sum * invB;
    return r;
  };
  const BatchLoss bl = model_loss_and_grad(model, fn, mb, grad);
  LossValue out;
  out.per_sample = bl.per_sample;
  out.total = bl.loss;
  out.per_dim = bl.loss / static_cast<double>(d);
  return out;
}

LossValue fm_loss_grad(const LogSnrSchedule& s, const VelocityModel& model, std::span<const PathSample> batch,
                       std::span<const double> is_weights, std::vector<double>& grad) {
  return mixed_loss_grad(s, model, batch, is_weights, 0.0, grad);
}

Preconditioning preconditioning(const LogSnrSchedule& s, double gamma, double sigma_data) {
  if (!(sigma_data > 0) || !std::isfinite(sigma_data)) throw InvalidInput("preconditioning: sigma_data must be > 0");
  const ScheduleEval e = eval_schedule(s, gamma);
  const double q = e.sigma * e.sigma + sigma_data * sigma_data * e.alpha * e.alpha;
  const double rq = std::sqrt(q);
  return {1.0 / rq, e.sigma / q, sigma_data * e.alpha / rq};
}

}  // namespace dode
