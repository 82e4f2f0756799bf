#include "dode/netcore.hpp"

#include <cmath>
#include <random>

#include "dode/errors.hpp"

namespace dode {

std::string to_string(Activation a) { return a == Activation::SiLU ? "silu" : "tanh"; }

Activation parse_activation(std::string_view s) {
  if (s == "silu" || s == "SiLU") return Activation::SiLU;
  if (s == "tanh" || s == "Tanh") return Activation::Tanh;
  throw InvalidInput("netcore: unknown activation '" + std::string(s) + "'");
}

std::vector<Eigen::Index> ModelShape::widths() const {
  std::vector<Eigen::Index> w{input_dim()};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(data_dim);
  return w;
}

std::size_t ModelShape::param_count() const {
  const auto w = widths();
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) n += static_cast<std::size_t>(w[l + 1] * (w[l] + 1));
  return n;
}

void ModelShape::validate() const {
  if (data_dim < 1) throw InvalidInput("netcore: data_dim must be >= 1");
  if (embed_freqs < 0) throw InvalidInput("netcore: embed_freqs must be >= 0");
  for (auto h : hidden)
    if (h < 1) throw InvalidInput("netcore: hidden widths must be positive");
  if (!(gamma_min < gamma_max)) throw InvalidInput("netcore: gamma_min must be < gamma_max");
}

namespace {

using CMap = Eigen::Map<const Mat>;
using CVMap = Eigen::Map<const Vec>;
using MMap = Eigen::Map<Mat>;
using VMap = Eigen::Map<Vec>;

void activate(Activation act, const Mat& z, Mat& a, Mat& d1, Mat& d2) {
  a.resize(z.rows(), z.cols());
  d1.resize(z.rows(), z.cols());
  d2.resize(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double v = z.data()[i];
    if (act == Activation::SiLU) {
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      a.data()[i] = v * s;
      d1.data()[i] = s * (1.0 + v * (1.0 - s));
      d2.data()[i] = s * (1.0 - s) * (2.0 + v * (1.0 - 2.0 * s));
    } else {
      const double t = std::tanh(v);
      a.data()[i] = t;
      d1.data()[i] = 1.0 - t * t;
      d2.data()[i] = -2.0 * t * (1.0 - t * t);
    }
  }
}

}  // namespace

VelocityModel::VelocityModel(ModelShape shape) : shape_(std::move(shape)) {
  shape_.validate();
  params_.assign(shape_.param_count(), 0.0);
  const auto w = shape_.widths();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(w[l + 1] * (w[l] + 1));
  }
}

VelocityModel VelocityModel::initialized(ModelShape shape, std::uint64_t seed) {
  VelocityModel m(std::move(shape));
  std::mt19937_64 rng(seed);
  const auto w = m.shape_.widths();
  const std::size_t layers = w.size() - 1;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    const double lim = std::sqrt(3.0 / static_cast<double>(w[l]));
    std::uniform_real_distribution<double> u(-lim, lim);
    double* W = m.params_.data() + m.offsets_[l];
    for (Eigen::Index i = 0; i < w[l + 1] * w[l]; ++i) W[i] = u(rng);
  }
  return m;
}

Vec VelocityModel::embed(double gamma) const {
  const double g = (gamma - shape_.gamma_min) / (shape_.gamma_max - shape_.gamma_min);
  Vec e(shape_.embed_dim());
  e[0] = g;
  for (int k = 0; k < shape_.embed_freqs; ++k) {
    const double f = std::ldexp(1.0, k);
    e[1 + 2 * k] = std::sin(f * g);
    e[2 + 2 * k] = std::cos(f * g);
  }
  return e;
}

Vec VelocityModel::embed_derivative(double gamma) const {
  const double scale = 1.0 / (shape_.gamma_max - shape_.gamma_min);
  const double g = (gamma - shape_.gamma_min) * scale;
  Vec e(shape_.embed_dim());
  e[0] = scale;
  for (int k = 0; k < shape_.embed_freqs; ++k) {
    const double f = std::ldexp(1.0, k);
    e[1 + 2 * k] = f * scale * std::cos(f * g);
    e[2 + 2 * k] = -f * scale * std::sin(f * g);
  }
  return e;
}

Mat VelocityModel::make_input(const Mat& x, const Vec& gamma) const {
  if (x.rows() != shape_.data_dim || x.cols() != gamma.size())
    throw InvalidInput("model_forward: input is " + std::to_string(x.rows()) + "x" +
                       std::to_string(x.cols()) + ", model expects d=" + std::to_string(shape_.data_dim));
  Mat in(shape_.input_dim(), x.cols());
  in.topRows(shape_.data_dim) = x;
  for (Eigen::Index b = 0; b < x.cols(); ++b) in.col(b).tail(shape_.embed_dim()) = embed(gamma[b]);
  return in;
}

Mat VelocityModel::pad_data_tangent(const Mat& u) const {
  Mat t = Mat::Zero(shape_.input_dim(), u.cols());
  t.topRows(shape_.data_dim) = u;
  return t;
}

ForwardPass VelocityModel::forward(const Mat& input, const std::vector<Mat>& input_tangents) const {
  const auto w = shape_.widths();
  const std::size_t L = w.size() - 1;
  const std::size_t K = input_tangents.size();
  if (input.rows() != w[0]) throw InvalidInput("model_forward: bad input width");
  ForwardPass p;
  p.h.reserve(L + 1);
  p.h.push_back(input);
  p.th.resize(L + 1);
  p.tz.resize(L);
  p.th[0] = input_tangents;
  for (const auto& t : input_tangents)
    if (t.rows() != w[0] || t.cols() != input.cols()) throw InvalidInput("model_jvp: bad tangent shape");
  p.d1.resize(L - 1);
  p.d2.resize(L - 1);
  for (std::size_t l = 0; l < L; ++l) {
    const CMap W(params_.data() + offsets_[l], w[l + 1], w[l]);
    const CVMap b(params_.data() + offsets_[l] + w[l + 1] * w[l], w[l + 1]);
    Mat z = W * p.h[l];
    z.colwise() += b;
    p.tz[l].resize(K);
    for (std::size_t k = 0; k < K; ++k) p.tz[l][k] = W * p.th[l][k];
    if (l + 1 < L) {
      Mat a;
      activate(shape_.activation, z, a, p.d1[l], p.d2[l]);
      p.h.push_back(std::move(a));
      p.th[l + 1].resize(K);
      for (std::size_t k = 0; k < K; ++k) p.th[l + 1][k] = p.d1[l].cwiseProduct(p.tz[l][k]);
    } else {
      p.h.push_back(std::move(z));
      p.th[l + 1] = p.tz[l];
    }
  }
  return p;
}

void VelocityModel::backward(const ForwardPass& p, const Mat& d_out, const std::vector<Mat>& d_tout,
                             std::vector<double>& grad) const {
  const auto w = shape_.widths();
  const std::size_t L = w.size() - 1;
  const bool tang = !d_tout.empty();
  const std::size_t K = tang ? d_tout.size() : 0;
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  if (tang && K != p.th[0].size()) throw InvalidInput("model_loss_and_grad: tangent adjoint count mismatch");

  Mat hbar = d_out;
  std::vector<Mat> thbar(d_tout.begin(), d_tout.end());
  for (std::size_t l = L; l-- > 0;) {
    Mat zbar;
    std::vector<Mat> tzbar(K);
    if (l + 1 == L) {
      zbar = std::move(hbar);
      for (std::size_t k = 0; k < K; ++k) tzbar[k] = std::move(thbar[k]);
    } else {
      zbar = hbar.cwiseProduct(p.d1[l]);
      for (std::size_t k = 0; k < K; ++k) {
        zbar.array() += thbar[k].array() * p.tz[l][k].array() * p.d2[l].array();
        tzbar[k] = thbar[k].cwiseProduct(p.d1[l]);
      }
    }
    MMap gW(grad.data() + offsets_[l], w[l + 1], w[l]);
    VMap gb(grad.data() + offsets_[l] + w[l + 1] * w[l], w[l + 1]);
    gW.noalias() += zbar * p.h[l].transpose();
    for (std::size_t k = 0; k < K; ++k) gW.noalias() += tzbar[k] * p.th[l][k].transpose();
    gb += zbar.rowwise().sum();
    if (l > 0) {
      const CMap W(params_.data() + offsets_[l], w[l + 1], w[l]);
      hbar = W.transpose() * zbar;
      thbar.resize(K);
      for (std::size_t k = 0; k < K; ++k) thbar[k] = W.transpose() * tzbar[k];
    }
  }
}

Vec VelocityModel::value(const Vec& x, double gamma) const {
  const Mat in = make_input(x, Vec::Constant(1, gamma));
  return forward(in, {}).output().col(0);
}

Mat VelocityModel::jvp(const Vec& x, double gamma, const Mat& tangents, Vec* value_out) const {
  if (tangents.rows() != shape_.data_dim) throw InvalidInput("model_jvp: tangent dimension mismatch");
  const Mat in = make_input(x, Vec::Constant(1, gamma));
  // One stream carrying all k directions as columns would mix batch and
  // direction axes, so use k streams of width 1.
  std::vector<Mat> ts;
  ts.reserve(static_cast<std::size_t>(tangents.cols()));
  for (Eigen::Index k = 0; k < tangents.cols(); ++k) ts.push_back(pad_data_tangent(tangents.col(k)));
  const ForwardPass p = forward(in, ts);
  if (value_out) *value_out = p.output().col(0);
  Mat out(shape_.data_dim, tangents.cols());
  for (Eigen::Index k = 0; k < tangents.cols(); ++k) out.col(k) = p.tangent_output(static_cast<std::size_t>(k)).col(0);
  return out;
}

BatchLoss model_loss_and_grad(const VelocityModel& m, const BatchLossFn& loss_fn, const ModelBatch& batch,
                              std::vector<double>& grad) {
  const Mat in = m.make_input(batch.x, batch.gamma);
  const ForwardPass p = m.forward(in, batch.input_tangents);
  std::vector<Mat> tout(p.th.back().begin(), p.th.back().end());
  BatchLoss r = loss_fn(p.output(), tout);
  if (!std::isfinite(r.loss)) {
    std::size_t bad = NumericFailure::npos;
    for (std::size_t i = 0; i < r.per_sample.size(); ++i)
      if (!std::isfinite(r.per_sample[i])) { bad = i; break; }
    throw NumericFailure("model_loss_and_grad: non-finite loss" +
                             (bad == NumericFailure::npos ? std::string() : " at batch index " + std::to_string(bad)),
                         bad);
  }
  grad.assign(m.param_count(), 0.0);
  if (r.d_value.size() == 0) r.d_value = Mat::Zero(p.output().rows(), p.output().cols());
  m.backward(p, r.d_value, r.d_tangents, grad);
  return r;
}

}  // namespace dode
