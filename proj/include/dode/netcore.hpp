#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dode/field.hpp"

namespace dode {

enum class Activation { SiLU, Tanh };

std::string to_string(Activation a);
Activation parse_activation(std::string_view s);

struct ModelShape {
  Eigen::Index data_dim = 2;
  std::vector<Eigen::Index> hidden{128, 128, 128};
  int embed_freqs = 4;
  Activation activation = Activation::SiLU;
  // Range used to scale gamma before embedding.
  double gamma_min = -13.3;
  double gamma_max = 5.0;

  Eigen::Index embed_dim() const { return 1 + 2 * embed_freqs; }
  Eigen::Index input_dim() const { return data_dim + embed_dim(); }
  std::vector<Eigen::Index> widths() const;
  std::size_t param_count() const;
  void validate() const;
};

/// Everything the backward sweep needs from one batched forward sweep,
/// including the tangent streams.
struct ForwardPass {
  std::vector<Mat> h;                 // h[l]: input of layer l; h.back(): output
  std::vector<Mat> d1, d2;            // activation first/second derivative per hidden layer
  std::vector<std::vector<Mat>> th;   // tangent of h[l], per stream
  std::vector<std::vector<Mat>> tz;   // tangent of pre-activation, per layer, per stream
  const Mat& output() const { return h.back(); }
  const Mat& tangent_output(std::size_t k) const { return th.back()[k]; }
};

/// Dense MLP predicting the normalized velocity from [x; embed(gamma)].
/// Parameters are one flat vector: per layer W (out x in, column-major), then b.
class VelocityModel final : public VelocityField {
 public:
  explicit VelocityModel(ModelShape shape);
  /// Variance-scaled uniform hidden layers, zero output layer.
  static VelocityModel initialized(ModelShape shape, std::uint64_t seed);

  const ModelShape& shape() const { return shape_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  Eigen::Index dim() const override { return shape_.data_dim; }
  Vec value(const Vec& x, double gamma) const override;
  Mat jvp(const Vec& x, double gamma, const Mat& tangents, Vec* value_out) const override;

  Vec embed(double gamma) const;
  Vec embed_derivative(double gamma) const;
  /// Network input columns [x_i; embed(gamma_i)].
  Mat make_input(const Mat& x, const Vec& gamma) const;

  /// `input_tangents` are input_dim x B each (use pad_data_tangent for x-only directions).
  ForwardPass forward(const Mat& input, const std::vector<Mat>& input_tangents) const;
  /// Accumulates into grad (size param_count). d_tangent_out may be empty, in
  /// which case tangent streams carry no adjoint.
  void backward(const ForwardPass& pass, const Mat& d_out, const std::vector<Mat>& d_tangent_out,
                std::vector<double>& grad) const;

  Mat pad_data_tangent(const Mat& u) const;

 private:
  ModelShape shape_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;  // start of W for each layer
};

struct ModelBatch {
  Mat x;                          // d x B
  Vec gamma;                      // B
  std::vector<Mat> input_tangents;  // each input_dim x B
};

struct BatchLoss {
  double loss = 0.0;
  Mat d_value;                    // d loss / d output, d x B
  std::vector<Mat> d_tangents;    // d loss / d tangent output (empty: none)
  std::vector<double> per_sample;
};

using BatchLossFn = std::function<BatchLoss(const Mat& value, const std::vector<Mat>& tangent_out)>;

/// Evaluates loss_fn on the model outputs and returns the loss; `grad` receives
/// the exact gradient w.r.t. every parameter.
BatchLoss model_loss_and_grad(const VelocityModel& m, const BatchLossFn& loss_fn, const ModelBatch& batch,
                              std::vector<double>& grad);

/// Monotone map t in [0,1] -> [gamma0, gamma1] built from a positive-weight
/// one-hidden-layer sigmoid network, rescaled so the endpoints are exact.
class MonotoneGammaNet {
 public:
  MonotoneGammaNet(double gamma0, double gamma1, std::size_t hidden = 1024);
  /// Random logs of weights; biases spread so sigmoid steps tile [0,1].
  static MonotoneGammaNet initialized(double gamma0, double gamma1, std::uint64_t seed,
                                      std::size_t hidden = 1024);
  /// Tiny first-layer weights: interior is linear in t to high accuracy.
  static MonotoneGammaNet near_linear(double gamma0, double gamma1, std::size_t hidden = 1024);

  struct Eval {
    double gamma;
    double dgamma_dt;
  };
  Eval operator()(double t) const;
  /// grad += dgamma/dparams * gbar + d(dgamma_dt)/dparams * rbar
  void accumulate_grad(double t, double gbar, double rbar, std::vector<double>& grad) const;

  std::size_t hidden() const { return hidden_; }
  double gamma0() const { return g0_; }
  double gamma1() const { return g1_; }
  // Layout: [log w1 (H), b1 (H), log w2 (H)].
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

 private:
  double g0_, g1_;
  std::size_t hidden_;
  std::vector<double> params_;
};

MonotoneGammaNet::Eval monotone_gamma(const MonotoneGammaNet& net, double t);

}  // namespace dode
