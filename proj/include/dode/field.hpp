#pragma once

#include <Eigen/Dense>

namespace dode {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Anything that predicts the normalized velocity at (x, gamma).
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Vec value(const Vec& x, double gamma) const = 0;
  /// Returns J * tangents (d x k), J = d value / d x at fixed gamma.
  /// If `value_out` is non-null it receives value(x, gamma).
  virtual Mat jvp(const Vec& x, double gamma, const Mat& tangents, Vec* value_out) const = 0;

  /// Exact trace of J from d basis tangents.
  double trace_jacobian(const Vec& x, double gamma, Vec* value_out = nullptr) const {
    const Mat J = jvp(x, gamma, Mat::Identity(dim(), dim()), value_out);
    return J.trace();
  }
};

/// value = A x + b; used as an analytically tractable test field.
class LinearField final : public VelocityField {
 public:
  LinearField(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {}
  explicit LinearField(Mat A) : A_(std::move(A)), b_(Vec::Zero(A_.rows())) {}
  Eigen::Index dim() const override { return A_.rows(); }
  Vec value(const Vec& x, double) const override { return A_ * x + b_; }
  Mat jvp(const Vec& x, double g, const Mat& t, Vec* v) const override {
    if (v) *v = value(x, g);
    return A_ * t;
  }

 private:
  Mat A_;
  Vec b_;
};

}  // namespace dode
