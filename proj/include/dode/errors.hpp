#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dode {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Non-finite values in a loss, state or model output. `index` is the batch
// element or datum that produced it, when known.
class NumericFailure : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  explicit NumericFailure(const std::string& what, std::size_t index = npos)
      : Error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, Eigen::VectorXd partial, double reached)
      : Error(what), partial_(std::move(partial)), reached_(reached) {}
  const Eigen::VectorXd& partial_state() const { return partial_; }
  double reached_time() const { return reached_; }

 private:
  Eigen::VectorXd partial_;
  double reached_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

}  // namespace dode
