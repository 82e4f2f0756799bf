#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dode/analytic.hpp"

namespace dode {

/// The 256 scaled levels (X + 1/2 - 128) / 128, shared by quantization and the
/// dequantization bounds.
const std::array<double, 256>& level_table();
double level_value(int X);
/// Clamp to [-1, 1 - 1/128], then floor-bin.
int quantize(double x);

using IMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

enum class DatasetKind { Gauss, GaussMixture, Checkerboard2D, Discrete256 };

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view s);

/// Generation parameters. `components` is used for mixtures and for the
/// continuous source behind Discrete256.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::GaussMixture;
  Eigen::Index d = 2;
  double s0 = 1.0;
  std::vector<MixtureComponent> components;
  std::string source = "gauss";  // Discrete256 source: gauss | mixture | checkerboard
};

/// The two-component 2-D mixture used for the desk-scale training runs.
DatasetSpec default_mixture_spec();

struct Dataset {
  DatasetSpec spec;
  Eigen::MatrixXd samples;          // n x d, scaled values
  std::optional<IMat> discrete;     // n x d levels 0..255 (Discrete256 only)

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
  Eigen::VectorXd row(Eigen::Index i) const { return samples.row(i).transpose(); }
  /// Analytic density of the continuous generator, when it has one.
  std::optional<GaussianMixtureOracle> oracle(const LogSnrSchedule& s) const;
};

Dataset generate(const DatasetSpec& spec, Eigen::Index n, std::uint64_t seed);
Dataset subset(const Dataset& ds, Eigen::Index begin, Eigen::Index end);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);

}  // namespace dode
