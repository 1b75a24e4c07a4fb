#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include <Eigen/Core>

#include "snn_inekf/errors.hpp"

namespace snn_inekf {

inline constexpr std::size_t kNetOutputSize = 14;

/// The 14-component network head: six log-scale calibration terms, six biases
/// (gyro rad/s then accel m/s²) and two log10 covariance multipliers.
struct NetOutput {
  std::array<double, 6> c{};
  std::array<double, 6> b{};
  std::array<double, 2> r{};

  static NetOutput zero() { return {}; }

  static NetOutput from_vector(const Eigen::VectorXd& y) {
    if (y.size() != static_cast<Eigen::Index>(kNetOutputSize)) {
      throw InvalidInput("network output must have 14 components");
    }
    NetOutput out;
    for (int i = 0; i < 6; ++i) out.c[i] = y(i);
    for (int i = 0; i < 6; ++i) out.b[i] = y(6 + i);
    for (int i = 0; i < 2; ++i) out.r[i] = y(12 + i);
    return out;
  }

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd y(kNetOutputSize);
    for (int i = 0; i < 6; ++i) y(i) = c[i];
    for (int i = 0; i < 6; ++i) y(6 + i) = b[i];
    for (int i = 0; i < 2; ++i) y(12 + i) = r[i];
    return y;
  }

  bool all_finite() const { return to_vector().allFinite(); }
};

}  // namespace snn_inekf
