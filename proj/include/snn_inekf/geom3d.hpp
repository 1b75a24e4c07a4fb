#pragma once

// Minimal SO(3) toolkit: skew maps, exponential/logarithm, left Jacobian and a
// strong Rotation type. The scalar-templated kernels are also instantiated with
// forward-mode dual numbers by the autodiff tape.

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "snn_inekf/errors.hpp"

namespace snn_inekf {

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;

namespace geom_detail {

inline double value_of(double x) { return x; }
template <typename T>
double value_of(const T& x) {
  return x.value();
}

}  // namespace geom_detail

// Below this angle the exp coefficients switch to their Taylor series.
inline constexpr double kSmallAngle = 1e-8;
// The left-Jacobian coefficient (θ − sinθ)/θ³ cancels badly well before 1e-8.
inline constexpr double kSmallAngleJacobian = 1e-4;
// Log switches to the symmetric-part eigenvector branch within this distance of π.
inline constexpr double kNearPi = 1e-4;

/// Cross-product matrix: skew(v) * w == v.cross(w).
template <typename T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> m;
  m(0, 0) = T(0);
  m(0, 1) = -v(2);
  m(0, 2) = v(1);
  m(1, 0) = v(2);
  m(1, 1) = T(0);
  m(1, 2) = -v(0);
  m(2, 0) = -v(1);
  m(2, 1) = v(0);
  m(2, 2) = T(0);
  return m;
}

/// Inverse of skew() on the antisymmetric part of m.
template <typename T>
Vec3T<T> vee(const Mat3T<T>& m) {
  return Vec3T<T>((m(2, 1) - m(1, 2)) * T(0.5), (m(0, 2) - m(2, 0)) * T(0.5),
                  (m(1, 0) - m(0, 1)) * T(0.5));
}

/// Rodrigues formula I + sinθ/θ [θ×] + (1−cosθ)/θ² [θ×]². Returns a plain matrix.
template <typename T>
Mat3T<T> so3_exp_matrix(const Vec3T<T>& theta) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = theta.squaredNorm();
  const Mat3T<T> k = skew(theta);
  T a;
  T b;
  if (geom_detail::value_of(theta2) < kSmallAngle * kSmallAngle) {
    a = T(1) - theta2 / T(6);
    b = T(0.5) - theta2 / T(24);
  } else {
    const T angle = sqrt(theta2);
    const T half_sin = sin(angle * T(0.5));
    a = sin(angle) / angle;
    b = T(2) * half_sin * half_sin / theta2;
  }
  return Mat3T<T>::Identity() + a * k + b * (k * k);
}

/// Left Jacobian of SO(3): I + (1−cosθ)/θ² [θ×] + (θ−sinθ)/θ³ [θ×]².
template <typename T>
Mat3T<T> so3_left_jacobian(const Vec3T<T>& theta) {
  using std::sin;
  using std::sqrt;
  const T theta2 = theta.squaredNorm();
  const Mat3T<T> k = skew(theta);
  T a;
  T b;
  if (geom_detail::value_of(theta2) < kSmallAngleJacobian * kSmallAngleJacobian) {
    a = T(0.5) - theta2 / T(24) + theta2 * theta2 / T(720);
    b = T(1) / T(6) - theta2 / T(120) + theta2 * theta2 / T(5040);
  } else {
    const T angle = sqrt(theta2);
    const T half_sin = sin(angle * T(0.5));
    a = T(2) * half_sin * half_sin / theta2;
    b = (angle - sin(angle)) / (theta2 * angle);
  }
  return Mat3T<T>::Identity() + a * k + b * (k * k);
}

/// Logarithm via atan2 of the antisymmetric and trace parts, valid for angles
/// away from π. The input need not be exactly orthonormal.
template <typename T>
Vec3T<T> so3_log_generic(const Mat3T<T>& r) {
  using std::atan2;
  using std::sqrt;
  const Vec3T<T> w = vee(r);  // sinθ · n
  const T sin_norm2 = w.squaredNorm();
  const T cos_angle = (r.trace() - T(1)) * T(0.5);
  if (geom_detail::value_of(sin_norm2) < kSmallAngle * kSmallAngle &&
      geom_detail::value_of(cos_angle) > 0.0) {
    // θ/sinθ ≈ 1 + θ²/6 with θ² ≈ sin²θ at this scale.
    return w * (T(1) + sin_norm2 / T(6));
  }
  const T sin_norm = sqrt(sin_norm2);
  const T angle = atan2(sin_norm, cos_angle);
  return w * (angle / sin_norm);
}

/// Logarithm of a (near-)rotation matrix with ‖result‖ ∈ [0, π]. Near π the axis
/// comes from the dominant eigenvector of the symmetric part.
inline Vec3 so3_log_matrix(const Mat3& r) {
  const double cos_angle = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double angle_est = std::acos(cos_angle);
  if (angle_est < std::numbers::pi - kNearPi) {
    return so3_log_generic<double>(r);
  }
  // (R + Rᵀ)/2 − cosθ·I = (1 − cosθ)·n nᵀ
  const Mat3 sym = 0.5 * (r + r.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  Vec3 axis = solver.eigenvectors().col(2).normalized();
  const Vec3 w = vee(r);
  if (axis.dot(w) < 0.0) axis = -axis;
  const double angle = std::atan2(w.norm(), cos_angle);
  return axis * angle;
}

/// Orthonormal 3×3 matrix with determinant +1.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  /// Wraps m without checks. Use when m is orthonormal by construction.
  static Rotation from_matrix_unchecked(const Mat3& m) { return Rotation(m); }

  /// Wraps m after verifying orthonormality within tol.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9) {
    if (!m.allFinite()) throw InvalidInput("rotation matrix has non-finite entries");
    if (orthonormality_error(m) > tol || std::abs(m.determinant() - 1.0) > tol) {
      throw InvalidInput("matrix is not a proper rotation");
    }
    return Rotation(m);
  }

  /// Nearest rotation in the Frobenius sense (SVD projection).
  static Rotation project(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return Rotation(u * v.transpose());
  }

  static Rotation about_z(double angle) {
    Mat3 m;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return Rotation(m);
  }

  /// Intrinsic Z-Y-X (yaw, pitch, roll): Rz(yaw)·Ry(pitch)·Rx(roll).
  static Rotation from_rpy(double roll, double pitch, double yaw) {
    const double cr = std::cos(roll), sr = std::sin(roll);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    Mat3 rx, ry, rz;
    rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
    ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
    rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
    return Rotation(rz * ry * rx);
  }

  const Mat3& matrix() const { return m_; }

  Rotation inverse() const { return Rotation(m_.transpose()); }

  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// max |RᵀR − I|
  static double orthonormality_error(const Mat3& m) {
    return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  }
  double orthonormality_error() const { return orthonormality_error(m_); }

  /// Re-projects onto SO(3) when drift exceeds tol; returns whether it did.
  bool renormalize_if_needed(double tol) {
    if (orthonormality_error(m_) <= tol && std::abs(m_.determinant() - 1.0) <= tol) {
      return false;
    }
    *this = project(m_);
    return true;
  }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// SO(3) exponential. Output is re-projected if Rodrigues round-off leaves it
/// more than 1e-12 away from orthonormal.
inline Rotation so3_exp(const Vec3& theta) {
  Rotation r = Rotation::from_matrix_unchecked(so3_exp_matrix<double>(theta));
  r.renormalize_if_needed(1e-12);
  return r;
}

inline Vec3 so3_log(const Rotation& r) { return so3_log_matrix(r.matrix()); }

/// Geodesic interpolation: a · exp(s · log(aᵀ b)), s ∈ [0, 1].
inline Rotation so3_interpolate(const Rotation& a, const Rotation& b, double s) {
  const Vec3 delta = so3_log(a.inverse() * b);
  return a * so3_exp(s * delta);
}

/// Angle of a rotation in [0, π].
inline double rotation_angle(const Rotation& r) { return so3_log(r).norm(); }

}  // namespace snn_inekf
