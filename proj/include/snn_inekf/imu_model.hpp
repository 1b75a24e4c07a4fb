#pragma once

// Low-cost MEMS IMU error model. corrupt() is the forward simulator
// (measurement = C·truth + bias + noise); apply_correction() is the learned
// inverse u = C⁻¹·ũ + δ with δ folded into a single subtracted bias.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"
#include "snn_inekf/net_output.hpp"
#include "snn_inekf/rng.hpp"

namespace snn_inekf {

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s²

  bool all_finite() const {
    return std::isfinite(t) && gyro.allFinite() && accel.allFinite();
  }
};

/// Deterministic sensor imperfections: scale, misalignment, g-sensitivity,
/// fixed biases and white noise.
struct ErrorModel {
  Vec3 scale_gyro = Vec3::Ones();
  Vec3 scale_accel = Vec3::Ones();
  Mat3 misalign_gyro = Mat3::Identity();
  Mat3 misalign_accel = Mat3::Identity();
  Mat3 g_sensitivity = Mat3::Zero();  // rad/s per m/s²
  Vec3 bias_gyro = Vec3::Zero();
  Vec3 bias_accel = Vec3::Zero();
  double sigma_gyro = 0.0;
  double sigma_accel = 0.0;

  static ErrorModel identity() { return {}; }

  /// Upper-left block of C: S_ω·M_ω.
  Mat3 gyro_matrix() const { return scale_gyro.asDiagonal() * misalign_gyro; }
  /// Lower-right block of C: S_a·M_a.
  Mat3 accel_matrix() const { return scale_accel.asDiagonal() * misalign_accel; }

  void validate() const {
    if ((scale_gyro.array() <= 0.0).any() || (scale_accel.array() <= 0.0).any()) {
      throw InvalidInput("scale factors must be positive");
    }
    for (int i = 0; i < 3; ++i) {
      if (misalign_gyro(i, i) != 1.0 || misalign_accel(i, i) != 1.0) {
        throw InvalidInput("misalignment matrices must have unit diagonal");
      }
    }
    if (!(sigma_gyro >= 0.0) || !(sigma_accel >= 0.0)) {
      throw InvalidInput("noise magnitudes must be non-negative");
    }
  }
};

/// Noise-injection protocol applied on top of an ErrorModel.
struct CorruptionSpec {
  double gyro_noise_std = 0.0;                     // rad/s
  std::pair<double, double> gyro_bias_range{0, 0};  // rad/s
  double accel_noise_std = 0.0;                     // m/s²
  std::pair<double, double> accel_bias_range{0, 0};  // m/s²
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(gyro_noise_std >= 0.0) || !(accel_noise_std >= 0.0)) {
      throw InvalidInput("noise std must be non-negative");
    }
    if (!(gyro_bias_range.first <= gyro_bias_range.second) ||
        !(accel_bias_range.first <= accel_bias_range.second)) {
      throw InvalidInput("bias range low must not exceed high");
    }
  }
};

/// Gyro N(0, 1e-3) + U(0.015, 0.025) rad/s; accel N(0, 1e-2) + U(0.45, 0.55) m/s².
inline CorruptionSpec kitti_lowcost_preset(std::uint64_t seed = 0) {
  CorruptionSpec spec;
  spec.gyro_noise_std = 1e-3;
  spec.gyro_bias_range = {0.015, 0.025};
  spec.accel_noise_std = 1e-2;
  spec.accel_bias_range = {0.45, 0.55};
  spec.rng_seed = seed;
  return spec;
}

struct CorruptedSequence {
  std::vector<ImuSample> samples;
  Vec3 gyro_bias_draw = Vec3::Zero();
  Vec3 accel_bias_draw = Vec3::Zero();
};

/// Forward corruption. The uniform bias is drawn once per sequence and axis,
/// then each sample gets fresh Gaussian noise. Pure in (seq, spec, model).
inline CorruptedSequence corrupt(std::span<const ImuSample> seq, const CorruptionSpec& spec,
                                 const ErrorModel& model = ErrorModel::identity()) {
  spec.validate();
  model.validate();
  CorruptedSequence out;
  CounterRng rng(spec.rng_seed);
  for (int i = 0; i < 3; ++i) {
    out.gyro_bias_draw(i) = rng.uniform(spec.gyro_bias_range.first, spec.gyro_bias_range.second);
  }
  for (int i = 0; i < 3; ++i) {
    out.accel_bias_draw(i) =
        rng.uniform(spec.accel_bias_range.first, spec.accel_bias_range.second);
  }
  const double gyro_std = std::hypot(spec.gyro_noise_std, model.sigma_gyro);
  const double accel_std = std::hypot(spec.accel_noise_std, model.sigma_accel);
  const Mat3 cg = model.gyro_matrix();
  const Mat3 ca = model.accel_matrix();

  out.samples.reserve(seq.size());
  for (const ImuSample& s : seq) {
    ImuSample o;
    o.t = s.t;
    o.gyro = cg * s.gyro + model.g_sensitivity * s.accel + model.bias_gyro + out.gyro_bias_draw;
    o.accel = ca * s.accel + model.bias_accel + out.accel_bias_draw;
    for (int i = 0; i < 3; ++i) {
      const double n = rng.gaussian();
      if (gyro_std > 0.0) o.gyro(i) += gyro_std * n;
    }
    for (int i = 0; i < 3; ++i) {
      const double n = rng.gaussian();
      if (accel_std > 0.0) o.accel(i) += accel_std * n;
    }
    out.samples.push_back(o);
  }
  return out;
}

/// Diagonal inverse calibration and additive bias applied to raw samples.
struct Correction {
  Vec6 c_inv_diag = Vec6::Ones();
  Vec6 bias = Vec6::Zero();  // gyro rad/s ×3, accel m/s² ×3

  static Correction identity() { return {}; }

  void validate() const {
    if (!c_inv_diag.allFinite() || !bias.allFinite() || (c_inv_diag.array() <= 0.0).any()) {
      throw InvalidInput("correction must have finite terms and positive scales");
    }
  }
};

/// gyro_i ← c_i·gyro_i − bias_i, accel_i ← c_{3+i}·accel_i − bias_{3+i}.
inline ImuSample apply_correction(const ImuSample& raw, const Correction& corr) {
  ImuSample out;
  out.t = raw.t;
  for (int i = 0; i < 3; ++i) {
    out.gyro(i) = corr.c_inv_diag(i) * raw.gyro(i) - corr.bias(i);
    out.accel(i) = corr.c_inv_diag(3 + i) * raw.accel(i) - corr.bias(3 + i);
  }
  return out;
}

/// c_inv_i = 10^(beta_s·y.c_i), bias_i = y.b_i.
inline Correction decode_correction(const NetOutput& y, double beta_s) {
  Correction corr;
  for (int i = 0; i < 6; ++i) {
    corr.c_inv_diag(i) = std::pow(10.0, beta_s * y.c[i]);
    corr.bias(i) = y.b[i];
  }
  return corr;
}

/// Analytic inverse of a diagonal error model (no misalignment, no
/// g-sensitivity) plus the per-sequence bias draws.
inline Correction exact_inverse(const ErrorModel& model, const Vec3& gyro_bias_draw,
                                const Vec3& accel_bias_draw) {
  if (!model.misalign_gyro.isIdentity(0.0) || !model.misalign_accel.isIdentity(0.0) ||
      !model.g_sensitivity.isZero(0.0)) {
    throw InvalidInput("exact inverse requires a diagonal error model");
  }
  Correction corr;
  for (int i = 0; i < 3; ++i) {
    corr.c_inv_diag(i) = 1.0 / model.scale_gyro(i);
    corr.c_inv_diag(3 + i) = 1.0 / model.scale_accel(i);
    corr.bias(i) = (model.bias_gyro(i) + gyro_bias_draw(i)) / model.scale_gyro(i);
    corr.bias(3 + i) = (model.bias_accel(i) + accel_bias_draw(i)) / model.scale_accel(i);
  }
  return corr;
}

}  // namespace snn_inekf
