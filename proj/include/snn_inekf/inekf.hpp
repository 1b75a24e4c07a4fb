#pragma once

// Invariant EKF for IMU dead reckoning with nonholonomic pseudo-measurements.
//
// Error convention: right-invariant on the (R, v, p) block, i.e. the true state
// is X = exp(ξ)·X̂ so that R = exp(φ)R̂, v ≈ exp(φ)v̂ + ν, p ≈ exp(φ)p̂ + ρ.
// Biases and the lever arm p_c are additive; the extrinsic rotation is
// perturbed on the right, R_c = R̂_c·exp(φ_c).
//
// Error-state ordering (21): φ, ν, ρ, δb_ω, δb_a, φ_c, δp_c.

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"
#include "snn_inekf/imu_model.hpp"
#include "snn_inekf/net_output.hpp"
#include "snn_inekf/trajectory.hpp"

namespace snn_inekf {

inline constexpr int kStateDim = 21;

namespace idx {
inline constexpr int kRot = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kBiasGyro = 9;
inline constexpr int kBiasAccel = 12;
inline constexpr int kExtRot = 15;
inline constexpr int kExtPos = 18;
}  // namespace idx

using Mat21 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Vec21 = Eigen::Matrix<double, kStateDim, 1>;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct FilterState {
  Rotation rot;                     // IMU → world
  Vec3 vel = Vec3::Zero();          // world, m/s
  Vec3 pos = Vec3::Zero();          // world, m
  Vec3 bias_gyro = Vec3::Zero();    // rad/s
  Vec3 bias_accel = Vec3::Zero();   // m/s²
  Rotation ext_rot;                 // robot → IMU
  Vec3 ext_pos = Vec3::Zero();      // robot → IMU lever arm, m

  bool all_finite() const {
    return rot.matrix().allFinite() && vel.allFinite() && pos.allFinite() &&
           bias_gyro.allFinite() && bias_accel.allFinite() && ext_rot.matrix().allFinite() &&
           ext_pos.allFinite();
  }
};

using Covariance = Mat21;

/// Diagonal process noise over the error-state slots: gyro noise in the φ slot,
/// accel noise in ν, position noise in ρ, then bias and extrinsic random walks.
struct ProcessNoise {
  Vec21 diag = Vec21::Zero();
};

/// Pseudo-measurement covariance diag(lateral, upward), (m/s)².
struct MeasNoise {
  Vec2 diag = Vec2::Constant(0.01);

  void validate() const {
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) {
      throw InvalidInput("measurement noise must be positive definite");
    }
  }
};

struct FilterConfig {
  // Initial covariance (variances).
  double p0_attitude = 1e-4;
  double p0_velocity = 1e-2;
  double p0_position = 1e-2;
  double p0_bias_gyro = 1e-4;
  double p0_bias_accel = 1e-4;
  double p0_extrinsic = 1e-6;
  // Process noise standard deviations.
  double gyro_noise_std = 1e-2;      // rad/s
  double accel_noise_std = 1e-1;     // m/s²
  double position_noise_std = 0.0;   // m/s
  double gyro_bias_walk_std = 1e-4;  // rad/s², used only when estimating biases
  double accel_bias_walk_std = 1e-3; // m/s³, used only when estimating biases
  double extrinsic_walk_std = 0.0;
  // When false the bias states carry zero covariance and never move.
  bool estimate_imu_bias = false;
  // Pseudo-measurement variances, (m/s)².
  double sigma_lat2 = 0.01;
  double sigma_up2 = 0.01;
  double gap_threshold = 0.05;  // s
  Vec3 gravity = Vec3(0.0, 0.0, 9.80665);
  bool joseph_form = false;
  double max_condition = 1e12;
  double rotation_tolerance = 1e-9;
};

inline Covariance initial_covariance(const FilterConfig& cfg) {
  Vec21 d;
  d.segment<3>(idx::kRot).setConstant(cfg.p0_attitude);
  d.segment<3>(idx::kVel).setConstant(cfg.p0_velocity);
  d.segment<3>(idx::kPos).setConstant(cfg.p0_position);
  d.segment<3>(idx::kBiasGyro).setConstant(cfg.estimate_imu_bias ? cfg.p0_bias_gyro : 0.0);
  d.segment<3>(idx::kBiasAccel).setConstant(cfg.estimate_imu_bias ? cfg.p0_bias_accel : 0.0);
  d.segment<3>(idx::kExtRot).setConstant(cfg.p0_extrinsic);
  d.segment<3>(idx::kExtPos).setConstant(cfg.p0_extrinsic);
  return d.asDiagonal();
}

inline ProcessNoise process_noise(const FilterConfig& cfg) {
  ProcessNoise q;
  auto sq = [](double x) { return x * x; };
  q.diag.segment<3>(idx::kRot).setConstant(sq(cfg.gyro_noise_std));
  q.diag.segment<3>(idx::kVel).setConstant(sq(cfg.accel_noise_std));
  q.diag.segment<3>(idx::kPos).setConstant(sq(cfg.position_noise_std));
  q.diag.segment<3>(idx::kBiasGyro)
      .setConstant(cfg.estimate_imu_bias ? sq(cfg.gyro_bias_walk_std) : 0.0);
  q.diag.segment<3>(idx::kBiasAccel)
      .setConstant(cfg.estimate_imu_bias ? sq(cfg.accel_bias_walk_std) : 0.0);
  q.diag.segment<3>(idx::kExtRot).setConstant(sq(cfg.extrinsic_walk_std));
  q.diag.segment<3>(idx::kExtPos).setConstant(sq(cfg.extrinsic_walk_std));
  return q;
}

/// Euler-step Jacobians of the error state (F) and of the noise slots (G).
struct PropagationJacobians {
  Mat21 f;
  Mat21 g;
};

/// Exact first-order Jacobians of the explicit-Euler step under the
/// right-invariant convention. omega/accel are bias-subtracted inputs and
/// vel_next/pos_next the propagated estimates.
inline PropagationJacobians propagation_jacobians(const Rotation& rot, const Vec3& omega,
                                                  const Vec3& vel_next, const Vec3& pos_next,
                                                  double dt, const Vec3& gravity) {
  const Mat3 rj = rot.matrix() * so3_left_jacobian<double>(omega * dt) * dt;
  const Mat3 rdt = rot.matrix() * dt;
  const Mat3 v_rj = skew<double>(vel_next) * rj;
  const Mat3 p_rj = skew<double>(pos_next) * rj;
  PropagationJacobians j;
  j.f.setIdentity();
  j.f.block<3, 3>(idx::kRot, idx::kBiasGyro) = -rj;
  j.f.block<3, 3>(idx::kVel, idx::kRot) = -skew<double>(gravity) * dt;
  j.f.block<3, 3>(idx::kVel, idx::kBiasGyro) = -v_rj;
  j.f.block<3, 3>(idx::kVel, idx::kBiasAccel) = -rdt;
  j.f.block<3, 3>(idx::kPos, idx::kVel) = Mat3::Identity() * dt;
  j.f.block<3, 3>(idx::kPos, idx::kBiasGyro) = -p_rj;

  j.g.setZero();
  j.g.block<3, 3>(idx::kRot, idx::kRot) = -rj;
  j.g.block<3, 3>(idx::kVel, idx::kRot) = -v_rj;
  j.g.block<3, 3>(idx::kPos, idx::kRot) = -p_rj;
  j.g.block<3, 3>(idx::kVel, idx::kVel) = -rdt;
  j.g.block<3, 3>(idx::kPos, idx::kPos) = Mat3::Identity() * dt;
  for (int k = idx::kBiasGyro; k < kStateDim; ++k) j.g(k, k) = dt;
  return j;
}

inline void symmetrize(Covariance& p) { p = 0.5 * (p + p.transpose()).eval(); }

/// One explicit-Euler step: R' = R·exp((ω−b_ω)dt), v' = v + (R(a−b_a) − g)dt,
/// p' = p + v·dt, P' = F P Fᵀ + G Q Gᵀ.
inline std::pair<FilterState, Covariance> propagate(const FilterState& state,
                                                    const Covariance& cov, const ImuSample& u,
                                                    double dt, const ProcessNoise& q,
                                                    const Vec3& gravity) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidInput("propagate: dt must be positive");
  if (!u.all_finite() || !state.all_finite() || !cov.allFinite()) {
    throw InvalidInput("propagate: non-finite input");
  }
  const Vec3 omega = u.gyro - state.bias_gyro;
  const Vec3 accel = u.accel - state.bias_accel;

  FilterState next = state;
  next.rot = Rotation::from_matrix_unchecked(state.rot.matrix() *
                                             so3_exp_matrix<double>(omega * dt));
  next.vel = state.vel + (state.rot.matrix() * accel - gravity) * dt;
  next.pos = state.pos + state.vel * dt;

  const PropagationJacobians j =
      propagation_jacobians(state.rot, omega, next.vel, next.pos, dt, gravity);
  Covariance p = j.f * cov * j.f.transpose() + j.g * q.diag.asDiagonal() * j.g.transpose();
  symmetrize(p);
  return {next, p};
}

/// Robot-frame velocity (forward, lateral, up): R_cᵀ(Rᵀv + (ω − b_ω) × p_c).
inline Vec3 body_velocity(const FilterState& state, const Vec3& omega_unbiased) {
  return state.ext_rot.matrix().transpose() *
         (state.rot.matrix().transpose() * state.vel + omega_unbiased.cross(state.ext_pos));
}

/// Jacobian of body_velocity with respect to the 21-dim error state.
inline Eigen::Matrix<double, 3, kStateDim> body_velocity_jacobian(const FilterState& state,
                                                                  const Vec3& omega_unbiased) {
  const Mat3 rct = state.ext_rot.matrix().transpose();
  Eigen::Matrix<double, 3, kStateDim> h = Eigen::Matrix<double, 3, kStateDim>::Zero();
  h.block<3, 3>(0, idx::kVel) = rct * state.rot.matrix().transpose();
  h.block<3, 3>(0, idx::kBiasGyro) = rct * skew<double>(state.ext_pos);
  h.block<3, 3>(0, idx::kExtRot) = skew<double>(body_velocity(state, omega_unbiased));
  h.block<3, 3>(0, idx::kExtPos) = rct * skew<double>(omega_unbiased);
  return h;
}

/// Applies an error-state correction δ on the group (X̂ ← exp(δ)·X̂ for the
/// navigation block, additive for the rest).
inline FilterState retract(const FilterState& state, const Vec21& delta) {
  FilterState out = state;
  const Mat3 e = so3_exp_matrix<double>(delta.segment<3>(idx::kRot));
  out.rot = Rotation::from_matrix_unchecked(e * state.rot.matrix());
  out.vel = e * state.vel + delta.segment<3>(idx::kVel);
  out.pos = e * state.pos + delta.segment<3>(idx::kPos);
  out.bias_gyro = state.bias_gyro + delta.segment<3>(idx::kBiasGyro);
  out.bias_accel = state.bias_accel + delta.segment<3>(idx::kBiasAccel);
  out.ext_rot = Rotation::from_matrix_unchecked(
      state.ext_rot.matrix() * so3_exp_matrix<double>(delta.segment<3>(idx::kExtRot)));
  out.ext_pos = state.ext_pos + delta.segment<3>(idx::kExtPos);
  return out;
}

struct UpdateResult {
  FilterState state;
  Covariance cov;
  Vec2 innovation = Vec2::Zero();  // pre-update (v_lat, v_up)
  bool applied = true;
};

/// Zero lateral/vertical velocity pseudo-measurement update.
inline UpdateResult zupt_update(const FilterState& state, const Covariance& cov,
                                const Vec3& omega_unbiased, const MeasNoise& n,
                                bool joseph_form = false, double max_condition = 1e12) {
  n.validate();
  const Vec3 vb = body_velocity(state, omega_unbiased);
  const Eigen::Matrix<double, 2, kStateDim> h =
      body_velocity_jacobian(state, omega_unbiased).bottomRows<2>();

  UpdateResult res{state, cov, vb.tail<2>(), false};
  const Mat2 s = h * cov * h.transpose() + Mat2(n.diag.asDiagonal());
  Eigen::SelfAdjointEigenSolver<Mat2> es(s, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(1);
  if (!(lo > 0.0) || hi / lo > max_condition || !s.allFinite()) return res;

  const Eigen::Matrix<double, kStateDim, 2> k = cov * h.transpose() * s.inverse();
  const Vec21 delta = k * (-res.innovation);
  const Mat21 ikh = Mat21::Identity() - k * h;
  if (joseph_form) {
    res.cov = ikh * cov * ikh.transpose() + k * n.diag.asDiagonal() * k.transpose();
  } else {
    res.cov = ikh * cov;
  }
  symmetrize(res.cov);
  res.state = retract(state, delta);
  res.applied = true;
  return res;
}

/// N_t = diag(σ_lat²·10^{y.r1}, σ_up²·10^{y.r2}).
inline MeasNoise decode_meas_noise(const NetOutput& y, double sigma_lat2, double sigma_up2) {
  if (!(sigma_lat2 > 0.0) || !(sigma_up2 > 0.0)) {
    throw InvalidInput("base pseudo-measurement variances must be positive");
  }
  MeasNoise n;
  n.diag(0) = sigma_lat2 * std::pow(10.0, y.r[0]);
  n.diag(1) = sigma_up2 * std::pow(10.0, y.r[1]);
  return n;
}

/// Per-step value source: either one constant or exactly one value per step.
template <typename T>
class StepProvider {
 public:
  StepProvider() = default;
  static StepProvider constant(T value) {
    StepProvider p;
    p.values_.push_back(std::move(value));
    p.constant_ = true;
    return p;
  }
  static StepProvider per_step(std::vector<T> values) {
    StepProvider p;
    p.values_ = std::move(values);
    p.constant_ = false;
    return p;
  }
  bool covers(std::size_t n) const {
    return constant_ ? !values_.empty() : values_.size() == n;
  }
  const T& at(std::size_t k) const { return constant_ ? values_.front() : values_.at(k); }

 private:
  std::vector<T> values_;
  bool constant_ = false;
};

using NoiseProvider = StepProvider<MeasNoise>;
using CorrectionProvider = StepProvider<Correction>;

struct GapEvent {
  std::size_t index = 0;  // sample whose successor arrived late
  double t = 0.0;
  double gap = 0.0;       // actual interval, s
  double used_dt = 0.0;   // capped interval, s
};

struct RunResult {
  Trajectory trajectory;  // initial pose, then one pose per sample
  std::vector<GapEvent> gaps;
  std::size_t skipped_updates = 0;
  std::size_t renormalizations = 0;
};

using StepObserver =
    std::function<void(std::size_t step, const FilterState& state, const Covariance& cov)>;

/// Intervals between samples; the last sample reuses the previous interval.
inline std::vector<double> sample_intervals(std::span<const ImuSample> samples) {
  std::vector<double> dts(samples.size(), 0.0);
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    dts[k] = samples[k + 1].t - samples[k].t;
    if (!(dts[k] > 0.0)) throw InvalidInput("IMU timestamps must be strictly increasing");
  }
  if (samples.size() >= 2) {
    dts.back() = dts[dts.size() - 2];
  } else if (samples.size() == 1) {
    dts.back() = 0.01;
  }
  return dts;
}

/// correction → propagate → pseudo-measurement update, per sample. Emits the
/// initial pose at t_0 and the pose after each sample at its end time.
inline RunResult run_sequence(std::span<const ImuSample> samples, const FilterState& init,
                              const Covariance& cov0, const ProcessNoise& q,
                              const NoiseProvider& noise_source,
                              const CorrectionProvider& corr_source, const FilterConfig& cfg,
                              const StepObserver& observer = {}) {
  if (samples.empty()) throw InvalidInput("run_sequence: no samples");
  if (!noise_source.covers(samples.size()) || !corr_source.covers(samples.size())) {
    throw InvalidInput("run_sequence: providers do not cover every sample");
  }
  for (const auto& s : samples) {
    if (!s.all_finite()) throw InvalidInput("run_sequence: non-finite sample");
  }
  const std::vector<double> dts = sample_intervals(samples);

  RunResult res;
  res.trajectory.reserve(samples.size() + 1);
  FilterState state = init;
  Covariance cov = cov0;
  double t = samples.front().t;
  res.trajectory.push_back(t, state.rot, state.pos, state.vel);

  for (std::size_t k = 0; k < samples.size(); ++k) {
    double dt = dts[k];
    if (dt > cfg.gap_threshold) {
      res.gaps.push_back({k, samples[k].t, dt, cfg.gap_threshold});
      dt = cfg.gap_threshold;
    }
    const ImuSample u = apply_correction(samples[k], corr_source.at(k));
    std::tie(state, cov) = propagate(state, cov, u, dt, q, cfg.gravity);
    const Vec3 omega = u.gyro - state.bias_gyro;
    UpdateResult up =
        zupt_update(state, cov, omega, noise_source.at(k), cfg.joseph_form, cfg.max_condition);
    if (!up.applied) ++res.skipped_updates;
    state = up.state;
    cov = up.cov;
    if (state.rot.renormalize_if_needed(cfg.rotation_tolerance)) ++res.renormalizations;
    state.ext_rot.renormalize_if_needed(cfg.rotation_tolerance);
    if (!state.all_finite() || !cov.allFinite()) {
      throw NumericError("filter diverged at sample " + std::to_string(k));
    }
    if (observer) observer(k, state, cov);
    t = samples[k].t + dts[k];
    res.trajectory.push_back(t, state.rot, state.pos, state.vel);
  }
  return res;
}

/// Dead reckoning without pseudo-measurements (same Euler recurrence).
inline Trajectory integrate_open_loop(std::span<const ImuSample> samples, const FilterState& init,
                                      const Vec3& gravity,
                                      const Correction& corr = Correction::identity()) {
  const std::vector<double> dts = sample_intervals(samples);
  Trajectory traj;
  FilterState s = init;
  traj.push_back(samples.empty() ? 0.0 : samples.front().t, s.rot, s.pos, s.vel);
  const ProcessNoise q;
  const Covariance zero = Covariance::Zero();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const ImuSample u = apply_correction(samples[k], corr);
    s = propagate(s, zero, u, dts[k], q, gravity).first;
    traj.push_back(samples[k].t + dts[k], s.rot, s.pos, s.vel);
  }
  return traj;
}

}  // namespace snn_inekf
