#pragma once

// The filter recurrence of inekf.hpp replayed on the autodiff tape, so the loss
// on a window's pose increments can be differentiated with respect to the
// correction and pseudo-measurement noise the network emits. Arithmetic is
// kept step-for-step identical to the double-precision filter.

#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "snn_inekf/autodiff.hpp"
#include "snn_inekf/inekf.hpp"

namespace snn_inekf {

using ad::Matrix;

struct TapedState {
  ad::Var rot;       // 3×3
  ad::Var vel;       // 3×1
  ad::Var pos;       // 3×1
  ad::Var bias_gyro;
  ad::Var bias_accel;
  ad::Var ext_rot;   // 3×3
  ad::Var ext_pos;
  ad::Var cov;       // 21×21

  FilterState value() const {
    FilterState s;
    s.rot = Rotation::from_matrix_unchecked(rot.value());
    s.vel = vel.value();
    s.pos = pos.value();
    s.bias_gyro = bias_gyro.value();
    s.bias_accel = bias_accel.value();
    s.ext_rot = Rotation::from_matrix_unchecked(ext_rot.value());
    s.ext_pos = ext_pos.value();
    return s;
  }
};

/// Decoded network head on the tape.
struct TapedCorrection {
  ad::Var c_inv;       // 6×1, 10^(beta_s·y_c)
  ad::Var bias;        // 6×1, y_b
  ad::Var noise_diag;  // 2×1, σ²·10^(y_r)
};

struct RolloutStats {
  std::size_t skipped_updates = 0;
  std::size_t renormalizations = 0;
};

namespace ad {

/// Replaces the value of a with `value` and passes gradients through
/// unchanged (used for re-projection onto SO(3)).
inline Var replace_value(const Var& a, Matrix value) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(std::move(value), {a}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

}  // namespace ad

inline TapedCorrection decode_taped(ad::Tape& tape, const ad::Var& y, double beta_s,
                                    double sigma_lat2, double sigma_up2) {
  (void)tape;
  TapedCorrection c;
  c.c_inv = ad::exp10(ad::transpose(ad::block(y, 0, 0, 1, 6)), beta_s);
  c.bias = ad::transpose(ad::block(y, 0, 6, 1, 6));
  Matrix base(2, 1);
  base << sigma_lat2, sigma_up2;
  c.noise_diag = ad::cmul_const(ad::exp10(ad::transpose(ad::block(y, 0, 12, 1, 2)), 1.0), base);
  return c;
}

/// Constant correction (identity calibration or any fixed value) on the tape.
inline TapedCorrection constant_correction(ad::Tape& tape, const Correction& corr,
                                           const MeasNoise& noise) {
  return {tape.constant(corr.c_inv_diag), tape.constant(corr.bias), tape.constant(noise.diag)};
}

inline TapedState taped_initial_state(ad::Tape& tape, const FilterState& s, const Covariance& p) {
  return {tape.constant(s.rot.matrix()),  tape.constant(s.vel),        tape.constant(s.pos),
          tape.constant(s.bias_gyro),     tape.constant(s.bias_accel), tape.constant(s.ext_rot.matrix()),
          tape.constant(s.ext_pos),       tape.constant(p)};
}

namespace diff_detail {

inline ad::Var rows_of(const ad::Var& v, int r, int n) { return ad::block(v, r, 0, n, 1); }

}  // namespace diff_detail

/// One correction → propagate → update step. Mirrors run_sequence's body.
inline TapedState taped_step(ad::Tape& tape, const TapedState& x, const ImuSample& raw, double dt,
                             const TapedCorrection& corr, const ProcessNoise& q,
                             const FilterConfig& cfg, RolloutStats* stats = nullptr) {
  using namespace ad;
  using diff_detail::rows_of;

  // Correction: u = c ∘ raw − bias.
  Matrix raw6(6, 1);
  raw6 << raw.gyro, raw.accel;
  Var u = sub(cmul_const(corr.c_inv, raw6), corr.bias);
  Var omega = sub(rows_of(u, 0, 3), x.bias_gyro);
  Var accel = sub(rows_of(u, 3, 3), x.bias_accel);

  // Propagation.
  Var omega_dt = scale(omega, dt);
  Var rot_next = matmul(x.rot, so3_exp(omega_dt));
  Var vel_next = add(x.vel, scale(add_const(matmul(x.rot, accel), -cfg.gravity), dt));
  Var pos_next = add(x.pos, scale(x.vel, dt));

  Var rj = scale(matmul(x.rot, so3_left_jacobian(omega_dt)), dt);
  Var rdt = scale(x.rot, dt);
  Var v_rj = matmul(skew(vel_next), rj);
  Var p_rj = matmul(skew(pos_next), rj);

  Matrix f_base = Matrix::Identity(kStateDim, kStateDim);
  f_base.block(idx::kVel, idx::kRot, 3, 3) = -skew<double>(cfg.gravity) * dt;
  f_base.block(idx::kPos, idx::kVel, 3, 3) = Mat3::Identity() * dt;
  Var f = assemble(tape, f_base,
                   {{neg(rj), idx::kRot, idx::kBiasGyro},
                    {neg(v_rj), idx::kVel, idx::kBiasGyro},
                    {neg(rdt), idx::kVel, idx::kBiasAccel},
                    {neg(p_rj), idx::kPos, idx::kBiasGyro}});
  Matrix g_base = Matrix::Zero(kStateDim, kStateDim);
  g_base.block(idx::kPos, idx::kPos, 3, 3) = Mat3::Identity() * dt;
  for (int k = idx::kBiasGyro; k < kStateDim; ++k) g_base(k, k) = dt;
  Var g = assemble(tape, g_base,
                   {{neg(rj), idx::kRot, idx::kRot},
                    {neg(v_rj), idx::kVel, idx::kRot},
                    {neg(p_rj), idx::kPos, idx::kRot},
                    {neg(rdt), idx::kVel, idx::kVel}});
  Var qc = tape.constant(Matrix(q.diag.asDiagonal()));
  Var cov = symmetrize(add(matmul(matmul(f, x.cov), transpose(f)),
                           matmul(matmul(g, qc), transpose(g))));

  TapedState prop = x;
  prop.rot = rot_next;
  prop.vel = vel_next;
  prop.pos = pos_next;
  prop.cov = cov;

  // Pseudo-measurement update on the lateral and upward body velocity.
  Var rct = transpose(x.ext_rot);
  Var vb = matmul(rct, add(matmul(transpose(rot_next), vel_next), matmul(skew(omega), x.ext_pos)));
  Var h_full = assemble(tape, Matrix::Zero(3, kStateDim),
                        {{matmul(rct, transpose(rot_next)), 0, idx::kVel},
                         {matmul(rct, skew(x.ext_pos)), 0, idx::kBiasGyro},
                         {skew(vb), 0, idx::kExtRot},
                         {matmul(rct, skew(omega)), 0, idx::kExtPos}});
  Var h = block(h_full, 1, 0, 2, kStateDim);
  Var innovation = rows_of(vb, 1, 2);

  Var ph_t = matmul(cov, transpose(h));
  Var s = add(matmul(h, ph_t), diag(corr.noise_diag));
  const Mat2 s_val = s.value();
  Eigen::SelfAdjointEigenSolver<Mat2> es(s_val, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(1);
  if (!(lo > 0.0) || hi / lo > cfg.max_condition || !s_val.allFinite()) {
    if (stats) ++stats->skipped_updates;
    return prop;
  }
  Var k = matmul(ph_t, inverse(s));
  Var delta = neg(matmul(k, innovation));
  Var ikh = sub(tape.constant(Matrix::Identity(kStateDim, kStateDim)), matmul(k, h));
  Var cov_up;
  if (cfg.joseph_form) {
    cov_up = add(matmul(matmul(ikh, cov), transpose(ikh)),
                 matmul(matmul(k, diag(corr.noise_diag)), transpose(k)));
  } else {
    cov_up = matmul(ikh, cov);
  }

  TapedState out;
  Var e = so3_exp(rows_of(delta, idx::kRot, 3));
  out.rot = matmul(e, rot_next);
  out.vel = add(matmul(e, vel_next), rows_of(delta, idx::kVel, 3));
  out.pos = add(matmul(e, pos_next), rows_of(delta, idx::kPos, 3));
  out.bias_gyro = add(x.bias_gyro, rows_of(delta, idx::kBiasGyro, 3));
  out.bias_accel = add(x.bias_accel, rows_of(delta, idx::kBiasAccel, 3));
  out.ext_rot = matmul(x.ext_rot, so3_exp(rows_of(delta, idx::kExtRot, 3)));
  out.ext_pos = add(x.ext_pos, rows_of(delta, idx::kExtPos, 3));
  out.cov = symmetrize(cov_up);

  Rotation r = Rotation::from_matrix_unchecked(out.rot.value());
  if (r.renormalize_if_needed(cfg.rotation_tolerance)) {
    out.rot = replace_value(out.rot, r.matrix());
    if (stats) ++stats->renormalizations;
  }
  Rotation rc = Rotation::from_matrix_unchecked(out.ext_rot.value());
  if (rc.renormalize_if_needed(cfg.rotation_tolerance)) {
    out.ext_rot = replace_value(out.ext_rot, rc.matrix());
  }
  return out;
}

/// Runs samples[0 .. n−2] with dt_k = t_{k+1} − t_k (gap-capped), ending at
/// the time of the last sample. All steps share one correction.
inline TapedState taped_rollout(ad::Tape& tape, std::span<const ImuSample> samples,
                                const FilterState& init, const Covariance& cov0,
                                const TapedCorrection& corr, const ProcessNoise& q,
                                const FilterConfig& cfg, RolloutStats* stats = nullptr) {
  if (samples.size() < 2) throw InvalidInput("rollout needs at least two samples");
  TapedState x = taped_initial_state(tape, init, cov0);
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    double dt = samples[k + 1].t - samples[k].t;
    if (!(dt > 0.0)) throw InvalidInput("IMU timestamps must be strictly increasing");
    dt = std::min(dt, cfg.gap_threshold);
    x = taped_step(tape, x, samples[k], dt, corr, q, cfg, stats);
  }
  return x;
}

}  // namespace snn_inekf
