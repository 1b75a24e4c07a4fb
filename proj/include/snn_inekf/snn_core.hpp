#pragma once

// Spiking network mapping a window of raw IMU samples to the 14-dim head.
//
// Activations are stored as stacked segments: a tensor with ts segments of m
// rows each is a (ts·m)×n matrix whose rows [t·m, (t+1)·m) hold segment t.
//
// Pipeline:
//   window N×6 → depthwise conv (time) → BN → repeat ×ts → LIF
//   → per-channel tokens (ts·6)×N → Linear N→D → BN → LIF
//   → n_blocks × [SSA + feed-forward, residuals re-spiked through LIF]
//   → mean over segments → flatten → Linear 6D→14 → tanh on c and r.
//
// Every BN normalizes with running statistics, in training as well as at
// inference; the statistics are seeded by calibrate_norm() and tracked by
// update_bn_running(). Per-window statistics would erase the mean level of
// each IMU channel, which is exactly where the sensor bias lives.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "snn_inekf/autodiff.hpp"
#include "snn_inekf/errors.hpp"
#include "snn_inekf/net_output.hpp"
#include "snn_inekf/rng.hpp"

namespace snn_inekf {

using ad::Matrix;

struct LifParams {
  double beta = 0.9;
  double u_thr = 1.0;
  double v_reset = 0.0;
  double alpha = 2.0;
  int ts = 4;

  void validate() const {
    if (!(beta > 0.0 && beta <= 1.0)) throw InvalidInput("lif: beta must be in (0, 1]");
    if (!(u_thr > v_reset)) throw InvalidInput("lif: u_thr must exceed v_reset");
    if (!(alpha > 0.0)) throw InvalidInput("lif: alpha must be positive");
    if (ts < 1) throw InvalidInput("lif: ts must be at least 1");
  }
};

/// Heaviside: hard threshold forward, arctan surrogate backward.
/// Smooth: arctan approximation in both passes (used for finite-difference checks).
enum class SpikeMode { Heaviside, Smooth };

struct LifStep {
  double u = 0.0;
  double s = 0.0;
  double h = 0.0;
};

/// U = H_prev + I; S = 1[U ≥ u_thr]; H = v_reset·S + (1 − S)·β·U.
inline LifStep lif_step(double h_prev, double input, const LifParams& p) {
  LifStep r;
  r.u = h_prev + input;
  r.s = r.u >= p.u_thr ? 1.0 : 0.0;
  r.h = p.v_reset * r.s + (1.0 - r.s) * p.beta * r.u;
  return r;
}

struct Surrogate {
  double s_approx = 0.0;
  double ds_du = 0.0;
};

/// S ≈ atan((π/2)·α·x)/π + 1/2 with x = u − u_thr, and its derivative.
inline Surrogate surrogate(double u, const LifParams& p) {
  const double k = 0.5 * std::numbers::pi * p.alpha * (u - p.u_thr);
  return {std::atan(k) / std::numbers::pi + 0.5, 0.5 * p.alpha / (1.0 + k * k)};
}

struct NetConfig {
  int window_n = 128;
  int d_model = 32;
  int n_heads = 4;
  int n_blocks = 2;
  int ts = 4;
  double dropout = 0.1;
  int channels = 6;
  int conv_kernel = 5;

  static NetConfig paper_scale() {
    NetConfig c;
    c.window_n = 500;
    c.d_model = 256;
    return c;
  }

  void validate() const {
    if (window_n < 1) throw InvalidInput("net: window_n must be at least 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      throw InvalidInput("net: d_model must be a positive multiple of n_heads");
    }
    if (n_blocks < 1) throw InvalidInput("net: n_blocks must be at least 1");
    if (ts < 1) throw InvalidInput("net: ts must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("net: dropout must be in [0, 1)");
    if (channels != 6) throw InvalidInput("net: channels is fixed at 6");
    if (conv_kernel < 1 || conv_kernel % 2 == 0) {
      throw InvalidInput("net: conv_kernel must be a positive odd number");
    }
  }
};

/// Named tensors in a fixed order. Buffers (trainable = false) are updated by
/// the forward pass in training mode, never by the optimizer.
struct Tensor {
  std::string name;
  Matrix value;
  bool trainable = true;
};

class ParamStore {
 public:
  void add(std::string name, Matrix value, bool trainable = true) {
    if (index_.count(name) != 0) throw InvalidInput("duplicate tensor " + name);
    index_[name] = tensors_.size();
    tensors_.push_back({std::move(name), std::move(value), trainable});
  }

  std::size_t size() const { return tensors_.size(); }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown tensor " + name);
    return it->second;
  }
  const Matrix& get(const std::string& name) const { return tensors_[index_of(name)].value; }
  Matrix& get(const std::string& name) { return tensors_[index_of(name)].value; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
      if (t.trainable) n += static_cast<std::size_t>(t.value.size());
    }
    return n;
  }

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

struct SnnModel {
  NetConfig net;
  LifParams lif;
  double beta_s = 0.1;  // calibration exponent scale, c_inv = 10^(beta_s·y_c)
  ParamStore weights;

  void validate() const {
    net.validate();
    lif.validate();
    if (lif.ts != net.ts) throw InvalidInput("lif.ts must equal net.ts");
    if (!(beta_s > 0.0)) throw InvalidInput("beta_s must be positive");
  }
};

// Raw IMU windows vary by 1e-4 or less on some channels, so the usual 1e-5
// would swamp the variance it is meant to guard.
inline constexpr double kBatchNormEps = 1e-10;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kInitStd = 0.02;
inline constexpr int kOutputDim = 14;

inline std::string block_prefix(int b) { return "blocks." + std::to_string(b) + "."; }

/// Normalization layers in forward order.
inline std::vector<std::string> bn_layers(const NetConfig& net) {
  std::vector<std::string> names = {"enc.bn", "embed.bn"};
  for (int b = 0; b < net.n_blocks; ++b) {
    for (const char* lin : {"q", "k", "v", "o", "ff1", "ff2"}) {
      names.push_back(block_prefix(b) + lin + ".bn");
    }
  }
  return names;
}

/// Fresh weights: truncated-normal (±2σ, σ = 0.02) for conv and linear weights,
/// zero biases, unit BN scale, zero head so the first output is exactly zero.
inline SnnModel init_model(const NetConfig& net, const LifParams& lif, std::uint64_t seed,
                           double beta_s = 0.1) {
  SnnModel m;
  m.net = net;
  m.lif = lif;
  m.beta_s = beta_s;
  m.validate();
  CounterRng rng(seed, 1);
  auto normal = [&rng](Eigen::Index r, Eigen::Index c) {
    Matrix w(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) w(i, j) = rng.truncated_gaussian(kInitStd);
    }
    return w;
  };
  const int ch = net.channels;
  const int n = net.window_n;
  const int d = net.d_model;
  auto add_bn = [&](const std::string& prefix, int width) {
    m.weights.add(prefix + ".gamma", Matrix::Ones(1, width));
    m.weights.add(prefix + ".beta", Matrix::Zero(1, width));
    m.weights.add(prefix + ".running_mean", Matrix::Zero(1, width), false);
    m.weights.add(prefix + ".running_var", Matrix::Ones(1, width), false);
  };
  auto& w = m.weights;
  w.add("enc.conv.w", normal(ch, net.conv_kernel));
  w.add("enc.conv.b", Matrix::Zero(1, ch));
  add_bn("enc.bn", ch);
  w.add("embed.w", normal(n, d));
  w.add("embed.b", Matrix::Zero(1, d));
  add_bn("embed.bn", d);
  for (int b = 0; b < net.n_blocks; ++b) {
    const std::string p = block_prefix(b);
    for (const char* lin : {"q", "k", "v", "o", "ff1", "ff2"}) {
      w.add(p + lin + ".w", normal(d, d));
      w.add(p + lin + ".b", Matrix::Zero(1, d));
      add_bn(p + lin + ".bn", d);
    }
  }
  w.add("head.w", Matrix::Zero(ch * d, kOutputDim));
  w.add("head.b", Matrix::Zero(1, kOutputDim));
  return m;
}

// ---------------------------------------------------------------------------
// Network operations on the tape

namespace nn {

using ad::Tape;
using ad::Var;

/// LIF over ts stacked segments, membrane starting at v_reset. The backward
/// pass unrolls the recurrence (BPTT across segments).
inline Var lif(const Var& input, int ts, const LifParams& p, SpikeMode mode) {
  const Eigen::Index rows = input.rows();
  const Eigen::Index cols = input.cols();
  if (ts < 1 || rows % ts != 0) throw InvalidInput("lif: rows not divisible by ts");
  const Eigen::Index m = rows / ts;
  const Matrix& in = input.value();
  Matrix u_all(rows, cols);
  Matrix s_all(rows, cols);
  Matrix h = Matrix::Constant(m, cols, p.v_reset);
  for (int t = 0; t < ts; ++t) {
    const Matrix u = h + in.middleRows(t * m, m);
    Matrix s(m, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        s(i, j) = mode == SpikeMode::Heaviside ? (u(i, j) >= p.u_thr ? 1.0 : 0.0)
                                               : surrogate(u(i, j), p).s_approx;
      }
    }
    h = p.v_reset * s + ((1.0 - s.array()) * p.beta * u.array()).matrix();
    u_all.middleRows(t * m, m) = u;
    s_all.middleRows(t * m, m) = s;
  }
  Tape& tape = *input.tape();
  const int iid = input.id();
  Matrix out = s_all;
  return tape.record(std::move(out), {input},
                     [iid, u_all, s_all, p, ts, m, cols](Tape& tp, const Matrix& g) {
                       Matrix grad_in(u_all.rows(), cols);
                       Matrix g_h = Matrix::Zero(m, cols);
                       for (int t = ts - 1; t >= 0; --t) {
                         for (Eigen::Index j = 0; j < cols; ++j) {
                           for (Eigen::Index i = 0; i < m; ++i) {
                             const Eigen::Index r = t * m + i;
                             const double u = u_all(r, j);
                             const double s = s_all(r, j);
                             const double ds = surrogate(u, p).ds_du;
                             const double dh_du = (1.0 - s) * p.beta + (p.v_reset - p.beta * u) * ds;
                             const double g_u = g(r, j) * ds + g_h(i, j) * dh_du;
                             grad_in(r, j) = g_u;
                             g_h(i, j) = g_u;
                           }
                         }
                       }
                       tp.accumulate(iid, grad_in);
                     });
}

/// Per-channel 1-D convolution along time with zero "same" padding:
/// y[n, c] = b[c] + Σ_k w[c, k]·x[n + k − K/2, c].
inline Var conv1d_depthwise(const Var& x, const Var& w, const Var& b) {
  const Eigen::Index n = x.rows(), ch = x.cols(), k = w.cols();
  if (w.rows() != ch || b.rows() != 1 || b.cols() != ch) {
    throw InvalidInput("conv1d: weight shape mismatch");
  }
  const Eigen::Index pad = k / 2;
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  Matrix y(n, ch);
  for (Eigen::Index c = 0; c < ch; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = b.value()(0, c);
      for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = i + j - pad;
        if (src >= 0 && src < n) acc += wv(c, j) * xv(src, c);
      }
      y(i, c) = acc;
    }
  }
  Tape& tape = *x.tape();
  const int ix = x.id(), iw = w.id(), ib = b.id();
  return tape.record(std::move(y), {x, w, b}, [ix, iw, ib, n, ch, k, pad](Tape& tp, const Matrix& g) {
    const Matrix& xv2 = tp.value(ix);
    const Matrix& wv2 = tp.value(iw);
    Matrix gx = Matrix::Zero(n, ch);
    Matrix gw = Matrix::Zero(ch, k);
    for (Eigen::Index c = 0; c < ch; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double gi = g(i, c);
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::Index src = i + j - pad;
          if (src < 0 || src >= n) continue;
          gx(src, c) += wv2(c, j) * gi;
          gw(c, j) += xv2(src, c) * gi;
        }
      }
    }
    if (tp.needs_grad(ix)) tp.accumulate(ix, gx);
    if (tp.needs_grad(iw)) tp.accumulate(iw, gw);
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

/// Batch norm with statistics of x itself (training mode). Writes the biased
/// per-column mean and variance to *mean_out / *var_out.
inline Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                            Matrix* mean_out, Matrix* var_out) {
  const Eigen::Index n = x.rows();
  const Matrix& xv = x.value();
  const Eigen::RowVectorXd mean = xv.colwise().mean();
  const Matrix centered = xv.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  const Matrix xhat = centered.array().rowwise() * inv_std.array();
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
             beta.value().row(0).array();
  Tape& tape = *x.tape();
  const int ix = x.id(), ig = gamma.id(), ibt = beta.id();
  return tape.record(std::move(y), {x, gamma, beta},
                     [ix, ig, ibt, xhat, inv_std, n](Tape& tp, const Matrix& g) {
                       const Eigen::RowVectorXd gam = tp.value(ig).row(0);
                       if (tp.needs_grad(ig)) tp.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                       if (tp.needs_grad(ibt)) tp.accumulate(ibt, g.colwise().sum());
                       if (!tp.needs_grad(ix)) return;
                       const Matrix gxhat = g.array().rowwise() * gam.array();
                       const Eigen::RowVectorXd sum_g = gxhat.colwise().sum();
                       const Eigen::RowVectorXd sum_gx = gxhat.cwiseProduct(xhat).colwise().sum();
                       const double nn = static_cast<double>(n);
                       Matrix gx = (gxhat * nn).rowwise() - sum_g;
                       gx -= Matrix(xhat.array().rowwise() * sum_gx.array());
                       gx = Matrix(gx.array().rowwise() * (inv_std.array() / nn));
                       tp.accumulate(ix, gx);
                     });
}

/// Batch norm with frozen running statistics (inference mode).
inline Var batch_norm_eval(const Var& x, const Matrix& running_mean, const Matrix& running_var,
                           const Var& gamma, const Var& beta, double eps) {
  Tape& tape = *x.tape();
  const Matrix inv_std = (running_var.array() + eps).rsqrt().matrix();
  Var centered = ad::add_row(x, tape.constant(-running_mean));
  Var xhat = ad::mul_row(centered, tape.constant(inv_std));
  return ad::add_row(ad::mul_row(xhat, gamma), beta);
}

/// (m×n) → (ts·m)×n, the same input fed to every segment.
inline Var repeat_segments(const Var& x, int ts) {
  const Eigen::Index m = x.rows(), n = x.cols();
  Matrix out(ts * m, n);
  for (int t = 0; t < ts; ++t) out.middleRows(t * m, m) = x.value();
  Tape& tape = *x.tape();
  const int ix = x.id();
  return tape.record(std::move(out), {x}, [ix, ts, m, n](Tape& tp, const Matrix& g) {
    Matrix gx = Matrix::Zero(m, n);
    for (int t = 0; t < ts; ++t) gx += g.middleRows(t * m, m);
    tp.accumulate(ix, gx);
  });
}

/// Transposes every segment: (ts·m)×n → (ts·n)×m.
inline Var segment_transpose(const Var& x, int ts) {
  const Eigen::Index rows = x.rows(), n = x.cols();
  if (rows % ts != 0) throw InvalidInput("segment_transpose: rows not divisible by ts");
  const Eigen::Index m = rows / ts;
  Matrix out(ts * n, m);
  for (int t = 0; t < ts; ++t) out.middleRows(t * n, n) = x.value().middleRows(t * m, m).transpose();
  Tape& tape = *x.tape();
  const int ix = x.id();
  return tape.record(std::move(out), {x}, [ix, ts, m, n](Tape& tp, const Matrix& g) {
    Matrix gx(ts * m, n);
    for (int t = 0; t < ts; ++t) gx.middleRows(t * m, m) = g.middleRows(t * n, n).transpose();
    tp.accumulate(ix, gx);
  });
}

/// Mean over segments: (ts·m)×n → m×n.
inline Var mean_segments(const Var& x, int ts) {
  const Eigen::Index rows = x.rows(), n = x.cols();
  if (rows % ts != 0) throw InvalidInput("mean_segments: rows not divisible by ts");
  const Eigen::Index m = rows / ts;
  Matrix out = Matrix::Zero(m, n);
  for (int t = 0; t < ts; ++t) out += x.value().middleRows(t * m, m);
  out /= static_cast<double>(ts);
  Tape& tape = *x.tape();
  const int ix = x.id();
  return tape.record(std::move(out), {x}, [ix, ts, m, n](Tape& tp, const Matrix& g) {
    Matrix gx(ts * m, n);
    for (int t = 0; t < ts; ++t) gx.middleRows(t * m, m) = g / static_cast<double>(ts);
    tp.accumulate(ix, gx);
  });
}

/// Spiking self-attention without softmax, per segment and head:
/// Y = (scale·Q Kᵀ)·V over the m token rows of each segment.
inline Var spiking_attention(const Var& q, const Var& k, const Var& v, int ts, int heads,
                             double scale) {
  const Eigen::Index rows = q.rows(), d = q.cols();
  if (rows % ts != 0 || d % heads != 0) throw InvalidInput("attention: bad shape");
  const Eigen::Index m = rows / ts, dh = d / heads;
  Matrix y(rows, d);
  for (int t = 0; t < ts; ++t) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = q.value().block(t * m, h * dh, m, dh);
      const auto kb = k.value().block(t * m, h * dh, m, dh);
      const auto vb = v.value().block(t * m, h * dh, m, dh);
      const Matrix a = scale * (qb * kb.transpose());
      y.block(t * m, h * dh, m, dh) = a * vb;
    }
  }
  Tape& tape = *q.tape();
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return tape.record(std::move(y), {q, k, v},
                     [iq, ik, iv, ts, heads, m, dh, scale, rows, d](Tape& tp, const Matrix& g) {
                       const Matrix& qv = tp.value(iq);
                       const Matrix& kv = tp.value(ik);
                       const Matrix& vv = tp.value(iv);
                       Matrix gq = Matrix::Zero(rows, d), gk = Matrix::Zero(rows, d),
                              gv = Matrix::Zero(rows, d);
                       for (int t = 0; t < ts; ++t) {
                         for (int h = 0; h < heads; ++h) {
                           const auto qb = qv.block(t * m, h * dh, m, dh);
                           const auto kb = kv.block(t * m, h * dh, m, dh);
                           const auto vb = vv.block(t * m, h * dh, m, dh);
                           const auto gy = g.block(t * m, h * dh, m, dh);
                           const Matrix a = scale * (qb * kb.transpose());
                           const Matrix ga = gy * vb.transpose();
                           gv.block(t * m, h * dh, m, dh) = a.transpose() * gy;
                           gq.block(t * m, h * dh, m, dh) = scale * (ga * kb);
                           gk.block(t * m, h * dh, m, dh) = scale * (ga.transpose() * qb);
                         }
                       }
                       if (tp.needs_grad(iq)) tp.accumulate(iq, gq);
                       if (tp.needs_grad(ik)) tp.accumulate(ik, gk);
                       if (tp.needs_grad(iv)) tp.accumulate(iv, gv);
                     });
}

/// x·W + b with b broadcast over rows.
inline Var linear(const Var& x, const Var& w, const Var& b) {
  return ad::add_row(ad::matmul(x, w), b);
}

/// Inverted dropout with a mask drawn from rng.
inline Var dropout(const Var& x, double rate, CounterRng& rng) {
  if (rate <= 0.0) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
      mask(i, j) = rng.uniform() >= rate ? keep_scale : 0.0;
    }
  }
  return ad::cmul_const(x, mask);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Forward pass

/// Running: every normalization layer uses its running statistics (inference
/// and training). Window: statistics of the current window (diagnostics).
enum class NormMode { Running, Window };

struct ForwardOptions {
  bool training = false;  // enables dropout
  SpikeMode mode = SpikeMode::Heaviside;
  NormMode norm = NormMode::Running;
  std::uint64_t dropout_seed = 0;
  std::uint64_t dropout_stream = 0;
  bool use_dropout = true;  // only consulted in training mode
};

/// Per-window statistics of one normalization layer's input.
struct NormStats {
  std::string layer;
  Matrix mean;  // 1×width
  Matrix var;   // 1×width, biased
};

/// Side outputs of one forward pass.
struct ForwardTrace {
  std::vector<NormStats> norm_stats;  // in forward order
  Matrix encoder_spikes;              // (ts·N)×6
  std::vector<Matrix> spike_layers;   // every LIF output, in order
};

/// One tape variable per tensor (buffers become constants).
inline std::vector<ad::Var> bind_weights(ad::Tape& tape, const ParamStore& w) {
  std::vector<ad::Var> vars;
  vars.reserve(w.size());
  for (const auto& t : w.tensors()) {
    vars.push_back(t.trainable ? tape.parameter(t.value) : tape.constant(t.value));
  }
  return vars;
}

inline void check_window(const SnnModel& model, const Matrix& window) {
  if (window.rows() != model.net.window_n || window.cols() != model.net.channels) {
    throw InvalidInput("window must be " + std::to_string(model.net.window_n) + "x" +
                       std::to_string(model.net.channels));
  }
  if (!window.allFinite()) throw InvalidInput("window has non-finite entries");
}

namespace nn {

/// Normalization layer `layer` applied to x according to opt.norm.
inline Var norm_layer(const Var& x, const SnnModel& model, const std::vector<Var>& w,
                      const std::string& layer, const ForwardOptions& opt, ForwardTrace* trace) {
  const ParamStore& ps = model.weights;
  const Var& gamma = w[ps.index_of(layer + ".gamma")];
  const Var& beta = w[ps.index_of(layer + ".beta")];
  if (trace) {
    const Eigen::RowVectorXd mean = x.value().colwise().mean();
    const Eigen::RowVectorXd var =
        (x.value().rowwise() - mean).array().square().colwise().mean();
    trace->norm_stats.push_back({layer, mean, var});
  }
  if (opt.norm == NormMode::Window) {
    return batch_norm_train(x, gamma, beta, kBatchNormEps, nullptr, nullptr);
  }
  return batch_norm_eval(x, ps.get(layer + ".running_mean"), ps.get(layer + ".running_var"), gamma,
                         beta, kBatchNormEps);
}

}  // namespace nn

/// Encoder only: spikes (ts·N)×6.
inline ad::Var encode_taped(ad::Tape& tape, const SnnModel& model,
                            const std::vector<ad::Var>& w, const Matrix& window,
                            const ForwardOptions& opt, ForwardTrace* trace) {
  check_window(model, window);
  const ParamStore& ps = model.weights;
  ad::Var x = tape.constant(window);
  ad::Var c = nn::conv1d_depthwise(x, w[ps.index_of("enc.conv.w")], w[ps.index_of("enc.conv.b")]);
  ad::Var b = nn::norm_layer(c, model, w, "enc.bn", opt, trace);
  ad::Var s = nn::lif(nn::repeat_segments(b, model.net.ts), model.net.ts, model.lif, opt.mode);
  if (trace) {
    trace->encoder_spikes = s.value();
    trace->spike_layers.push_back(s.value());
  }
  return s;
}

/// Full forward; returns the 1×14 head output.
inline ad::Var forward_taped(ad::Tape& tape, const SnnModel& model,
                             const std::vector<ad::Var>& w, const Matrix& window,
                             const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) {
  model.validate();
  const NetConfig& cfg = model.net;
  const ParamStore& ps = model.weights;
  auto W = [&](const std::string& name) { return w[ps.index_of(name)]; };
  const int ts = cfg.ts;
  CounterRng drop_rng(opt.dropout_seed, opt.dropout_stream);
  const double rate = (opt.training && opt.use_dropout) ? cfg.dropout : 0.0;
  auto spike = [&](const ad::Var& in) {
    ad::Var s = nn::lif(in, ts, model.lif, opt.mode);
    if (trace) trace->spike_layers.push_back(s.value());
    return s;
  };
  // Linear → normalization, the pre-activation of every spiking layer.
  auto linear_bn = [&](const ad::Var& in, const std::string& name) {
    ad::Var z = nn::linear(in, W(name + ".w"), W(name + ".b"));
    return nn::norm_layer(z, model, w, name + ".bn", opt, trace);
  };

  ad::Var s0 = encode_taped(tape, model, w, window, opt, trace);
  // Tokens are channels; each token's features are its encoded time series.
  ad::Var tokens = nn::segment_transpose(s0, ts);
  ad::Var x = spike(nn::dropout(linear_bn(tokens, "embed"), rate, drop_rng));

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model / cfg.n_heads));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = block_prefix(b);
    ad::Var q = spike(linear_bn(x, p + "q"));
    ad::Var k = spike(linear_bn(x, p + "k"));
    ad::Var v = spike(linear_bn(x, p + "v"));
    ad::Var a = spike(nn::spiking_attention(q, k, v, ts, cfg.n_heads, scale));
    ad::Var x1 = spike(ad::add(x, linear_bn(a, p + "o")));
    ad::Var h = spike(nn::dropout(linear_bn(x1, p + "ff1"), rate, drop_rng));
    x = spike(ad::add(x1, linear_bn(h, p + "ff2")));
  }

  ad::Var rate_map = nn::mean_segments(x, ts);  // 6×D spike rates
  ad::Var flat = ad::flatten_row_major(rate_map);
  ad::Var y = nn::linear(flat, W("head.w"), W("head.b"));
  std::vector<bool> bounded(kOutputDim, false);
  for (int i = 0; i < 6; ++i) bounded[i] = true;
  bounded[12] = bounded[13] = true;
  return ad::tanh_masked(y, bounded);
}

inline NetOutput output_from_row(const Matrix& y) {
  return NetOutput::from_vector(Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()));
}

/// Deterministic inference (running statistics, no dropout).
inline NetOutput forward(const SnnModel& model, const Matrix& window) {
  ad::Tape tape(false);
  const auto w = bind_weights(tape, model.weights);
  return output_from_row(forward_taped(tape, model, w, window).value());
}

/// Spike tensor with ts stacked segments of `rows` rows each.
struct SpikeTensor {
  int ts = 0;
  Matrix data;

  Eigen::Index rows() const { return ts > 0 ? data.rows() / ts : 0; }
  Eigen::Index cols() const { return data.cols(); }
  Matrix segment(int t) const { return data.middleRows(t * rows(), rows()); }
  bool is_binary() const {
    return (data.array() == 0.0 || data.array() == 1.0).all();
  }
};

/// Encoder spikes for one window (inference mode).
inline SpikeTensor spike_encode(const SnnModel& model, const Matrix& window) {
  model.validate();
  ad::Tape tape(false);
  const auto w = bind_weights(tape, model.weights);
  SpikeTensor st;
  st.ts = model.net.ts;
  st.data = encode_taped(tape, model, w, window, {}, nullptr).value();
  return st;
}

/// Exponential moving estimate of each layer's input mean and of the spread
/// around the running mean, from one window's statistics.
inline void update_bn_running(ParamStore& w, const std::vector<NormStats>& stats) {
  for (const auto& st : stats) {
    Matrix& rm = w.get(st.layer + ".running_mean");
    Matrix& rv = w.get(st.layer + ".running_var");
    const Matrix spread = st.var + (st.mean - rm).cwiseAbs2();
    rm = (1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * st.mean;
    rv = (1.0 - kBatchNormMomentum) * rv + kBatchNormMomentum * spread;
  }
}

/// Sets every normalization layer's running statistics to the pooled
/// statistics of its input over `windows`, layer by layer in forward order so
/// each layer sees already-calibrated predecessors.
inline void calibrate_norm(SnnModel& model, const std::vector<Matrix>& windows) {
  if (windows.empty()) return;
  const auto layers = bn_layers(model.net);
  const double count = static_cast<double>(windows.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<NormStats> per_window;
    per_window.reserve(windows.size());
    for (const Matrix& win : windows) {
      ad::Tape tape(false);
      const auto w = bind_weights(tape, model.weights);
      ForwardTrace trace;
      forward_taped(tape, model, w, win, {}, &trace);
      per_window.push_back(trace.norm_stats.at(l));
    }
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(per_window.front().mean.cols());
    for (const auto& st : per_window) mean += st.mean.row(0);
    mean /= count;
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(mean.size());
    for (const auto& st : per_window) {
      var += st.var.row(0) + (st.mean.row(0) - mean).cwiseAbs2();
    }
    var /= count;
    model.weights.get(layers[l] + ".running_mean") = mean;
    model.weights.get(layers[l] + ".running_var") = var;
  }
}

}  // namespace snn_inekf
