#pragma once

// End-to-end training: the network sees a raw window, its head is decoded into
// a correction and a pseudo-measurement covariance, the filter is rolled out
// over the window on the tape, and the Huber loss on the resulting pose
// increments is back-propagated through filter and network alike.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "snn_inekf/autodiff.hpp"
#include "snn_inekf/diff_filter.hpp"
#include "snn_inekf/errors.hpp"
#include "snn_inekf/inekf.hpp"
#include "snn_inekf/rng.hpp"
#include "snn_inekf/snn_core.hpp"
#include "snn_inekf/trajectory.hpp"

namespace snn_inekf {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-2;
  double dropout = 0.1;
  int epochs = 1000;
  int batch_size = 8;
  double huber_delta = 4e-4;
  int window_n = 128;
  int stride = 0;  // 0 → window_n / 2
  std::uint64_t seed = 0;
  int restart_period = 1;  // epochs per cosine cycle
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  int effective_stride() const { return stride > 0 ? stride : std::max(1, window_n / 2); }

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidInput("train: lr must be non-negative");
    if (!(weight_decay >= 0.0)) throw InvalidInput("train: weight_decay must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("train: dropout must be in [0, 1)");
    if (epochs < 0) throw InvalidInput("train: epochs must be non-negative");
    if (batch_size < 1) throw InvalidInput("train: batch_size must be at least 1");
    if (!(huber_delta > 0.0)) throw InvalidInput("train: huber_delta must be positive");
    if (window_n < 2) throw InvalidInput("train: window_n must be at least 2");
    if (stride < 0) throw InvalidInput("train: stride must be non-negative");
    if (restart_period < 1) throw InvalidInput("train: restart_period must be at least 1");
    if (checkpoint_every < 0) throw InvalidInput("train: checkpoint_every must be non-negative");
  }
};

/// Ground-truth increments over a window.
struct SupervisionTarget {
  Vec3 dp = Vec3::Zero();  // m
  Vec3 dv = Vec3::Zero();  // m/s
  Vec3 dR = Vec3::Zero();  // rad, log(R_iᵀ R_j)
};

/// ½r² for |r| ≤ δ, δ|r| − ½δ² beyond.
inline double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * a - 0.5 * delta * delta;
}

/// base·½(1 + cos(π·(step mod period)/period)).
inline double lr_schedule(long step, double base_lr, long period) {
  if (period < 1) throw InvalidInput("lr_schedule: period must be at least 1");
  const long s = ((step % period) + period) % period;
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(period)));
}

struct TrainingWindow {
  std::size_t id = 0;
  Matrix input;                    // window_n × 6 raw samples (network input)
  std::vector<ImuSample> samples;  // samples rolled out by the filter
  FilterState init;                // truth state at the first sample
  SupervisionTarget target;
};

inline SupervisionTarget increments(const Trajectory& truth, std::size_t i, std::size_t j) {
  SupervisionTarget t;
  t.dp = truth.positions[j] - truth.positions[i];
  t.dv = truth.velocities[j] - truth.velocities[i];
  t.dR = so3_log(truth.rotations[i].inverse() * truth.rotations[j]);
  return t;
}

inline Matrix window_matrix(std::span<const ImuSample> samples) {
  Matrix m(static_cast<Eigen::Index>(samples.size()), 6);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    m.block(r, 0, 1, 3) = samples[k].gyro.transpose();
    m.block(r, 3, 1, 3) = samples[k].accel.transpose();
  }
  return m;
}

/// Windows [i, i + n) at the given stride, each supervised by the truth
/// increments from sample i to sample i + n − 1. Truth row k must share the
/// timestamp of sample k. `first_id` numbers the windows.
inline std::vector<TrainingWindow> build_windows(std::span<const ImuSample> samples,
                                                 const Trajectory& truth, int window_n, int stride,
                                                 std::size_t first_id = 0) {
  if (window_n < 2 || stride < 1) throw InvalidInput("build_windows: bad window or stride");
  if (truth.size() < samples.size()) {
    throw InvalidInput("build_windows: truth shorter than the IMU stream");
  }
  std::vector<TrainingWindow> out;
  const auto n = static_cast<std::size_t>(window_n);
  for (std::size_t i = 0; i + n <= samples.size(); i += static_cast<std::size_t>(stride)) {
    if (std::abs(truth.times[i] - samples[i].t) > 1e-6) {
      throw InvalidInput("build_windows: truth is not time-aligned with the IMU stream");
    }
    TrainingWindow w;
    w.id = first_id + out.size();
    const auto span = samples.subspan(i, n);
    w.input = window_matrix(span);
    w.samples.assign(span.begin(), span.end());
    w.init.rot = truth.rotations[i];
    w.init.pos = truth.positions[i];
    w.init.vel = truth.velocities[i];
    w.target = increments(truth, i, i + n - 1);
    out.push_back(std::move(w));
  }
  return out;
}

struct LossEval {
  double loss = 0.0;
  Eigen::Matrix<double, 9, 1> residual = Eigen::Matrix<double, 9, 1>::Zero();
  std::vector<Matrix> grads;  // one per tensor (zeros for buffers); empty without grad
  std::vector<NormStats> norm_stats;
  NetOutput output;
};

/// Tape loss for one window; the returned node is 1×1.
inline ad::Var window_loss_taped(ad::Tape& tape, const SnnModel& model,
                                 const std::vector<ad::Var>& w, const TrainingWindow& win,
                                 const FilterConfig& fcfg, double huber_delta,
                                 const ForwardOptions& fopt, ForwardTrace* trace,
                                 ad::Var* head_out = nullptr, ad::Var* residual_out = nullptr) {
  ad::Var y = forward_taped(tape, model, w, win.input, fopt, trace);
  if (head_out) *head_out = y;
  const TapedCorrection corr =
      decode_taped(tape, y, model.beta_s, fcfg.sigma_lat2, fcfg.sigma_up2);
  const TapedState end = taped_rollout(tape, win.samples, win.init, initial_covariance(fcfg), corr,
                                       process_noise(fcfg), fcfg);
  ad::Var dp = ad::add_const(end.pos, -win.init.pos);
  ad::Var dv = ad::add_const(end.vel, -win.init.vel);
  ad::Var rel = ad::matmul_const_left(win.init.rot.matrix().transpose(), end.rot);
  ad::Var dr = ad::so3_log(rel);
  ad::Var resid = ad::vstack(tape, {ad::add_const(dp, -win.target.dp),
                                    ad::add_const(dv, -win.target.dv),
                                    ad::add_const(dr, -win.target.dR)});
  if (residual_out) *residual_out = resid;
  return ad::huber_sum(resid, huber_delta);
}

inline LossEval window_loss(const SnnModel& model, const TrainingWindow& win,
                            const FilterConfig& fcfg, double huber_delta,
                            const ForwardOptions& fopt, bool need_grad) {
  ad::Tape tape(need_grad);
  const auto w = bind_weights(tape, model.weights);
  ForwardTrace trace;
  ad::Var y, resid;
  ad::Var loss = window_loss_taped(tape, model, w, win, fcfg, huber_delta, fopt, &trace, &y, &resid);
  LossEval ev;
  ev.loss = loss.scalar();
  ev.residual = resid.value();
  ev.norm_stats = std::move(trace.norm_stats);
  ev.output = output_from_row(y.value());
  if (need_grad) {
    tape.backward(loss);
    ev.grads.reserve(w.size());
    for (const auto& v : w) ev.grads.push_back(tape.gradient(v));
  }
  return ev;
}

/// Adaptive moments with decoupled weight decay:
/// w ← w − lr·m̂/(√v̂ + ε) − lr·wd·w.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(double beta1, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const std::vector<Matrix>& grads, double lr, double weight_decay) {
    if (grads.size() != params.size()) throw InvalidInput("adamw: gradient count mismatch");
    if (m_.empty()) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        m_.push_back(Matrix::Zero(params[k].value.rows(), params[k].value.cols()));
        v_.push_back(Matrix::Zero(params[k].value.rows(), params[k].value.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!params[k].trainable) continue;
      Matrix& w = params[k].value;
      const Matrix& g = grads[k];
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
      const Matrix m_hat = m_[k] / c1;
      const Matrix v_hat = v_[k] / c2;
      const Matrix update = (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
      w = w - lr * update - lr * weight_decay * w;
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Seeds the normalization statistics from up to `max_windows` evenly spaced
/// training windows.
inline void calibrate_on_windows(SnnModel& model, const std::vector<TrainingWindow>& windows,
                                 std::size_t max_windows = 256) {
  std::vector<Matrix> inputs;
  if (windows.empty()) return;
  const std::size_t n = std::min(windows.size(), max_windows);
  for (std::size_t k = 0; k < n; ++k) inputs.push_back(windows[k * windows.size() / n].input);
  calibrate_norm(model, inputs);
}

struct EpochResult {
  int epoch = 0;
  double loss = 0.0;       // mean window loss
  double lr = 0.0;         // learning rate of the last batch
  double grad_norm = 0.0;  // mean over batches of the batch-gradient L2 norm
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"loss", loss}, {"lr", lr}, {"grad_norm", grad_norm},
            {"wall_ms", wall_ms}};
  }
};

/// Seeded Fisher–Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(seed, 0x5348554646ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

struct Trainer {
  SnnModel* model = nullptr;
  TrainConfig cfg;
  FilterConfig filter;
  AdamW optimizer;
  long global_step = 0;
  SpikeMode mode = SpikeMode::Heaviside;

  /// One pass over shuffled windows. Throws NumericError on a non-finite loss.
  EpochResult train_epoch(const std::vector<TrainingWindow>& windows, int epoch) {
    if (windows.empty()) throw InvalidInput("train_epoch: no windows");
    cfg.validate();
    model->net.dropout = cfg.dropout;
    const auto start = std::chrono::steady_clock::now();
    const auto order = shuffled_order(windows.size(), cfg.seed, epoch);
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const long batches_per_epoch = static_cast<long>((windows.size() + bs - 1) / bs);
    const long period = batches_per_epoch * cfg.restart_period;

    EpochResult res;
    res.epoch = epoch;
    double loss_sum = 0.0;
    double norm_sum = 0.0;
    long n_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      const std::size_t b1 = std::min(order.size(), b0 + bs);
      std::vector<Matrix> grad_sum;
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainingWindow& win = windows[order[k]];
        ForwardOptions fopt;
        fopt.training = true;
        fopt.mode = mode;
        fopt.dropout_seed = cfg.seed;
        fopt.dropout_stream = splitmix64(static_cast<std::uint64_t>(epoch)) ^ win.id;
        LossEval ev = window_loss(*model, win, filter, cfg.huber_delta, fopt, true);
        double gn = 0.0;
        for (const auto& g : ev.grads) gn += g.squaredNorm();
        if (!std::isfinite(ev.loss) || !std::isfinite(gn)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", window " +
                             std::to_string(win.id) + " (loss " + std::to_string(ev.loss) +
                             ", gradient norm " + std::to_string(std::sqrt(gn)) + ")");
        }
        update_bn_running(model->weights, ev.norm_stats);
        batch_loss += ev.loss;
        if (grad_sum.empty()) {
          grad_sum = std::move(ev.grads);
        } else {
          for (std::size_t t = 0; t < grad_sum.size(); ++t) grad_sum[t] += ev.grads[t];
        }
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      double norm2 = 0.0;
      for (auto& g : grad_sum) {
        g *= inv;
        norm2 += g.squaredNorm();
      }
      const double lr = lr_schedule(global_step, cfg.lr, period);
      optimizer.step(model->weights, grad_sum, lr, cfg.weight_decay);
      ++global_step;
      res.lr = lr;
      loss_sum += batch_loss;
      norm_sum += std::sqrt(norm2);
      ++n_batches;
    }
    res.loss = loss_sum / static_cast<double>(windows.size());
    res.grad_norm = norm_sum / static_cast<double>(n_batches);
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                      .count();
    return res;
  }
};

}  // namespace snn_inekf
