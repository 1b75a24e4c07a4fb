#pragma once

// Hybrid filtering: the network is evaluated on a grid of sliding windows and
// its decoded outputs drive the filter's per-step correction and
// pseudo-measurement covariance.

#include <span>
#include <vector>

#include "snn_inekf/errors.hpp"
#include "snn_inekf/imu_model.hpp"
#include "snn_inekf/inekf.hpp"
#include "snn_inekf/snn_core.hpp"
#include "snn_inekf/trainer.hpp"

namespace snn_inekf {

struct AdaptiveSchedule {
  std::vector<std::size_t> window_end;  // per step: last sample of the window used
  std::vector<NetOutput> outputs;       // per step
  NoiseProvider noise;
  CorrectionProvider correction;
  std::size_t evaluations = 0;          // network forward passes
};

/// Step k uses the window ending at the latest grid index m ≤ k (m = N − 1 +
/// j·update_every). Steps before the first full window reuse that window.
inline AdaptiveSchedule adaptive_schedule(const SnnModel& model, std::span<const ImuSample> samples,
                                          const FilterConfig& cfg, int update_every) {
  model.validate();
  if (update_every < 1) throw InvalidInput("update_every must be at least 1");
  const auto n = static_cast<std::size_t>(model.net.window_n);
  if (samples.size() < n) {
    throw InvalidInput("sequence has " + std::to_string(samples.size()) +
                       " samples, fewer than the network window " + std::to_string(n));
  }
  AdaptiveSchedule out;
  out.window_end.resize(samples.size());
  out.outputs.resize(samples.size());
  std::vector<MeasNoise> noise(samples.size());
  std::vector<Correction> corr(samples.size());
  const auto step = static_cast<std::size_t>(update_every);

  std::size_t cached_end = static_cast<std::size_t>(-1);
  NetOutput y;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::size_t end = n - 1;
    if (k >= n - 1) end = n - 1 + ((k - (n - 1)) / step) * step;
    if (end != cached_end) {
      y = forward(model, window_matrix(samples.subspan(end + 1 - n, n)));
      if (!y.all_finite()) throw NumericError("network produced a non-finite output");
      cached_end = end;
      ++out.evaluations;
    }
    out.window_end[k] = end;
    out.outputs[k] = y;
    noise[k] = decode_meas_noise(y, cfg.sigma_lat2, cfg.sigma_up2);
    corr[k] = decode_correction(y, model.beta_s);
  }
  out.noise = NoiseProvider::per_step(std::move(noise));
  out.correction = CorrectionProvider::per_step(std::move(corr));
  return out;
}

inline FilterState state_from_truth(const Trajectory& truth, std::size_t k = 0) {
  if (truth.size() <= k) throw InvalidInput("truth has no pose at the requested index");
  FilterState s;
  s.rot = truth.rotations[k];
  s.pos = truth.positions[k];
  s.vel = truth.velocities[k];
  return s;
}

/// Fixed-covariance filter with identity correction.
inline RunResult run_static(std::span<const ImuSample> samples, const FilterState& init,
                            const FilterConfig& cfg, const StepObserver& observer = {}) {
  MeasNoise n;
  n.diag << cfg.sigma_lat2, cfg.sigma_up2;
  return run_sequence(samples, init, initial_covariance(cfg), process_noise(cfg),
                      NoiseProvider::constant(n), CorrectionProvider::constant(Correction::identity()),
                      cfg, observer);
}

inline RunResult run_adaptive(std::span<const ImuSample> samples, const FilterState& init,
                              const FilterConfig& cfg, const SnnModel& model, int update_every,
                              const StepObserver& observer = {}) {
  const AdaptiveSchedule sched = adaptive_schedule(model, samples, cfg, update_every);
  return run_sequence(samples, init, initial_covariance(cfg), process_noise(cfg), sched.noise,
                      sched.correction, cfg, observer);
}

}  // namespace snn_inekf
