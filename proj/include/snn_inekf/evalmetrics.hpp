#pragma once

// KITTI-style odometry metrics: relative translational error (%) and relative
// rotational error (deg/km) over 100–800 m subsequences of the ground truth.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"
#include "snn_inekf/trajectory.hpp"

namespace snn_inekf {

struct EvalOptions {
  std::size_t start_step = 10;  // start-index subsampling; 1 = every frame
  std::vector<double> lengths = {100, 200, 300, 400, 500, 600, 700, 800};

  static EvalOptions exhaustive() {
    EvalOptions o;
    o.start_step = 1;
    return o;
  }
};

struct LengthStats {
  double rte_percent = 0.0;
  double rre_deg_per_km = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  double rte_percent = 0.0;
  double rre_deg_per_km = 0.0;
  std::map<double, LengthStats> per_length;
  std::size_t n_pairs = 0;
  bool available = false;
  double path_length = 0.0;  // m, total truth path
};

/// Index pair (start, end) whose truth path first reaches `length`.
struct SubsequencePair {
  std::size_t i = 0;
  std::size_t j = 0;
  double length = 0.0;
  bool operator==(const SubsequencePair&) const = default;
};

/// Prefix sums of consecutive position distances; first element 0.
inline std::vector<double> cumulative_lengths(const Trajectory& truth) {
  std::vector<double> d(truth.size(), 0.0);
  for (std::size_t k = 1; k < truth.size(); ++k) {
    d[k] = d[k - 1] + (truth.positions[k] - truth.positions[k - 1]).norm();
  }
  return d;
}

inline std::vector<SubsequencePair> enumerate_pairs(const std::vector<double>& cum,
                                                    const EvalOptions& opt) {
  std::vector<SubsequencePair> pairs;
  const std::size_t step = std::max<std::size_t>(opt.start_step, 1);
  for (std::size_t i = 0; i < cum.size(); i += step) {
    for (double len : opt.lengths) {
      const auto it = std::lower_bound(cum.begin() + static_cast<std::ptrdiff_t>(i), cum.end(),
                                       cum[i] + len);
      if (it == cum.end()) continue;
      pairs.push_back({i, static_cast<std::size_t>(it - cum.begin()), len});
    }
  }
  return pairs;
}

/// Translation and rotation magnitude of (T̂_i⁻¹T̂_j)⁻¹·(T_i⁻¹T_j).
inline std::pair<double, double> relative_pose_error(const Trajectory& est,
                                                     const Trajectory& truth, std::size_t i,
                                                     std::size_t j) {
  const Mat3 rg = truth.rotations[i].matrix().transpose() * truth.rotations[j].matrix();
  const Vec3 tg = truth.rotations[i].matrix().transpose() *
                  (truth.positions[j] - truth.positions[i]);
  const Mat3 re = est.rotations[i].matrix().transpose() * est.rotations[j].matrix();
  const Vec3 te = est.rotations[i].matrix().transpose() * (est.positions[j] - est.positions[i]);
  const Mat3 r_err = re.transpose() * rg;
  const Vec3 t_err = re.transpose() * (tg - te);
  return {t_err.norm(), so3_log_matrix(r_err).norm()};
}

inline MetricReport evaluate(const Trajectory& estimate, const Trajectory& truth,
                             const EvalOptions& opt = {}) {
  if (estimate.size() != truth.size()) {
    throw InvalidInput("evaluate: estimate and truth lengths differ");
  }
  if (truth.size() < 2) throw InvalidInput("evaluate: need at least two poses");
  const std::vector<double> cum = cumulative_lengths(truth);
  MetricReport rep;
  rep.path_length = cum.back();
  const std::vector<SubsequencePair> pairs = enumerate_pairs(cum, opt);
  constexpr double kRadPerMToDegPerKm = 180.0 / std::numbers::pi * 1000.0;
  double t_sum = 0.0;
  double r_sum = 0.0;
  for (const auto& pr : pairs) {
    const auto [t_err, r_err] = relative_pose_error(estimate, truth, pr.i, pr.j);
    t_sum += t_err / pr.length;
    r_sum += r_err / pr.length;
    LengthStats& ls = rep.per_length[pr.length];
    ls.rte_percent += t_err / pr.length;
    ls.rre_deg_per_km += r_err / pr.length;
    ++ls.count;
  }
  rep.n_pairs = pairs.size();
  rep.available = rep.n_pairs > 0;
  if (rep.available) {
    rep.rte_percent = 100.0 * t_sum / static_cast<double>(rep.n_pairs);
    rep.rre_deg_per_km = kRadPerMToDegPerKm * r_sum / static_cast<double>(rep.n_pairs);
  }
  for (auto& [len, ls] : rep.per_length) {
    ls.rte_percent = 100.0 * ls.rte_percent / static_cast<double>(ls.count);
    ls.rre_deg_per_km = kRadPerMToDegPerKm * ls.rre_deg_per_km / static_cast<double>(ls.count);
  }
  return rep;
}

/// Pairs estimate and truth rows with equal timestamps (within tol).
inline std::pair<Trajectory, Trajectory> align_by_time(const Trajectory& est,
                                                       const Trajectory& truth,
                                                       double tol = 1e-6) {
  Trajectory a, b;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    while (j < truth.size() && truth.times[j] < est.times[i] - tol) ++j;
    if (j >= truth.size()) break;
    if (std::abs(truth.times[j] - est.times[i]) <= tol) {
      a.push_back(est.times[i], est.rotations[i], est.positions[i], est.velocities[i]);
      b.push_back(truth.times[j], truth.rotations[j], truth.positions[j], truth.velocities[j]);
      ++j;
    }
  }
  return {a, b};
}

inline nlohmann::json to_json(const MetricReport& rep) {
  nlohmann::json j;
  j["available"] = rep.available;
  j["n_pairs"] = rep.n_pairs;
  j["path_length_m"] = rep.path_length;
  j["rte_percent"] = rep.available ? nlohmann::json(rep.rte_percent) : nlohmann::json(nullptr);
  j["rre_deg_per_km"] =
      rep.available ? nlohmann::json(rep.rre_deg_per_km) : nlohmann::json(nullptr);
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [len, ls] : rep.per_length) {
    per.push_back({{"length_m", len},
                   {"rte_percent", ls.rte_percent},
                   {"rre_deg_per_km", ls.rre_deg_per_km},
                   {"count", ls.count}});
  }
  j["per_length"] = per;
  return j;
}

struct ReportRow {
  std::string seq;
  MetricReport report;
  std::optional<double> seconds;
};

/// Fixed-width table: Seq, Length(m), RTE, RRE, T(s).
inline std::string format_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %10s %8s %8s %8s\n", "Seq", "Length(m)", "RTE", "RRE",
                "T(s)");
  out += buf;
  for (const auto& r : rows) {
    char rte[32], rre[32], ts[32];
    if (r.report.available) {
      std::snprintf(rte, sizeof(rte), "%.1f", r.report.rte_percent);
      std::snprintf(rre, sizeof(rre), "%.1f", r.report.rre_deg_per_km);
    } else {
      std::snprintf(rte, sizeof(rte), "n/a");
      std::snprintf(rre, sizeof(rre), "n/a");
    }
    if (r.seconds) {
      std::snprintf(ts, sizeof(ts), "%.1f", *r.seconds);
    } else {
      std::snprintf(ts, sizeof(ts), "/");
    }
    std::snprintf(buf, sizeof(buf), "%-24s %10.1f %8s %8s %8s\n", r.seq.c_str(),
                  r.report.path_length, rte, rre, ts);
    out += buf;
  }
  return out;
}

}  // namespace snn_inekf
