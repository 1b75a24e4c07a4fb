#pragma once

#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "snn_inekf/csv.hpp"
#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"

namespace snn_inekf {

/// Time-indexed poses (body→world rotation, world position, world velocity).
struct Trajectory {
  std::vector<double> times;
  std::vector<Rotation> rotations;
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }

  void push_back(double t, const Rotation& r, const Vec3& p, const Vec3& v) {
    times.push_back(t);
    rotations.push_back(r);
    positions.push_back(p);
    velocities.push_back(v);
  }

  void reserve(std::size_t n) {
    times.reserve(n);
    rotations.reserve(n);
    positions.reserve(n);
    velocities.reserve(n);
  }

  /// Equal lengths and strictly increasing times.
  void validate() const {
    const std::size_t n = times.size();
    if (rotations.size() != n || positions.size() != n || velocities.size() != n) {
      throw InvalidInput("trajectory fields have unequal lengths");
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (!(times[i] > times[i - 1])) throw InvalidInput("trajectory times must increase");
    }
  }

  /// Rows [first, last).
  Trajectory slice(std::size_t first, std::size_t last) const {
    Trajectory out;
    for (std::size_t i = first; i < last && i < size(); ++i) {
      out.push_back(times[i], rotations[i], positions[i], velocities[i]);
    }
    return out;
  }
};

inline constexpr const char* kTrajectoryHeader = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz";

/// Hamilton quaternion, w first, w ≥ 0.
inline Eigen::Vector4d rotation_to_quaternion(const Rotation& r) {
  Eigen::Quaterniond q(r.matrix());
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {q.w(), q.x(), q.y(), q.z()};
}

inline Rotation quaternion_to_rotation(double w, double x, double y, double z) {
  Eigen::Quaterniond q(w, x, y, z);
  if (q.norm() < 1e-12) throw InvalidInput("zero quaternion");
  q.normalize();
  return Rotation::project(q.toRotationMatrix());
}

inline std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = std::string(kTrajectoryHeader) + "\n";
  using csv::format_double;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Eigen::Vector4d q = rotation_to_quaternion(traj.rotations[i]);
    const Vec3& p = traj.positions[i];
    const Vec3& v = traj.velocities[i];
    out += format_double(traj.times[i]);
    for (double x : {p(0), p(1), p(2), q(0), q(1), q(2), q(3), v(0), v(1), v(2)}) {
      out += ',';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  csv::write_text(path, trajectory_to_csv(traj));
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  const auto rows = csv::read_table(path, kTrajectoryHeader);
  Trajectory traj;
  traj.reserve(rows.size());
  for (const auto& r : rows) {
    traj.push_back(r[0], quaternion_to_rotation(r[4], r[5], r[6], r[7]), Vec3(r[1], r[2], r[3]),
                   Vec3(r[8], r[9], r[10]));
  }
  traj.validate();
  return traj;
}

}  // namespace snn_inekf
