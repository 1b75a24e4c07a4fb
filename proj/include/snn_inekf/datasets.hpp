#pragma once

// Data ingestion and synthesis: KITTI raw OXTS parsing, ground-truth
// resampling, the IMU interchange CSV, split manifests and an Euler-consistent
// synthetic trajectory generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "snn_inekf/csv.hpp"
#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"
#include "snn_inekf/imu_model.hpp"
#include "snn_inekf/rng.hpp"
#include "snn_inekf/trajectory.hpp"

namespace snn_inekf {

// ---------------------------------------------------------------------------
// IMU interchange CSV

inline constexpr const char* kImuHeader = "t,wx,wy,wz,ax,ay,az";

inline std::string imu_to_csv(std::span<const ImuSample> samples) {
  std::string out = std::string(kImuHeader) + "\n";
  for (const ImuSample& s : samples) {
    out += csv::format_double(s.t);
    for (double x : {s.gyro(0), s.gyro(1), s.gyro(2), s.accel(0), s.accel(1), s.accel(2)}) {
      out += ',';
      out += csv::format_double(x);
    }
    out += '\n';
  }
  return out;
}

inline void write_imu_csv(const std::string& path, std::span<const ImuSample> samples) {
  csv::write_text(path, imu_to_csv(samples));
}

inline std::vector<ImuSample> read_imu_csv(const std::string& path) {
  const auto rows = csv::read_table(path, kImuHeader);
  std::vector<ImuSample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// KITTI raw OXTS

inline constexpr std::size_t kOxtsFields = 30;
// Spherical Earth for the local tangent-plane projection.
inline constexpr double kEarthRadius = 6378137.0;

struct OxtsRecord {
  double lat = 0.0, lon = 0.0, alt = 0.0;       // deg, deg, m
  double roll = 0.0, pitch = 0.0, yaw = 0.0;    // rad
  double vn = 0.0, ve = 0.0;                    // m/s, world
  double vf = 0.0, vl = 0.0, vu = 0.0;          // m/s, vehicle frame
  Vec3 accel_body = Vec3::Zero();               // ax, ay, az
  Vec3 gyro_body = Vec3::Zero();                // wx, wy, wz
  std::array<double, kOxtsFields> raw{};
};

inline OxtsRecord parse_oxts_line(const std::string& line, const std::string& file,
                                  std::size_t line_no) {
  const auto tokens = csv::split_ws(line);
  if (tokens.size() != kOxtsFields) {
    throw ParseError(file, line_no,
                     "expected 30 fields, got " + std::to_string(tokens.size()));
  }
  OxtsRecord r;
  for (std::size_t i = 0; i < kOxtsFields; ++i) {
    r.raw[i] = csv::parse_double(tokens[i], file, line_no);
  }
  r.lat = r.raw[0];
  r.lon = r.raw[1];
  r.alt = r.raw[2];
  r.roll = r.raw[3];
  r.pitch = r.raw[4];
  r.yaw = r.raw[5];
  r.vn = r.raw[6];
  r.ve = r.raw[7];
  r.vf = r.raw[8];
  r.vl = r.raw[9];
  r.vu = r.raw[10];
  r.accel_body = Vec3(r.raw[11], r.raw[12], r.raw[13]);
  r.gyro_body = Vec3(r.raw[17], r.raw[18], r.raw[19]);
  if (!std::isfinite(r.roll) || !std::isfinite(r.pitch) || !std::isfinite(r.yaw)) {
    throw ParseError(file, line_no, "non-finite attitude");
  }
  return r;
}

/// "YYYY-MM-DD hh:mm:ss.fffffffff" → (whole seconds since epoch, nanoseconds).
inline std::pair<std::int64_t, std::int64_t> parse_kitti_timestamp(const std::string& text,
                                                                   const std::string& file,
                                                                   std::size_t line_no) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  char frac[32] = {0};
  int s = 0;
  const int n = std::sscanf(text.c_str(), "%d-%d-%d %d:%d:%d.%31[0-9]", &y, &mo, &d, &h, &mi, &s,
                            frac);
  if (n < 6) throw ParseError(file, line_no, "bad timestamp '" + text + "'");
  // Days from civil date (proleptic Gregorian).
  const int yy = y - (mo <= 2 ? 1 : 0);
  const int era = (yy >= 0 ? yy : yy - 399) / 400;
  const int yoe = yy - era * 400;
  const int doy = (153 * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const std::int64_t days = static_cast<std::int64_t>(era) * 146097 + doe - 719468;
  std::int64_t nanos = 0;
  if (n == 7) {
    std::string f(frac);
    f.resize(9, '0');
    nanos = std::stoll(f);
  }
  return {days * 86400 + h * 3600 + mi * 60 + s, nanos};
}

/// Local ENU position of (lat, lon, alt) relative to an anchor; east is
/// scaled by cos(anchor latitude).
inline Vec3 geodetic_to_enu(double lat, double lon, double alt, double lat0, double lon0,
                            double alt0) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  return Vec3(kEarthRadius * std::cos(lat0 * kDeg) * (lon - lon0) * kDeg,
              kEarthRadius * (lat - lat0) * kDeg, alt - alt0);
}

struct SequenceData {
  std::vector<ImuSample> samples;
  Trajectory truth;
};

inline std::filesystem::path resolve_oxts_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "oxts" / "timestamps.txt")) return dir / "oxts";
  if (fs::exists(dir / "timestamps.txt")) return dir;
  throw StructuralError("no OXTS timestamps.txt under " + dir.string());
}

/// Reads <dir>/oxts/timestamps.txt and <dir>/oxts/data/*.txt.
inline SequenceData parse_oxts(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path oxts = resolve_oxts_dir(dir);
  const std::string ts_path = (oxts / "timestamps.txt").string();
  std::ifstream ts_in(ts_path);
  if (!ts_in) throw IoError("cannot open " + ts_path);
  std::vector<std::pair<std::int64_t, std::int64_t>> stamps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ts_in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    stamps.push_back(parse_kitti_timestamp(line, ts_path, line_no));
  }

  std::vector<fs::path> files;
  const fs::path data_dir = oxts / "data";
  if (!fs::is_directory(data_dir)) throw StructuralError("missing " + data_dir.string());
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() != stamps.size()) {
    throw StructuralError("timestamp count " + std::to_string(stamps.size()) +
                          " does not match data file count " + std::to_string(files.size()));
  }
  if (files.empty()) throw StructuralError("empty OXTS sequence " + oxts.string());

  std::vector<OxtsRecord> recs;
  recs.reserve(files.size());
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot open " + f.string());
    std::string content;
    std::size_t ln = 0;
    bool found = false;
    while (std::getline(in, content)) {
      ++ln;
      if (csv::split_ws(content).empty()) continue;
      recs.push_back(parse_oxts_line(content, f.string(), ln));
      found = true;
      break;
    }
    if (!found) throw ParseError(f.string(), 1, "empty OXTS record");
  }

  SequenceData out;
  const auto [s0, ns0] = stamps.front();
  const OxtsRecord& anchor = recs.front();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const double t = static_cast<double>(stamps[i].first - s0) +
                     static_cast<double>(stamps[i].second - ns0) * 1e-9;
    const OxtsRecord& r = recs[i];
    out.samples.push_back({t, r.gyro_body, r.accel_body});
    const Rotation rot = Rotation::from_rpy(r.roll, r.pitch, r.yaw);
    const Vec3 pos = geodetic_to_enu(r.lat, r.lon, r.alt, anchor.lat, anchor.lon, anchor.alt);
    const Vec3 v_vehicle_world = rot * Vec3(r.vf, r.vl, r.vu);
    const Vec3 vel(r.ve, r.vn, v_vehicle_world(2));
    out.truth.push_back(t, rot, pos, vel);
  }
  for (std::size_t i = 1; i < out.truth.size(); ++i) {
    if (!(out.truth.times[i] > out.truth.times[i - 1])) {
      throw StructuralError("OXTS timestamps not increasing at frame " + std::to_string(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth resampling

/// Linear interpolation of positions/velocities, geodesic for rotations.
inline Trajectory resample_truth(const Trajectory& truth, std::span<const double> target_times) {
  if (truth.empty()) throw InvalidInput("resample_truth: empty trajectory");
  const double t_lo = truth.times.front();
  const double t_hi = truth.times.back();
  Trajectory out;
  out.reserve(target_times.size());
  for (double t : target_times) {
    if (!(t >= t_lo && t <= t_hi)) {
      throw InvalidInput("resample_truth: target time " + csv::format_double(t) +
                         " outside truth span");
    }
    const auto it = std::lower_bound(truth.times.begin(), truth.times.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - truth.times.begin());
    if (truth.times[j] == t) {
      out.push_back(t, truth.rotations[j], truth.positions[j], truth.velocities[j]);
      continue;
    }
    const std::size_t i = j - 1;
    const double s = (t - truth.times[i]) / (truth.times[j] - truth.times[i]);
    out.push_back(t, so3_interpolate(truth.rotations[i], truth.rotations[j], s),
                  (1.0 - s) * truth.positions[i] + s * truth.positions[j],
                  (1.0 - s) * truth.velocities[i] + s * truth.velocities[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic trajectories

enum class SynthKind { kStraight, kCircle, kFigureEight, kPiecewise };

inline SynthKind parse_synth_kind(const std::string& name) {
  if (name == "straight") return SynthKind::kStraight;
  if (name == "circle") return SynthKind::kCircle;
  if (name == "figure-eight" || name == "figure8") return SynthKind::kFigureEight;
  if (name == "piecewise") return SynthKind::kPiecewise;
  throw InvalidInput("unknown synthetic kind '" + name + "'");
}

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::kStraight: return "straight";
    case SynthKind::kCircle: return "circle";
    case SynthKind::kFigureEight: return "figure-eight";
    case SynthKind::kPiecewise: return "piecewise";
  }
  return "?";
}

/// One piece of a piecewise trajectory: forward acceleration and yaw rate held
/// for `duration` seconds.
struct SynthSegment {
  double duration = 0.0;  // s
  double accel = 0.0;     // m/s²
  double yaw_rate = 0.0;  // rad/s
};

struct SynthSpec {
  SynthKind kind = SynthKind::kStraight;
  double duration = 10.0;  // s
  double rate = 100.0;     // Hz
  double speed = 1.0;      // m/s (initial speed for piecewise)
  double yaw_rate = 0.0;   // rad/s
  std::vector<SynthSegment> segments;
  double lateral_slip_std = 0.0;  // m/s, Gauss–Markov lateral velocity
  double slip_time_constant = 1.0;  // s
  std::uint64_t seed = 0;
  Vec3 gravity = Vec3(0.0, 0.0, 9.80665);

  void validate() const {
    if (!(duration > 0.0) || !(rate > 0.0)) {
      throw InvalidInput("synthetic duration and rate must be positive");
    }
    if (!(lateral_slip_std >= 0.0) || !(slip_time_constant > 0.0)) {
      throw InvalidInput("slip parameters out of range");
    }
    if (kind == SynthKind::kPiecewise && segments.empty()) {
      throw InvalidInput("piecewise trajectory needs at least one segment");
    }
  }
};

/// Heading and forward speed at time t.
inline std::pair<double, double> synth_heading_speed(const SynthSpec& spec, double t) {
  switch (spec.kind) {
    case SynthKind::kStraight:
      return {0.0, spec.speed};
    case SynthKind::kCircle:
      return {spec.yaw_rate * t, spec.speed};
    case SynthKind::kFigureEight: {
      const double half = 0.5 * spec.duration;
      if (t <= half) return {spec.yaw_rate * t, spec.speed};
      return {spec.yaw_rate * half - spec.yaw_rate * (t - half), spec.speed};
    }
    case SynthKind::kPiecewise: {
      double heading = 0.0;
      double speed = spec.speed;
      double t0 = 0.0;
      for (const SynthSegment& seg : spec.segments) {
        const double tau = std::min(t - t0, seg.duration);
        if (tau <= 0.0) break;
        heading += seg.yaw_rate * tau;
        speed += seg.accel * tau;
        t0 += seg.duration;
      }
      return {heading, speed};
    }
  }
  return {0.0, 0.0};
}

/// Ground truth first (n+1 states at t_k = k/rate), then n clean samples chosen
/// so the explicit-Euler recurrence reproduces the truth:
/// ω_k = log(R_kᵀR_{k+1})/dt, a_k = R_kᵀ((v_{k+1} − v_k)/dt + g).
inline SequenceData synthesize(const SynthSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
  if (n == 0) throw InvalidInput("synthetic sequence would be empty");
  const double dt = 1.0 / spec.rate;

  CounterRng rng(spec.seed, 0x51);
  const double rho = std::exp(-dt / spec.slip_time_constant);
  const double innov = spec.lateral_slip_std * std::sqrt(1.0 - rho * rho);
  double slip = 0.0;

  SequenceData out;
  Trajectory& truth = out.truth;
  truth.reserve(n + 1);
  Vec3 pos = Vec3::Zero();
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const auto [heading, speed] = synth_heading_speed(spec, t);
    const Rotation rot = Rotation::about_z(heading);
    if (k > 0 && spec.lateral_slip_std > 0.0) slip = rho * slip + innov * rng.gaussian();
    const Vec3 vel = rot * Vec3(speed, slip, 0.0);
    if (k > 0) pos = pos + truth.velocities.back() * dt;
    truth.push_back(t, rot, pos, vel);
  }
  out.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Mat3& r0 = truth.rotations[k].matrix();
    const Mat3& r1 = truth.rotations[k + 1].matrix();
    const Vec3 omega = so3_log_matrix(r0.transpose() * r1) / dt;
    const Vec3 accel =
        r0.transpose() * ((truth.velocities[k + 1] - truth.velocities[k]) / dt + spec.gravity);
    out.samples.push_back({truth.times[k], omega, accel});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split manifests and sequence loading

struct SplitEntry {
  std::string seq;
  double t_start = 0.0;
  std::optional<double> t_end;  // empty = to the end of the sequence
};

struct SplitManifest {
  std::vector<SplitEntry> train;
  std::vector<SplitEntry> val;
  std::vector<SplitEntry> test;
};

inline nlohmann::json to_json(const SplitManifest& m) {
  auto list = [](const std::vector<SplitEntry>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : v) {
      nlohmann::json j;
      j["seq"] = e.seq;
      j["t_start"] = e.t_start;
      j["t_end"] = e.t_end ? nlohmann::json(*e.t_end) : nlohmann::json(nullptr);
      arr.push_back(j);
    }
    return arr;
  };
  return {{"train", list(m.train)}, {"val", list(m.val)}, {"test", list(m.test)}};
}

inline SplitManifest split_from_json(const nlohmann::json& j) {
  auto list = [&](const char* key) {
    std::vector<SplitEntry> v;
    if (!j.contains(key)) return v;
    if (!j.at(key).is_array()) throw InvalidInput(std::string("manifest '") + key + "' must be a list");
    for (const auto& e : j.at(key)) {
      SplitEntry s;
      s.seq = e.at("seq").get<std::string>();
      s.t_start = e.value("t_start", 0.0);
      if (e.contains("t_end") && !e.at("t_end").is_null()) s.t_end = e.at("t_end").get<double>();
      v.push_back(s);
    }
    return v;
  };
  return {list("train"), list("val"), list("test")};
}

/// Train on [0, train_seconds) of each training sequence, validate on the
/// remainder, test on whole test sequences.
inline SplitManifest make_protocol_split(const std::vector<std::string>& train_seqs,
                                         const std::vector<std::string>& test_seqs,
                                         double train_seconds) {
  SplitManifest m;
  for (const auto& s : train_seqs) {
    m.train.push_back({s, 0.0, train_seconds});
    m.val.push_back({s, train_seconds, std::nullopt});
  }
  for (const auto& s : test_seqs) m.test.push_back({s, 0.0, std::nullopt});
  return m;
}

/// KITTI raw drives used by the low-cost protocol: the first five are test
/// sequences, the remaining nine supply training/validation data.
inline const std::vector<std::string>& kitti_protocol_drives() {
  static const std::vector<std::string> drives = {
      "2011_09_26_drive_0036", "2011_09_26_drive_0101", "2011_09_30_drive_0028",
      "2011_09_30_drive_0034", "2011_10_03_drive_0042", "2011_09_26_drive_0022",
      "2011_09_29_drive_0071", "2011_09_30_drive_0018", "2011_09_30_drive_0020",
      "2011_09_30_drive_0027", "2011_09_30_drive_0033", "2011_10_03_drive_0027",
      "2011_10_03_drive_0034", "2011_10_03_drive_0047"};
  return drives;
}

/// Loads a sequence directory: KITTI OXTS layout, or `imu_file` + truth.csv.
/// Truth is resampled onto sample times when they differ.
inline SequenceData load_sequence(const std::filesystem::path& dir,
                                  const std::string& imu_file = "imu.csv") {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "oxts" / "timestamps.txt")) return parse_oxts(dir);
  const fs::path imu = dir / imu_file;
  const fs::path truth = dir / "truth.csv";
  if (!fs::exists(imu) || !fs::exists(truth)) {
    throw StructuralError("sequence " + dir.string() + " has neither oxts/ nor " + imu_file +
                          " + truth.csv");
  }
  SequenceData out;
  out.samples = read_imu_csv(imu.string());
  out.truth = read_trajectory_csv(truth.string());
  return out;
}

/// Samples with t in [t_start, t_end) and the truth poses at those times plus
/// the pose at the end of the last sample when available.
inline SequenceData slice_sequence(const SequenceData& seq, double t_start,
                                   std::optional<double> t_end) {
  SequenceData out;
  const double hi = t_end.value_or(std::numeric_limits<double>::infinity());
  for (const auto& s : seq.samples) {
    if (s.t >= t_start && s.t < hi) out.samples.push_back(s);
  }
  if (out.samples.empty()) return out;
  std::vector<double> times;
  times.reserve(out.samples.size() + 1);
  for (const auto& s : out.samples) times.push_back(s.t);
  // Truth at the end time of the final sample, when the truth extends that far.
  const std::size_t last = out.samples.size() - 1;
  double t_after = out.samples[last].t;
  const auto it = std::upper_bound(seq.samples.begin(), seq.samples.end(), t_after,
                                   [](double t, const ImuSample& s) { return t < s.t; });
  if (it != seq.samples.end()) {
    t_after = it->t;
  } else if (out.samples.size() >= 2) {
    t_after += out.samples[last].t - out.samples[last - 1].t;
  }
  if (t_after <= seq.truth.times.back() && t_after > out.samples[last].t) times.push_back(t_after);
  const double lo_t = seq.truth.times.front();
  const double hi_t = seq.truth.times.back();
  std::vector<double> inside;
  for (double t : times) {
    if (t >= lo_t && t <= hi_t) inside.push_back(t);
  }
  out.truth = resample_truth(seq.truth, inside);
  return out;
}

}  // namespace snn_inekf
