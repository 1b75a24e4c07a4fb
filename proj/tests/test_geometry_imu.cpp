#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <Eigen/Geometry>

#include "snn_inekf/datasets.hpp"
#include "snn_inekf/evalmetrics.hpp"
#include "snn_inekf/geom3d.hpp"
#include "snn_inekf/imu_model.hpp"
#include "snn_inekf/inekf.hpp"
#include "snn_inekf/rng.hpp"

using namespace snn_inekf;
namespace fs = std::filesystem;

namespace {

Vec3 random_axis_angle(CounterRng& rng, double max_norm) {
  Vec3 v(rng.gaussian(), rng.gaussian(), rng.gaussian());
  return v.normalized() * rng.uniform(0.0, max_norm);
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("snnekf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// --- geom3d ----------------------------------------------------------------

TEST(Geom3d, ExpMatchesAngleAxis) {
  CounterRng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Vec3 v = random_axis_angle(rng, 3.0);
    const Mat3 expected = Eigen::AngleAxisd(v.norm(), v.normalized()).toRotationMatrix();
    EXPECT_LT((so3_exp(v).matrix() - expected).norm(), 1e-13);
  }
}

TEST(Geom3d, SkewIsCrossProduct) {
  const Vec3 a(0.3, -1.2, 2.0), b(-0.7, 0.1, 0.4);
  EXPECT_LT((skew<double>(a) * b - a.cross(b)).norm(), 1e-15);
  EXPECT_LT((vee<double>(skew<double>(a)) - a).norm(), 1e-15);
}

TEST(Geom3d, TinyAngleUsesSeriesWithoutLoss) {
  const Vec3 v(1e-10, -2e-10, 5e-11);
  const Mat3 r = so3_exp(v).matrix();
  EXPECT_LT((r - (Mat3::Identity() + skew<double>(v))).norm(), 1e-19);
  EXPECT_LT((so3_log(so3_exp(v)) - v).norm(), 1e-20);
}

TEST(Geom3d, LogNearPiRecoversAxis) {
  CounterRng rng(5);
  for (int i = 0; i < 50; ++i) {
    Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    axis.normalize();
    const double angle = std::numbers::pi - rng.uniform(0.0, 2e-4);
    const Rotation r = so3_exp(axis * angle);
    const Vec3 w = so3_log(r);
    EXPECT_NEAR(w.norm(), angle, 1e-7);
    EXPECT_LT((so3_exp(w).matrix() - r.matrix()).norm(), 1e-9);
  }
}

TEST(Geom3d, LeftJacobianMatchesFiniteDifference) {
  // exp(θ + δ) ≈ exp(J_l(θ)δ)·exp(θ).
  CounterRng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vec3 theta = random_axis_angle(rng, 2.5);
    const Mat3 jl = so3_left_jacobian<double>(theta);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      const Vec3 d = Vec3::Unit(k) * h;
      const Vec3 fd = (so3_log(Rotation::from_matrix_unchecked(
                           so3_exp(theta + d).matrix() * so3_exp(theta).matrix().transpose())) -
                       so3_log(Rotation::from_matrix_unchecked(
                           so3_exp(theta - d).matrix() * so3_exp(theta).matrix().transpose()))) /
                      (2 * h);
      EXPECT_LT((fd - jl.col(k)).norm(), 1e-8);
    }
  }
}

TEST(Geom3d, LeftJacobianSeriesBranchIsContinuous) {
  const Vec3 axis = Vec3(1, 2, -1).normalized();
  const Mat3 below = so3_left_jacobian<double>(axis * (kSmallAngleJacobian * 0.999));
  const Mat3 above = so3_left_jacobian<double>(axis * (kSmallAngleJacobian * 1.001));
  EXPECT_LT((below - above).norm(), 1e-6);
}

TEST(Geom3d, FromMatrixRejectsNonRotation) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 1.01;
  EXPECT_THROW(Rotation::from_matrix(m), InvalidInput);
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1.0;
  EXPECT_THROW(Rotation::from_matrix(reflect), InvalidInput);
}

TEST(Geom3d, ProjectAndRenormalizeRestoreOrthonormality) {
  CounterRng rng(8);
  Mat3 m = so3_exp(random_axis_angle(rng, 2.0)).matrix();
  m(0, 1) += 1e-6;
  EXPECT_GT(Rotation::orthonormality_error(m), 1e-9);
  EXPECT_LT(Rotation::project(m).orthonormality_error(), 1e-14);
  Rotation r = Rotation::from_matrix_unchecked(m);
  EXPECT_TRUE(r.renormalize_if_needed(1e-9));
  EXPECT_LT(r.orthonormality_error(), 1e-14);
  EXPECT_FALSE(r.renormalize_if_needed(1e-9));
}

TEST(Geom3d, RpyMatchesEigenComposition) {
  const double roll = 0.1, pitch = -0.3, yaw = 2.0;
  const Mat3 expected = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                         Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                         Eigen::AngleAxisd(roll, Vec3::UnitX()))
                            .toRotationMatrix();
  EXPECT_LT((Rotation::from_rpy(roll, pitch, yaw).matrix() - expected).norm(), 1e-14);
}

TEST(Geom3d, QuaternionRoundTrip) {
  CounterRng rng(21);
  for (int i = 0; i < 50; ++i) {
    const Rotation r = so3_exp(random_axis_angle(rng, 3.0));
    const Eigen::Vector4d q = rotation_to_quaternion(r);
    EXPECT_GE(q(0), 0.0);
    const Eigen::Quaterniond eq(q(0), q(1), q(2), q(3));
    EXPECT_LT((eq.toRotationMatrix() - r.matrix()).norm(), 1e-13);
    EXPECT_LT((quaternion_to_rotation(q(0), q(1), q(2), q(3)).matrix() - r.matrix()).norm(),
              1e-13);
  }
}

TEST(Geom3d, InterpolationEndpointsAndMidpoint) {
  const Rotation a = Rotation::about_z(0.2), b = Rotation::about_z(1.0);
  EXPECT_LT((so3_interpolate(a, b, 0.0).matrix() - a.matrix()).norm(), 1e-14);
  EXPECT_LT((so3_interpolate(a, b, 1.0).matrix() - b.matrix()).norm(), 1e-14);
  EXPECT_LT((so3_interpolate(a, b, 0.5).matrix() - Rotation::about_z(0.6).matrix()).norm(), 1e-14);
}

// --- rng -------------------------------------------------------------------

TEST(CounterRng, SameSeedSameStream) {
  CounterRng a(42, 7), b(42, 7), c(42, 8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.gaussian();
    EXPECT_EQ(x, b.gaussian());
    differs |= x != c.gaussian();
  }
  EXPECT_TRUE(differs);
}

TEST(CounterRng, UniformMoments) {
  CounterRng rng(1);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 3e-3);
  EXPECT_NEAR(sum2 / n - 0.25, 1.0 / 12.0, 3e-3);
}

// --- imu_model -------------------------------------------------------------

TEST(Corruption, ZeroSpecIsIdentity) {
  const auto seq = synthesize({SynthKind::kCircle, 5.0, 100.0, 3.0, 0.2}).samples;
  const auto out = corrupt(seq, CorruptionSpec{});
  ASSERT_EQ(out.samples.size(), seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k) {
    EXPECT_EQ(out.samples[k].t, seq[k].t);
    EXPECT_EQ(out.samples[k].gyro, seq[k].gyro);
    EXPECT_EQ(out.samples[k].accel, seq[k].accel);
  }
}

TEST(Corruption, DeterministicPerSeed) {
  const auto seq = synthesize({SynthKind::kStraight, 2.0}).samples;
  const auto a = corrupt(seq, kitti_lowcost_preset(9));
  const auto b = corrupt(seq, kitti_lowcost_preset(9));
  const auto c = corrupt(seq, kitti_lowcost_preset(10));
  EXPECT_EQ(a.samples.back().gyro, b.samples.back().gyro);
  EXPECT_NE(a.samples.back().gyro, c.samples.back().gyro);
}

TEST(Corruption, ExactInverseRecoversCleanSignal) {
  const auto seq = synthesize({SynthKind::kFigureEight, 10.0, 100.0, 5.0, 0.3}).samples;
  ErrorModel m;
  m.scale_gyro = Vec3(1.02, 0.97, 1.01);
  m.scale_accel = Vec3(0.99, 1.03, 1.0);
  m.bias_gyro = Vec3(0.001, -0.002, 0.003);
  m.bias_accel = Vec3(0.05, 0.0, -0.02);
  CorruptionSpec spec;
  spec.gyro_bias_range = {0.015, 0.025};
  spec.accel_bias_range = {0.45, 0.55};
  spec.rng_seed = 4;
  const auto c = corrupt(seq, spec, m);
  const Correction inv = exact_inverse(m, c.gyro_bias_draw, c.accel_bias_draw);
  for (std::size_t k = 0; k < seq.size(); k += 97) {
    const ImuSample r = apply_correction(c.samples[k], inv);
    EXPECT_LT((r.gyro - seq[k].gyro).norm(), 1e-13);
    EXPECT_LT((r.accel - seq[k].accel).norm(), 1e-12);
  }
}

TEST(Corruption, LowcostMeanOffsetLiesInBiasRange) {
  std::vector<ImuSample> flat(100000);
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k].t = 0.01 * static_cast<double>(k);
  const auto out = corrupt(flat, kitti_lowcost_preset(21));
  const double slack = 3.0 * 1e-3 / std::sqrt(static_cast<double>(flat.size()));
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0;
    for (const auto& s : out.samples) mean += s.gyro(i);
    mean /= static_cast<double>(flat.size());
    EXPECT_GE(mean, 0.015 - slack) << "axis " << i;
    EXPECT_LE(mean, 0.025 + slack) << "axis " << i;
    EXPECT_NEAR(mean, out.gyro_bias_draw(i), slack) << "axis " << i;
  }
}

TEST(Corruption, EmptySequenceGivesEmptyOutput) {
  EXPECT_TRUE(corrupt(std::vector<ImuSample>{}, kitti_lowcost_preset(1)).samples.empty());
}

TEST(Corruption, ExactInverseRejectsMisalignment) {
  ErrorModel m;
  m.misalign_gyro(0, 1) = 0.01;
  EXPECT_THROW(exact_inverse(m, Vec3::Zero(), Vec3::Zero()), InvalidInput);
}

TEST(Corruption, RejectsInvertedBiasRange) {
  CorruptionSpec spec;
  spec.gyro_bias_range = {0.2, 0.1};
  const std::vector<ImuSample> one{{0.0, Vec3::Zero(), Vec3::Zero()}};
  EXPECT_THROW(corrupt(one, spec), InvalidInput);
}

TEST(Correction, DecodeIsPowerOfTen) {
  NetOutput y;
  y.c = {1, -1, 0.5, 0, 0.25, -0.5};
  y.b = {1, 2, 3, 4, 5, 6};
  const Correction c = decode_correction(y, 0.1);
  EXPECT_DOUBLE_EQ(c.c_inv_diag(0), std::pow(10.0, 0.1));
  EXPECT_DOUBLE_EQ(c.c_inv_diag(1), std::pow(10.0, -0.1));
  EXPECT_EQ(c.bias(5), 6.0);
}

TEST(Correction, IdentityLeavesSampleUnchanged) {
  const ImuSample s{1.5, Vec3(0.1, 0.2, 0.3), Vec3(1, 2, 3)};
  const ImuSample r = apply_correction(s, Correction::identity());
  EXPECT_EQ(r.gyro, s.gyro);
  EXPECT_EQ(r.accel, s.accel);
  EXPECT_EQ(r.t, s.t);
}

// --- datasets --------------------------------------------------------------

TEST(Synth, StraightLineReachesDistance) {
  SynthSpec spec;
  spec.speed = 1.0;
  spec.duration = 10.0;
  const auto seq = synthesize(spec);
  EXPECT_EQ(seq.samples.size(), 1000u);
  EXPECT_EQ(seq.truth.size(), 1001u);
  EXPECT_NEAR(seq.truth.positions.back().x(), 10.0, 1e-9);
  EXPECT_NEAR(seq.truth.times.back(), 10.0, 1e-12);
}

TEST(Synth, CircleRowCount) {
  const auto seq = synthesize({SynthKind::kCircle, 60.0, 100.0, 5.0, 0.1});
  EXPECT_EQ(seq.samples.size(), 6000u);
}

TEST(Synth, OpenLoopIntegrationReproducesTruth) {
  for (SynthKind kind : {SynthKind::kCircle, SynthKind::kFigureEight}) {
    SynthSpec spec{kind, 30.0, 100.0, 8.0, 0.15};
    spec.lateral_slip_std = 0.1;
    spec.seed = 2;
    const auto seq = synthesize(spec);
    FilterState init;
    init.rot = seq.truth.rotations[0];
    init.vel = seq.truth.velocities[0];
    init.pos = seq.truth.positions[0];
    const Trajectory est = integrate_open_loop(seq.samples, init, spec.gravity);
    ASSERT_EQ(est.size(), seq.truth.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < est.size(); ++k) {
      worst = std::max(worst, (est.positions[k] - seq.truth.positions[k]).norm());
    }
    EXPECT_LT(worst, 1e-6) << to_string(kind);
  }
}

TEST(Synth, PiecewiseFollowsSegments) {
  SynthSpec spec;
  spec.kind = SynthKind::kPiecewise;
  spec.speed = 2.0;
  spec.segments = {{5.0, 1.0, 0.0}, {5.0, 0.0, 0.0}};
  spec.duration = 10.0;
  const auto seq = synthesize(spec);
  // Explicit Euler over 500 steps of 0.01 s: Σ (2 + 0.01k)·0.01 = 22.475 for
  // the first segment, then 7 m/s for 5 s.
  EXPECT_NEAR(seq.truth.positions.back().x(), 22.475 + 35.0, 1e-9);
  EXPECT_NEAR(seq.truth.velocities.back().x(), 7.0, 1e-9);
}

TEST(Synth, RejectsBadSpec) {
  SynthSpec spec;
  spec.rate = 0.0;
  EXPECT_THROW(synthesize(spec), InvalidInput);
  spec = SynthSpec{};
  spec.kind = SynthKind::kPiecewise;
  EXPECT_THROW(synthesize(spec), InvalidInput);
  EXPECT_THROW(parse_synth_kind("spiral"), InvalidInput);
}

TEST(ImuCsv, RoundTripIsExact) {
  const auto dir = temp_dir("imu_csv");
  const auto seq = corrupt(synthesize({SynthKind::kCircle, 2.0, 100.0, 3.0, 0.2}).samples,
                           kitti_lowcost_preset(1))
                       .samples;
  write_imu_csv((dir / "imu.csv").string(), seq);
  const auto back = read_imu_csv((dir / "imu.csv").string());
  ASSERT_EQ(back.size(), seq.size());
  for (std::size_t k = 0; k < seq.size(); ++k) {
    EXPECT_EQ(back[k].t, seq[k].t);
    EXPECT_EQ(back[k].gyro, seq[k].gyro);
    EXPECT_EQ(back[k].accel, seq[k].accel);
  }
}

TEST(ImuCsv, MalformedLineReportsLocation) {
  const auto dir = temp_dir("imu_bad");
  std::ofstream(dir / "imu.csv") << kImuHeader << "\n0,0,0,0,0,0,9.8\n0.01,0,zz,0,0,0,9.8\n";
  try {
    read_imu_csv((dir / "imu.csv").string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::ofstream(dir / "short.csv") << kImuHeader << "\n0,0,0\n";
  EXPECT_THROW(read_imu_csv((dir / "short.csv").string()), ParseError);
  std::ofstream(dir / "header.csv") << "time,a,b\n";
  EXPECT_THROW(read_imu_csv((dir / "header.csv").string()), ParseError);
}

TEST(TrajectoryCsv, RoundTripPreservesPoses) {
  const auto dir = temp_dir("traj_csv");
  const auto seq = synthesize({SynthKind::kFigureEight, 3.0, 100.0, 4.0, 0.3});
  write_trajectory_csv((dir / "t.csv").string(), seq.truth);
  const Trajectory back = read_trajectory_csv((dir / "t.csv").string());
  ASSERT_EQ(back.size(), seq.truth.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back.positions[k], seq.truth.positions[k]);
    EXPECT_LT((back.rotations[k].matrix() - seq.truth.rotations[k].matrix()).norm(), 1e-15);
  }
}

TEST(Oxts, TimestampParsing) {
  const auto [s, ns] = parse_kitti_timestamp("2011-09-26 13:02:25.964389445", "f", 1);
  EXPECT_EQ(s, 1317042145);
  EXPECT_EQ(ns, 964389445);
  EXPECT_THROW(parse_kitti_timestamp("not a time", "f", 4), ParseError);
}

TEST(Oxts, LineFieldCount) {
  EXPECT_THROW(parse_oxts_line("1 2 3", "x.txt", 1), ParseError);
}

TEST(Oxts, SequenceDirectoryIngestion) {
  const auto dir = temp_dir("oxts");
  fs::create_directories(dir / "oxts" / "data");
  std::ofstream ts(dir / "oxts" / "timestamps.txt");
  for (int i = 0; i < 3; ++i) {
    ts << "2011-09-26 13:02:25." << (100000000 + i * 10000000) << "\n";
    std::ofstream rec(dir / "oxts" / "data" / ("000000000" + std::to_string(i) + ".txt"));
    // lat lon alt roll pitch yaw vn ve vf vl vu ax ay az af al au wx wy wz wf wl wu ...
    rec << std::to_string(49.0 + i * 1e-6) << " 8.4 110 0 0 0.5 1 2 3 0 0 0.1 0.2 9.8 0 0 0 0.01 0.02 0.03"
        << " 0 0 0 0.1 0.1 4 10 4 4 0\n";
  }
  ts.close();
  const SequenceData seq = load_sequence(dir);
  ASSERT_EQ(seq.samples.size(), 3u);
  EXPECT_NEAR(seq.samples[1].t, 0.01, 1e-12);
  EXPECT_EQ(seq.samples[0].gyro, Vec3(0.01, 0.02, 0.03));
  EXPECT_EQ(seq.samples[0].accel, Vec3(0.1, 0.2, 9.8));
  EXPECT_NEAR(seq.truth.positions[2].y(), kEarthRadius * 2e-6 * std::numbers::pi / 180.0, 1e-6);
  EXPECT_EQ(seq.truth.velocities[0].x(), 2.0);  // east
  EXPECT_EQ(seq.truth.velocities[0].y(), 1.0);  // north

  fs::remove(dir / "oxts" / "data" / "0000000002.txt");
  EXPECT_THROW(load_sequence(dir), StructuralError);
}

TEST(Datasets, MissingSequenceIsStructural) {
  EXPECT_THROW(load_sequence(temp_dir("empty_seq")), StructuralError);
}

TEST(Datasets, SliceKeepsTruthAligned) {
  const auto seq = synthesize({SynthKind::kCircle, 10.0, 100.0, 3.0, 0.2});
  const auto part = slice_sequence(seq, 2.0, 5.0);
  ASSERT_EQ(part.samples.size(), 300u);
  ASSERT_EQ(part.truth.size(), 301u);
  EXPECT_NEAR(part.samples.front().t, 2.0, 1e-9);
  EXPECT_NEAR(part.truth.times.back(), 5.0, 1e-9);
  const auto tail = slice_sequence(seq, 9.0, std::nullopt);
  EXPECT_EQ(tail.samples.size(), 100u);
  EXPECT_EQ(tail.truth.size(), 101u);
}

TEST(Datasets, ResampleInterpolates) {
  Trajectory t;
  t.push_back(0.0, Rotation::identity(), Vec3::Zero(), Vec3::Zero());
  t.push_back(1.0, Rotation::about_z(1.0), Vec3(2, 0, 0), Vec3(4, 0, 0));
  const std::vector<double> at{0.25};
  const Trajectory r = resample_truth(t, at);
  EXPECT_NEAR(r.positions[0].x(), 0.5, 1e-15);
  EXPECT_NEAR(r.velocities[0].x(), 1.0, 1e-15);
  EXPECT_NEAR(rotation_angle(r.rotations[0]), 0.25, 1e-14);
  const std::vector<double> outside{2.0};
  EXPECT_THROW(resample_truth(t, outside), InvalidInput);
}

TEST(Split, ManifestRoundTrip) {
  const auto& drives = kitti_protocol_drives();
  ASSERT_EQ(drives.size(), 14u);
  const std::vector<std::string> train(drives.begin() + 5, drives.end());
  const std::vector<std::string> test(drives.begin(), drives.begin() + 5);
  const SplitManifest m = make_protocol_split(train, test, 100.0);
  EXPECT_EQ(m.train.size(), 9u);
  EXPECT_EQ(m.val.size(), 9u);
  EXPECT_EQ(*m.train[0].t_end, 100.0);
  EXPECT_EQ(m.val[0].t_start, 100.0);
  EXPECT_FALSE(m.val[0].t_end.has_value());
  const SplitManifest back = split_from_json(to_json(m));
  EXPECT_EQ(to_json(back), to_json(m));
}

// --- evalmetrics -----------------------------------------------------------

namespace {

Trajectory line_trajectory(double length, double step, double scale = 1.0) {
  Trajectory t;
  for (int k = 0; k * step <= length + 1e-9; ++k) {
    t.push_back(k * 0.1, Rotation::identity(), Vec3(scale * k * step, 0, 0), Vec3::Zero());
  }
  return t;
}

}  // namespace

TEST(Metrics, IdenticalTrajectoriesGiveZero) {
  const auto seq = synthesize({SynthKind::kCircle, 120.0, 10.0, 10.0, 0.05});
  const MetricReport rep = evaluate(seq.truth, seq.truth);
  ASSERT_TRUE(rep.available);
  EXPECT_EQ(rep.rte_percent, 0.0);
  EXPECT_EQ(rep.rre_deg_per_km, 0.0);
}

TEST(Metrics, ScaledLineIsOnePercent) {
  const Trajectory truth = line_trajectory(1000.0, 1.0);
  const Trajectory est = line_trajectory(1000.0, 1.0, 1.01);
  const MetricReport rep = evaluate(est, truth);
  EXPECT_NEAR(rep.rte_percent, 1.0, 1e-6);
  EXPECT_NEAR(rep.rre_deg_per_km, 0.0, 1e-12);
  for (const auto& [len, ls] : rep.per_length) EXPECT_NEAR(ls.rte_percent, 1.0, 1e-6);
}

TEST(Metrics, ShortSequenceUnavailable) {
  const Trajectory t = line_trajectory(50.0, 1.0);
  const MetricReport rep = evaluate(t, t);
  EXPECT_FALSE(rep.available);
  EXPECT_EQ(rep.n_pairs, 0u);
  EXPECT_TRUE(to_json(rep)["rte_percent"].is_null());
}

TEST(Metrics, PairEnumerationPicksFirstReachingIndex) {
  const std::vector<double> cum{0, 40, 99.9, 100, 250};
  EvalOptions opt;
  opt.start_step = 1;
  opt.lengths = {100, 200};
  const auto pairs = enumerate_pairs(cum, opt);
  ASSERT_FALSE(pairs.empty());
  EXPECT_EQ(pairs[0], (SubsequencePair{0, 3, 100}));
  EXPECT_EQ(pairs[1], (SubsequencePair{0, 4, 200}));
  EXPECT_EQ(pairs[2], (SubsequencePair{1, 4, 100}));
}

TEST(Metrics, SizeMismatchRejected) {
  const Trajectory a = line_trajectory(10, 1), b = line_trajectory(20, 1);
  EXPECT_THROW(evaluate(a, b), InvalidInput);
}

TEST(Metrics, AlignByTimeDropsUnmatched) {
  Trajectory a = line_trajectory(10, 1);
  Trajectory b;
  for (std::size_t k = 0; k < a.size(); k += 2) {
    b.push_back(a.times[k], a.rotations[k], a.positions[k], a.velocities[k]);
  }
  const auto [ea, eb] = align_by_time(a, b);
  EXPECT_EQ(ea.size(), b.size());
  EXPECT_EQ(eb.size(), b.size());
}

TEST(Metrics, TableShowsUnavailable) {
  MetricReport rep;
  rep.path_length = 42.0;
  const std::string table = format_table({{"seq0", rep, std::nullopt}});
  EXPECT_NE(table.find("n/a"), std::string::npos);
  EXPECT_NE(table.find("42.0"), std::string::npos);
}
