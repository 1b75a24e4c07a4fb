// snnekf: synthesize, corrupt, train, run and evaluate from the command line.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "snn_inekf/checkpoint.hpp"
#include "snn_inekf/datasets.hpp"
#include "snn_inekf/errors.hpp"
#include "snn_inekf/evalmetrics.hpp"
#include "snn_inekf/pipeline.hpp"
#include "snn_inekf/run_config.hpp"
#include "snn_inekf/trainer.hpp"

namespace fs = std::filesystem;
using namespace snn_inekf;
using nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_json(const fs::path& path, const json& j) {
  ensure_dir(path.parent_path());
  csv::write_text(path.string(), j.dump(2) + "\n");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "straight";
  double duration = 10.0;
  double rate = 100.0;
  double speed = 1.0;
  double yaw_rate = 0.0;
  std::vector<std::string> segments;
  double slip_std = 0.0;
  double slip_tau = 1.0;
  std::uint64_t seed = 0;
  std::string out = ".";
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec;
  spec.kind = parse_synth_kind(a.kind);
  spec.duration = a.duration;
  spec.rate = a.rate;
  spec.speed = a.speed;
  spec.yaw_rate = a.yaw_rate;
  spec.lateral_slip_std = a.slip_std;
  spec.slip_time_constant = a.slip_tau;
  spec.seed = a.seed;
  for (const auto& s : a.segments) {
    const auto parts = split_list(s);
    if (parts.size() != 3) throw InvalidInput("--segment expects duration,accel,yaw_rate");
    SynthSegment seg;
    seg.duration = csv::parse_double(parts[0], "--segment", 0);
    seg.accel = csv::parse_double(parts[1], "--segment", 0);
    seg.yaw_rate = csv::parse_double(parts[2], "--segment", 0);
    spec.segments.push_back(seg);
  }
  const SequenceData seq = synthesize(spec);
  const fs::path dir(a.out);
  ensure_dir(dir);
  write_imu_csv((dir / "imu.csv").string(), seq.samples);
  write_trajectory_csv((dir / "truth.csv").string(), seq.truth);
  const double length = cumulative_lengths(seq.truth).back();
  std::printf("synth %s: %zu samples, %zu poses, path %.3f m -> %s\n", to_string(spec.kind).c_str(),
              seq.samples.size(), seq.truth.size(), length, dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct CorruptArgs {
  std::string in;
  std::string out;
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

int cmd_corrupt(const CorruptArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.sets);
  CorruptionSpec spec = cfg.corruption;
  std::string preset = cfg.corruption_preset;
  if (!a.preset.empty()) {
    if (a.preset != "kitti-lowcost" && a.preset != "none") {
      throw InvalidInput("unknown preset " + a.preset);
    }
    preset = a.preset;
    if (preset == "kitti-lowcost") spec = kitti_lowcost_preset(spec.rng_seed);
  }
  if (a.seed) spec.rng_seed = *a.seed;

  const auto samples = read_imu_csv(a.in);
  const CorruptedSequence c = corrupt(samples, spec);
  const fs::path out(a.out);
  ensure_dir(out.parent_path());
  write_imu_csv(out.string(), c.samples);
  json side;
  side["input"] = fs::path(a.in).filename().string();
  side["preset"] = preset;
  side["seed"] = spec.rng_seed;
  side["gyro_noise_std"] = spec.gyro_noise_std;
  side["accel_noise_std"] = spec.accel_noise_std;
  side["gyro_bias_range"] = {spec.gyro_bias_range.first, spec.gyro_bias_range.second};
  side["accel_bias_range"] = {spec.accel_bias_range.first, spec.accel_bias_range.second};
  side["gyro_bias"] = vec_json(c.gyro_bias_draw);
  side["accel_bias"] = vec_json(c.accel_bias_draw);
  write_json(out.string() + ".json", side);
  std::printf("corrupt: %zu samples (preset %s, seed %llu) -> %s\n", c.samples.size(),
              preset.c_str(), static_cast<unsigned long long>(spec.rng_seed), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
};

std::vector<TrainingWindow> windows_for(const std::vector<SplitEntry>& entries,
                                        const RunConfig& cfg, std::size_t first_id) {
  std::vector<TrainingWindow> out;
  for (const auto& e : entries) {
    const SequenceData seq = load_sequence(fs::path(cfg.data_root) / e.seq, cfg.imu_file);
    const SequenceData part = slice_sequence(seq, e.t_start, e.t_end);
    if (part.samples.size() < static_cast<std::size_t>(cfg.net.window_n)) continue;
    auto w = build_windows(part.samples, part.truth, cfg.net.window_n,
                           cfg.train.effective_stride(), first_id + out.size());
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.sets);
  if (cfg.split.empty()) throw InvalidInput("paths.split must name a split manifest");
  const SplitManifest manifest = split_from_json(read_json(cfg.split));
  if (manifest.train.empty()) throw InvalidInput("split manifest has no training entries");

  std::vector<std::string> missing;
  for (const auto* list : {&manifest.train, &manifest.val}) {
    for (const auto& e : *list) {
      const fs::path dir = fs::path(cfg.data_root) / e.seq;
      const bool present = fs::exists(dir / "oxts" / "timestamps.txt") ||
                           (fs::exists(dir / cfg.imu_file) && fs::exists(dir / "truth.csv"));
      if (!present && std::find(missing.begin(), missing.end(), e.seq) == missing.end()) {
        missing.push_back(e.seq);
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw StructuralError("missing sequences under " + cfg.data_root + ": " + list);
  }

  const auto train = windows_for(manifest.train, cfg, 0);
  const auto val = windows_for(manifest.val, cfg, train.size());
  if (train.empty()) throw InvalidInput("training split yields no full windows");

  const fs::path out(cfg.output_dir);
  ensure_dir(out);
  write_json(out / "config.json", to_json(cfg));

  SnnModel model = init_model(cfg.net, cfg.lif, cfg.train.seed, cfg.beta_s);
  calibrate_on_windows(model, train);
  Trainer trainer;
  trainer.model = &model;
  trainer.cfg = cfg.train;
  trainer.filter = cfg.filter;

  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw IoError("cannot write " + (out / "train_log.jsonl").string());
  std::fprintf(stderr, "train: %zu training windows, %zu validation windows, %zu parameters\n",
               train.size(), val.size(), model.weights.parameter_count());
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const EpochResult r = trainer.train_epoch(train, epoch);
    json line = r.to_json();
    if (!val.empty()) {
      ForwardOptions fopt;
      double sum = 0.0;
      for (const auto& w : val) {
        sum += window_loss(model, w, cfg.filter, cfg.train.huber_delta, fopt, false).loss;
      }
      line["val_loss"] = sum / static_cast<double>(val.size());
    }
    log << line.dump() << "\n" << std::flush;
    if (cfg.train.checkpoint_every > 0 && (epoch + 1) % cfg.train.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.bin", epoch + 1);
      save_checkpoint(out / name, model);
    }
  }
  save_checkpoint(out / "model.bin", model);
  std::printf("train: %d epochs -> %s\n", cfg.train.epochs, (out / "model.bin").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string seq;
  std::string imu;
  std::string truth;
  std::string checkpoint;
  std::string out;
  bool force_static = false;
};

int cmd_run(const RunArgs& a) {
  const RunConfig cfg = load_run_config(a.config, a.sets);
  std::vector<ImuSample> samples;
  std::optional<Trajectory> truth;
  if (!a.seq.empty()) {
    SequenceData s = load_sequence(a.seq, cfg.imu_file);
    samples = std::move(s.samples);
    truth = std::move(s.truth);
  } else if (!a.imu.empty()) {
    samples = read_imu_csv(a.imu);
    if (!a.truth.empty()) truth = read_trajectory_csv(a.truth);
  } else {
    throw InvalidInput("run needs --seq or --imu");
  }
  if (samples.empty()) throw InvalidInput("sequence has no samples");

  FilterState init;
  if (truth && truth->size() > 0) {
    const auto it = std::lower_bound(truth->times.begin(), truth->times.end(), samples.front().t - 1e-9);
    if (it == truth->times.end() || std::abs(*it - samples.front().t) > 1e-6) {
      throw InvalidInput("truth has no pose at the first sample time");
    }
    init = state_from_truth(*truth, static_cast<std::size_t>(it - truth->times.begin()));
  }

  std::string ckpt = a.checkpoint.empty() ? cfg.checkpoint : a.checkpoint;
  const bool adaptive = cfg.adaptive && !a.force_static && !ckpt.empty();
  RunResult result;
  std::string mode = "static";
  if (adaptive) {
    SnnModel model = load_checkpoint(ckpt);
    if (to_json(model.net) != to_json(cfg.net) || to_json(model.lif) != to_json(cfg.lif)) {
      throw FormatError("checkpoint " + ckpt + " was trained with net " + to_json(model.net).dump() +
                        " but the configuration specifies " + to_json(cfg.net).dump());
    }
    result = run_adaptive(samples, init, cfg.filter, model, cfg.update_every);
    mode = "adaptive";
  } else {
    result = run_static(samples, init, cfg.filter);
  }

  for (const auto& g : result.gaps) {
    std::fprintf(stderr, "gap: sample %zu at t=%.6f, interval %.6f s, integrated %.6f s\n", g.index,
                 g.t, g.gap, g.used_dt);
  }
  const fs::path out(a.out);
  ensure_dir(out.parent_path());
  write_trajectory_csv(out.string(), result.trajectory);
  json summary;
  summary["mode"] = mode;
  summary["samples"] = samples.size();
  summary["poses"] = result.trajectory.size();
  summary["skipped_updates"] = result.skipped_updates;
  summary["renormalizations"] = result.renormalizations;
  json gaps = json::array();
  for (const auto& g : result.gaps) {
    gaps.push_back({{"index", g.index}, {"t", g.t}, {"gap", g.gap}, {"used_dt", g.used_dt}});
  }
  summary["gaps"] = gaps;
  write_json(out.string() + ".json", summary);
  std::printf("run (%s): %zu poses, %zu gaps -> %s\n", mode.c_str(), result.trajectory.size(),
              result.gaps.size(), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string est;
  std::string truth;
  std::string json_out;
  std::string table_out;
  std::string name;
  std::optional<double> seconds;
  bool exhaustive = false;
};

int cmd_eval(const EvalArgs& a) {
  const Trajectory est = read_trajectory_csv(a.est);
  const Trajectory truth = fs::is_directory(a.truth) ? load_sequence(a.truth).truth
                                                     : read_trajectory_csv(a.truth);
  const auto [e, t] = align_by_time(est, truth);
  const EvalOptions opts = a.exhaustive ? EvalOptions::exhaustive() : EvalOptions{};
  MetricReport rep;
  if (e.size() >= 2) {
    rep = evaluate(e, t, opts);
  } else {
    std::fprintf(stderr, "eval: fewer than two time-aligned poses\n");
  }
  json j = to_json(rep);
  j["aligned_poses"] = e.size();
  const std::string name = a.name.empty() ? fs::path(a.est).stem().string() : a.name;
  const std::string table = format_table({{name, rep, a.seconds}});
  if (!a.json_out.empty()) write_json(a.json_out, j);
  if (!a.table_out.empty()) {
    ensure_dir(fs::path(a.table_out).parent_path());
    csv::write_text(a.table_out, table);
  }
  std::fputs(table.c_str(), stdout);
  if (!rep.available) std::fprintf(stderr, "eval: metrics unavailable (no subsequence long enough)\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  std::string protocol;
  std::string train;
  std::string val;
  std::string test;
  double train_seconds = 0.0;
  std::string out;
};

int cmd_split(const SplitArgs& a) {
  SplitManifest m;
  if (a.protocol == "kitti") {
    const auto& drives = kitti_protocol_drives();
    const std::vector<std::string> test(drives.begin(), drives.begin() + 5);
    const std::vector<std::string> train(drives.begin() + 5, drives.end());
    if (!(a.train_seconds > 0.0)) throw InvalidInput("--train-seconds must be positive");
    m = make_protocol_split(train, test, a.train_seconds);
  } else if (!a.protocol.empty()) {
    throw InvalidInput("unknown protocol " + a.protocol);
  } else if (a.train_seconds > 0.0) {
    m = make_protocol_split(split_list(a.train), split_list(a.test), a.train_seconds);
  } else {
    for (const auto& s : split_list(a.train)) m.train.push_back({s, 0.0, std::nullopt});
    for (const auto& s : split_list(a.val)) m.val.push_back({s, 0.0, std::nullopt});
    for (const auto& s : split_list(a.test)) m.test.push_back({s, 0.0, std::nullopt});
  }
  write_json(a.out, to_json(m));
  std::printf("split: %zu train, %zu val, %zu test -> %s\n", m.train.size(), m.val.size(),
              m.test.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking-network-assisted invariant EKF toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthesize a clean IMU sequence and its truth");
  synth->add_option("--kind", sa.kind, "straight, circle, figure-eight or piecewise");
  synth->add_option("--duration", sa.duration, "Seconds");
  synth->add_option("--rate", sa.rate, "Hz");
  synth->add_option("--speed", sa.speed, "m/s");
  synth->add_option("--yaw-rate", sa.yaw_rate, "rad/s");
  synth->add_option("--segment", sa.segments, "duration,accel,yaw_rate (piecewise; repeatable)");
  synth->add_option("--slip-std", sa.slip_std, "Lateral slip std, m/s");
  synth->add_option("--slip-tau", sa.slip_tau, "Lateral slip time constant, s");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", sa.out, "Output directory (imu.csv, truth.csv)");

  CorruptArgs ca;
  auto* corr = app.add_subcommand("corrupt", "Inject IMU noise and bias");
  corr->add_option("--in", ca.in, "Input IMU CSV")->required();
  corr->add_option("--out", ca.out, "Output IMU CSV; a .json sidecar is written next to it")->required();
  corr->add_option("--preset", ca.preset, "kitti-lowcost or none");
  corr->add_option("--config", ca.config, "JSON config (corruption section)");
  corr->add_option("--set", ca.sets, "section.key=value override");
  corr->add_option("--seed", ca.seed);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the network end to end through the filter");
  train->add_option("--config", ta.config, "JSON config");
  train->add_option("--set", ta.sets, "section.key=value override");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Filter one sequence");
  run->add_option("--config", ra.config, "JSON config");
  run->add_option("--set", ra.sets, "section.key=value override");
  run->add_option("--seq", ra.seq, "Sequence directory");
  run->add_option("--imu", ra.imu, "IMU CSV (alternative to --seq)");
  run->add_option("--truth", ra.truth, "Truth CSV for the initial state");
  run->add_option("--checkpoint", ra.checkpoint, "Network weights; omitted → static noise");
  run->add_flag("--static", ra.force_static, "Ignore the checkpoint and use static noise");
  run->add_option("--out", ra.out, "Estimate CSV")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Relative translation and rotation error");
  eval->add_option("--est", ea.est, "Estimate CSV")->required();
  eval->add_option("--truth", ea.truth, "Truth CSV or sequence directory")->required();
  eval->add_option("--json", ea.json_out, "JSON report path");
  eval->add_option("--table", ea.table_out, "Text table path");
  eval->add_option("--name", ea.name, "Row label");
  eval->add_option("--seconds", ea.seconds, "Sequence duration for the T(s) column");
  eval->add_flag("--exhaustive", ea.exhaustive, "Use every start frame");

  SplitArgs pa;
  auto* split = app.add_subcommand("split", "Write a train/val/test manifest");
  split->add_option("--protocol", pa.protocol, "kitti: the standard 9/5 drive split");
  split->add_option("--train", pa.train, "Comma-separated sequences");
  split->add_option("--val", pa.val, "Comma-separated sequences");
  split->add_option("--test", pa.test, "Comma-separated sequences");
  split->add_option("--train-seconds", pa.train_seconds,
                    "Train on the first T s of each training sequence, validate on the rest");
  split->add_option("--out", pa.out, "Manifest path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kInvalidInput);
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*corr) return cmd_corrupt(ca);
    if (*train) return cmd_train(ta);
    if (*run) return cmd_run(ra);
    if (*eval) return cmd_eval(ea);
    if (*split) return cmd_split(pa);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ExitCode::kInvalidInput);
  }
  return 0;
}
