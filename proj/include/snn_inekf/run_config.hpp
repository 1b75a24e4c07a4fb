#pragma once

// Structured run configuration. Values are layered: built-in defaults, then a
// JSON file, then SNNEKF_* environment variables, then --set key=value flags.
//
// Environment keys map onto the JSON tree by lower-casing the remainder after
// the prefix and splitting on "__": SNNEKF_TRAIN__LR=3e-4 sets train.lr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "snn_inekf/errors.hpp"
#include "snn_inekf/imu_model.hpp"
#include "snn_inekf/inekf.hpp"
#include "snn_inekf/snn_core.hpp"
#include "snn_inekf/trainer.hpp"

extern char** environ;

namespace snn_inekf {

inline constexpr const char* kEnvPrefix = "SNNEKF_";

struct RunConfig {
  std::string data_root;
  std::string output_dir = ".";
  std::string checkpoint;
  std::string split;
  std::string imu_file = "imu.csv";
  FilterConfig filter;
  NetConfig net;
  LifParams lif;
  double beta_s = 0.1;
  TrainConfig train;
  std::string corruption_preset = "none";
  CorruptionSpec corruption;
  bool adaptive = true;
  int update_every = 16;

  void validate() const {
    net.validate();
    lif.validate();
    train.validate();
    corruption.validate();
    if (!(beta_s > 0.0)) throw InvalidInput("beta_s must be positive");
    if (update_every < 1) throw InvalidInput("update_every must be at least 1");
    if (!(filter.sigma_lat2 > 0.0) || !(filter.sigma_up2 > 0.0)) {
      throw InvalidInput("filter.sigma_lat2 and filter.sigma_up2 must be positive");
    }
    if (!(filter.gap_threshold > 0.0)) throw InvalidInput("filter.gap_threshold must be positive");
    if (corruption_preset != "none" && corruption_preset != "kitti-lowcost") {
      throw InvalidInput("corruption.preset must be none or kitti-lowcost");
    }
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const FilterConfig& f = c.filter;
  json j;
  j["paths"] = {{"data_root", c.data_root},
                {"output_dir", c.output_dir},
                {"checkpoint", c.checkpoint},
                {"split", c.split},
                {"imu_file", c.imu_file}};
  j["filter"] = {{"p0_attitude", f.p0_attitude},
                 {"p0_velocity", f.p0_velocity},
                 {"p0_position", f.p0_position},
                 {"p0_bias_gyro", f.p0_bias_gyro},
                 {"p0_bias_accel", f.p0_bias_accel},
                 {"p0_extrinsic", f.p0_extrinsic},
                 {"gyro_noise_std", f.gyro_noise_std},
                 {"accel_noise_std", f.accel_noise_std},
                 {"position_noise_std", f.position_noise_std},
                 {"gyro_bias_walk_std", f.gyro_bias_walk_std},
                 {"accel_bias_walk_std", f.accel_bias_walk_std},
                 {"extrinsic_walk_std", f.extrinsic_walk_std},
                 {"estimate_imu_bias", f.estimate_imu_bias},
                 {"sigma_lat2", f.sigma_lat2},
                 {"sigma_up2", f.sigma_up2},
                 {"gap_threshold", f.gap_threshold},
                 {"gravity", {f.gravity.x(), f.gravity.y(), f.gravity.z()}},
                 {"joseph_form", f.joseph_form},
                 {"max_condition", f.max_condition},
                 {"rotation_tolerance", f.rotation_tolerance}};
  j["net"] = {{"window_n", c.net.window_n}, {"d_model", c.net.d_model},
              {"n_heads", c.net.n_heads},   {"n_blocks", c.net.n_blocks},
              {"ts", c.net.ts},             {"conv_kernel", c.net.conv_kernel}};
  j["lif"] = {{"beta", c.lif.beta}, {"u_thr", c.lif.u_thr}, {"v_reset", c.lif.v_reset},
              {"alpha", c.lif.alpha}};
  j["beta_s"] = c.beta_s;
  j["train"] = {{"lr", c.train.lr},
                {"weight_decay", c.train.weight_decay},
                {"dropout", c.train.dropout},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"huber_delta", c.train.huber_delta},
                {"stride", c.train.stride},
                {"seed", c.train.seed},
                {"restart_period", c.train.restart_period},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["corruption"] = {{"preset", c.corruption_preset},
                     {"gyro_noise_std", c.corruption.gyro_noise_std},
                     {"gyro_bias_range",
                      {c.corruption.gyro_bias_range.first, c.corruption.gyro_bias_range.second}},
                     {"accel_noise_std", c.corruption.accel_noise_std},
                     {"accel_bias_range",
                      {c.corruption.accel_bias_range.first, c.corruption.accel_bias_range.second}},
                     {"seed", c.corruption.rng_seed}};
  j["mode"] = c.adaptive ? "adaptive" : "static";
  j["update_every"] = c.update_every;
  return j;
}

namespace config_detail {

/// Copies overlay into base; every overlay key must already exist in base.
inline void merge_checked(nlohmann::json& base, const nlohmann::json& overlay,
                          const std::string& path) {
  if (!overlay.is_object()) throw InvalidInput("config " + path + " must be an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw InvalidInput("unknown config key " + key);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

/// "3e-4" → number, "true" → bool, anything that is not JSON → string.
inline nlohmann::json parse_scalar(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json(text);
  }
}

/// Sets a dotted key path; the key must already exist.
inline void set_path(nlohmann::json& root, const std::string& dotted, const nlohmann::json& value) {
  nlohmann::json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw InvalidInput("unknown config key " + dotted);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw InvalidInput("config key " + dotted + " names a section");
  *node = value;
}

template <typename T>
T get(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace config_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using config_detail::get;
  RunConfig c;
  c.data_root = get<std::string>(j, "paths", "data_root");
  c.output_dir = get<std::string>(j, "paths", "output_dir");
  c.checkpoint = get<std::string>(j, "paths", "checkpoint");
  c.split = get<std::string>(j, "paths", "split");
  c.imu_file = get<std::string>(j, "paths", "imu_file");

  FilterConfig& f = c.filter;
  f.p0_attitude = get<double>(j, "filter", "p0_attitude");
  f.p0_velocity = get<double>(j, "filter", "p0_velocity");
  f.p0_position = get<double>(j, "filter", "p0_position");
  f.p0_bias_gyro = get<double>(j, "filter", "p0_bias_gyro");
  f.p0_bias_accel = get<double>(j, "filter", "p0_bias_accel");
  f.p0_extrinsic = get<double>(j, "filter", "p0_extrinsic");
  f.gyro_noise_std = get<double>(j, "filter", "gyro_noise_std");
  f.accel_noise_std = get<double>(j, "filter", "accel_noise_std");
  f.position_noise_std = get<double>(j, "filter", "position_noise_std");
  f.gyro_bias_walk_std = get<double>(j, "filter", "gyro_bias_walk_std");
  f.accel_bias_walk_std = get<double>(j, "filter", "accel_bias_walk_std");
  f.extrinsic_walk_std = get<double>(j, "filter", "extrinsic_walk_std");
  f.estimate_imu_bias = get<bool>(j, "filter", "estimate_imu_bias");
  f.sigma_lat2 = get<double>(j, "filter", "sigma_lat2");
  f.sigma_up2 = get<double>(j, "filter", "sigma_up2");
  f.gap_threshold = get<double>(j, "filter", "gap_threshold");
  const auto g = get<std::vector<double>>(j, "filter", "gravity");
  if (g.size() != 3) throw InvalidInput("config filter.gravity must have 3 components");
  f.gravity = Vec3(g[0], g[1], g[2]);
  f.joseph_form = get<bool>(j, "filter", "joseph_form");
  f.max_condition = get<double>(j, "filter", "max_condition");
  f.rotation_tolerance = get<double>(j, "filter", "rotation_tolerance");

  c.net.window_n = get<int>(j, "net", "window_n");
  c.net.d_model = get<int>(j, "net", "d_model");
  c.net.n_heads = get<int>(j, "net", "n_heads");
  c.net.n_blocks = get<int>(j, "net", "n_blocks");
  c.net.ts = get<int>(j, "net", "ts");
  c.net.conv_kernel = get<int>(j, "net", "conv_kernel");
  c.lif.beta = get<double>(j, "lif", "beta");
  c.lif.u_thr = get<double>(j, "lif", "u_thr");
  c.lif.v_reset = get<double>(j, "lif", "v_reset");
  c.lif.alpha = get<double>(j, "lif", "alpha");
  c.lif.ts = c.net.ts;
  try {
    c.beta_s = j.at("beta_s").get<double>();
    c.update_every = j.at("update_every").get<int>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "adaptive" && mode != "static") {
      throw InvalidInput("config mode must be adaptive or static");
    }
    c.adaptive = mode == "adaptive";
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }

  c.train.lr = get<double>(j, "train", "lr");
  c.train.weight_decay = get<double>(j, "train", "weight_decay");
  c.train.dropout = get<double>(j, "train", "dropout");
  c.train.epochs = get<int>(j, "train", "epochs");
  c.train.batch_size = get<int>(j, "train", "batch_size");
  c.train.huber_delta = get<double>(j, "train", "huber_delta");
  c.train.stride = get<int>(j, "train", "stride");
  c.train.seed = get<std::uint64_t>(j, "train", "seed");
  c.train.restart_period = get<int>(j, "train", "restart_period");
  c.train.checkpoint_every = get<int>(j, "train", "checkpoint_every");
  c.train.window_n = c.net.window_n;
  c.net.dropout = c.train.dropout;

  c.corruption_preset = get<std::string>(j, "corruption", "preset");
  if (c.corruption_preset == "kitti-lowcost") {
    c.corruption = kitti_lowcost_preset();
  } else {
    c.corruption.gyro_noise_std = get<double>(j, "corruption", "gyro_noise_std");
    c.corruption.accel_noise_std = get<double>(j, "corruption", "accel_noise_std");
    const auto gb = get<std::vector<double>>(j, "corruption", "gyro_bias_range");
    const auto ab = get<std::vector<double>>(j, "corruption", "accel_bias_range");
    if (gb.size() != 2 || ab.size() != 2) {
      throw InvalidInput("config corruption bias ranges must be [low, high]");
    }
    c.corruption.gyro_bias_range = {gb[0], gb[1]};
    c.corruption.accel_bias_range = {ab[0], ab[1]};
  }
  c.corruption.rng_seed = get<std::uint64_t>(j, "corruption", "seed");
  c.validate();
  return c;
}

/// Environment overrides as (dotted key, raw value) pairs, sorted by key.
inline std::vector<std::pair<std::string, std::string>> env_overrides(char** env = environ) {
  std::vector<std::pair<std::string, std::string>> out;
  const std::string prefix = kEnvPrefix;
  for (char** e = env; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    std::string dotted;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (key.compare(i, 2, "__") == 0) {
        dotted.push_back('.');
        ++i;
      } else {
        dotted.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(key[i]))));
      }
    }
    out.emplace_back(dotted, entry.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// defaults ← file (optional) ← environment ← key=value overrides.
inline RunConfig load_run_config(const std::string& file,
                                 const std::vector<std::string>& set_flags = {},
                                 bool use_env = true) {
  nlohmann::json j = to_json(RunConfig{});
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config " + file);
    nlohmann::json overlay;
    try {
      overlay = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput("config " + file + " is not valid JSON: " + e.what());
    }
    config_detail::merge_checked(j, overlay, "");
  }
  if (use_env) {
    for (const auto& [key, value] : env_overrides()) {
      config_detail::set_path(j, key, config_detail::parse_scalar(value));
    }
  }
  for (const auto& flag : set_flags) {
    const auto eq = flag.find('=');
    if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got " + flag);
    config_detail::set_path(j, flag.substr(0, eq), config_detail::parse_scalar(flag.substr(eq + 1)));
  }
  return run_config_from_json(j);
}

}  // namespace snn_inekf
