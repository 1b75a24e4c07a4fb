#pragma once

// Weight checkpoint container:
//
//   bytes 0..7    magic "SNNEKFW\0"
//   bytes 8..11   format version, uint32 little-endian
//   bytes 12..19  manifest length L, uint64 little-endian
//   next L bytes  UTF-8 JSON manifest
//   remainder     tensor data, float32 little-endian, column-major
//
// The manifest lists every tensor (name, shape, offset in floats, trainable)
// together with the NetConfig, LifParams and beta_s the weights belong to.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "snn_inekf/errors.hpp"
#include "snn_inekf/snn_core.hpp"

namespace snn_inekf {

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'N', 'N', 'E', 'K', 'F', 'W', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "snnekf-weights";

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"window_n", c.window_n}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"n_blocks", c.n_blocks}, {"ts", c.ts},             {"dropout", c.dropout},
          {"channels", c.channels}, {"conv_kernel", c.conv_kernel}};
}

inline nlohmann::json to_json(const LifParams& p) {
  return {{"beta", p.beta}, {"u_thr", p.u_thr}, {"v_reset", p.v_reset}, {"alpha", p.alpha},
          {"ts", p.ts}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.window_n = j.at("window_n").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.ts = j.at("ts").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.channels = j.at("channels").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  return c;
}

inline LifParams lif_params_from_json(const nlohmann::json& j) {
  LifParams p;
  p.beta = j.at("beta").get<double>();
  p.u_thr = j.at("u_thr").get<double>();
  p.v_reset = j.at("v_reset").get<double>();
  p.alpha = j.at("alpha").get<double>();
  p.ts = j.at("ts").get<int>();
  return p;
}

namespace ckpt_detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace ckpt_detail

/// Serializes the model to the container byte string.
inline std::string encode_checkpoint(const SnnModel& model) {
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["net"] = to_json(model.net);
  manifest["lif"] = to_json(model.lif);
  manifest["beta_s"] = model.beta_s;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : model.weights.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", {t.value.rows(), t.value.cols()}},
                       {"offset", offset},
                       {"trainable", t.trainable}});
    offset += static_cast<std::uint64_t>(t.value.size());
  }
  manifest["tensors"] = tensors;
  manifest["total_floats"] = offset;
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  ckpt_detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  ckpt_detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : model.weights.tensors()) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const float f = static_cast<float>(t.value(i));
      ckpt_detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

inline SnnModel decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(p, kCheckpointMagic.data(), 8) != 0) {
    throw FormatError(source + ": not a weight checkpoint (bad magic)");
  }
  const auto version = ckpt_detail::get_le<std::uint32_t>(p + 8);
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = ckpt_detail::get_le<std::uint64_t>(p + 12);
  if (len > bytes.size() - 20) throw FormatError(source + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(20, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": manifest is not valid JSON: " + e.what());
  }
  SnnModel model;
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
      throw FormatError(source + ": wrong format tag");
    }
    model.net = net_config_from_json(manifest.at("net"));
    model.lif = lif_params_from_json(manifest.at("lif"));
    model.beta_s = manifest.at("beta_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": incomplete manifest: " + e.what());
  }
  try {
    model.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(source + ": " + e.what());
  }

  // Shapes must match a freshly built model of the stored configuration.
  const SnnModel layout = init_model(model.net, model.lif, 0, model.beta_s);
  const std::size_t data_start = 20 + len;
  const std::size_t n_floats = (bytes.size() - data_start) / 4;
  const auto& entries = manifest.at("tensors");
  if (entries.size() != layout.weights.size()) {
    throw FormatError(source + ": tensor count does not match the configuration");
  }
  std::size_t total = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    const Tensor& ref = layout.weights[k];
    const auto name = e.at("name").get<std::string>();
    const auto rows = e.at("shape")[0].get<Eigen::Index>();
    const auto cols = e.at("shape")[1].get<Eigen::Index>();
    const auto off = e.at("offset").get<std::uint64_t>();
    if (name != ref.name || rows != ref.value.rows() || cols != ref.value.cols()) {
      throw FormatError(source + ": tensor " + name + " does not match the configuration");
    }
    if (off + static_cast<std::uint64_t>(rows * cols) > n_floats) {
      throw FormatError(source + ": tensor data truncated at " + name);
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = ckpt_detail::get_le<std::uint32_t>(p + data_start + 4 * (off + i));
      m(i) = static_cast<double>(std::bit_cast<float>(bits));
    }
    model.weights.add(name, std::move(m), ref.trainable);
    total += static_cast<std::size_t>(rows * cols);
  }
  if (bytes.size() - data_start != 4 * total) {
    throw FormatError(source + ": payload size does not match the tensor manifest");
  }
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const SnnModel& model) {
  const std::string bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

inline SnnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

/// Rounds every tensor through float32, matching what a save/load cycle yields.
inline void round_to_float32(SnnModel& model) {
  for (std::size_t k = 0; k < model.weights.size(); ++k) {
    Matrix& m = model.weights[k].value;
    m = m.cast<float>().cast<double>();
  }
}

}  // namespace snn_inekf
