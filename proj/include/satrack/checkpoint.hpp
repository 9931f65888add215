#pragma once
// Checkpoint directory: manifest.json (metadata + tensor index) and
// tensors.bin (little-endian float64 values, concatenated in index order).

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "satrack/config.hpp"
#include "satrack/tensor.hpp"

namespace satrack {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "satrack-checkpoint";

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  /// Free-form metadata (config, vocabulary, epoch, optimizer scalars).
  Json meta = Json::object();
  /// Keyed by "<kind>/<name>", e.g. "param/head.tl.conv0.weight", "adam_m/...".
  std::map<std::string, StoredTensor> tensors;

  void put(const std::string& key, Shape shape, std::vector<double> values) {
    if (numel(shape) != values.size()) throw ConfigError("checkpoint tensor '" + key + "': shape/value count mismatch");
    tensors[key] = {std::move(shape), std::move(values)};
  }

  const StoredTensor& get(const std::string& key) const {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw ConfigError("checkpoint has no tensor '" + key + "'");
    return it->second;
  }

  bool has(const std::string& key) const { return tensors.count(key) != 0; }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    Json index = Json::array();
    std::uint64_t offset = 0;
    std::ofstream blob(dir / "tensors.bin", std::ios::binary);
    if (!blob) throw ConfigError("cannot write checkpoint blob in '" + dir.string() + "'");
    for (const auto& [key, t] : tensors) {
      index.push_back({{"name", key}, {"shape", t.shape}, {"dtype", "f64le"}, {"offset", offset}, {"count", t.values.size()}});
      for (double v : t.values) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        blob.write(bytes, 8);
      }
      offset += t.values.size() * 8;
    }
    Json manifest{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"meta", meta}, {"tensors", index}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  }

  static Checkpoint load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw ConfigError("no checkpoint manifest in '" + dir.string() + "'");
    Json manifest;
    try {
      mf >> manifest;
    } catch (const Json::exception& e) {
      throw ConfigError("corrupt checkpoint manifest in '" + dir.string() + "': " + e.what());
    }
    if (manifest.value("format", "") != kCheckpointFormat) throw ConfigError("'" + dir.string() + "' is not a satrack checkpoint");
    const int version = manifest.value("version", -1);
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint version " + std::to_string(version) + " does not match supported version " +
                        std::to_string(kCheckpointVersion));
    }
    std::ifstream blob(dir / "tensors.bin", std::ios::binary);
    if (!blob) throw ConfigError("missing checkpoint blob in '" + dir.string() + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    Checkpoint ck;
    ck.meta = manifest.at("meta");
    for (const auto& e : manifest.at("tensors")) {
      if (e.value("dtype", "") != "f64le") throw ConfigError("unsupported checkpoint dtype for '" + e.value("name", "") + "'");
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (offset + count * 8 > bytes.size()) throw ConfigError("checkpoint blob truncated at '" + e.value("name", "") + "'");
      std::vector<double> values(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i * 8 + b])) << (8 * b);
        values[i] = std::bit_cast<double>(bits);
      }
      ck.put(e.at("name").get<std::string>(), e.at("shape").get<Shape>(), std::move(values));
    }
    return ck;
  }
};

}  // namespace satrack
