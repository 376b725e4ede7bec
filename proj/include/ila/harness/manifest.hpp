#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "ila/data/cifar.hpp"
#include "ila/data/synthetic.hpp"
#include "ila/harness/hash.hpp"
#include "ila/io.hpp"
#include "json.hpp"

namespace ila::harness {

inline constexpr const char* kToolVersion = "0.1.0";

/// Where images come from and which slice of them to use.
struct DatasetSpec {
  std::string kind = "synthetic";  // "cifar10" or "synthetic"
  std::string dir;                 // CIFAR-10 directory
  std::string split = "test";
  std::size_t offset = 0;
  std::size_t count = 1000;
  std::uint64_t seed = 0;   // synthetic sample seed (split-salted)
  double separation = 4.0;  // synthetic class separation
  std::uint64_t world_seed = 0;

  void validate() const {
    if (kind != "cifar10" && kind != "synthetic") {
      throw ConfigError("dataset kind must be cifar10 or synthetic, got '" + kind + "'");
    }
    data::parse_split(split);
    if (count == 0) throw ConfigError("dataset count must be > 0");
    if (kind == "cifar10" && dir.empty()) throw ConfigError("cifar10 dataset needs a dir");
    if (!(separation >= 0)) throw ConfigError("synthetic separation must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& d) {
  j = {{"kind", d.kind},     {"dir", d.dir},     {"split", d.split},
       {"offset", d.offset}, {"count", d.count}, {"seed", d.seed},
       {"separation", d.separation}, {"world_seed", d.world_seed}};
}
inline void from_json(const nlohmann::json& j, DatasetSpec& d) {
  d.kind = j.value("kind", d.kind);
  d.dir = j.value("dir", d.dir);
  d.split = j.value("split", d.split);
  d.offset = j.value("offset", d.offset);
  d.count = j.value("count", d.count);
  d.seed = j.value("seed", d.seed);
  d.separation = j.value("separation", d.separation);
  d.world_seed = j.value("world_seed", d.world_seed);
}

/// Materialize the slice [offset, offset + count).
inline data::Dataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  const auto split = data::parse_split(spec.split);
  const std::size_t end = spec.offset + spec.count;
  data::Dataset full;
  if (spec.kind == "cifar10") {
    full = data::load_cifar10_binary(spec.dir, split, end);
    if (full.size() < end) {
      throw InputError("CIFAR-10 " + spec.split + " split has " +
                       std::to_string(full.size()) + " images, slice needs " +
                       std::to_string(end));
    }
  } else {
    // Train and test draw from one world with different sample seeds.
    const std::uint64_t salt = split == data::Split::kTrain ? 0 : 0x9e3779b97f4a7c15ULL;
    full = data::synthetic_dataset(end, spec.seed ^ salt, spec.separation, spec.world_seed);
    full.split = spec.split;
  }
  return full.slice(spec.offset, end);
}

/// Everything needed to rerun one command.
struct ExperimentManifest {
  std::string run_id;
  std::string command;
  std::string tool_version = kToolVersion;
  std::string created_at;
  std::uint64_t seed = 0;
  /// Command options, in the same shape the --config file takes.
  nlohmann::json options = nlohmann::json::object();
  std::map<std::string, std::string> inputs;   // role -> path
  std::map<std::string, std::string> hashes;   // role -> sha256
  std::map<std::string, std::string> outputs;  // role -> file name
};

inline void to_json(nlohmann::json& j, const ExperimentManifest& m) {
  j = {{"run_id", m.run_id},   {"command", m.command}, {"tool_version", m.tool_version},
       {"created_at", m.created_at}, {"seed", m.seed},   {"options", m.options},
       {"inputs", m.inputs},   {"hashes", m.hashes},   {"outputs", m.outputs}};
}
inline void from_json(const nlohmann::json& j, ExperimentManifest& m) {
  m.run_id = j.value("run_id", std::string());
  m.command = j.value("command", std::string());
  m.tool_version = j.value("tool_version", std::string());
  m.created_at = j.value("created_at", std::string());
  m.seed = j.value("seed", std::uint64_t{0});
  m.options = j.value("options", nlohmann::json::object());
  m.inputs = j.value("inputs", std::map<std::string, std::string>{});
  m.hashes = j.value("hashes", std::map<std::string, std::string>{});
  m.outputs = j.value("outputs", std::map<std::string, std::string>{});
}

/// Content-derived id: same command and options give the same id.
inline std::string make_run_id(const std::string& command, const nlohmann::json& options) {
  const std::string key = command + "\n" + options.dump();
  return command + "-" +
         Sha256().update(key.data(), key.size()).hex().substr(0, 12);
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_sha256(const std::filesystem::path& p) {
  return sha256_hex(io::read_file(p));
}

inline void save_manifest(const ExperimentManifest& m, const std::filesystem::path& path) {
  io::write_text(path, nlohmann::json(m).dump(2) + "\n");
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(io::read_text(path)).get<ExperimentManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace ila::harness
