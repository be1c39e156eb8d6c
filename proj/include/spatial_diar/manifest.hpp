#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spatial_diar/audio_io.hpp"
#include "spatial_diar/config.hpp"

namespace spatial_diar {

/// Record of one command run: what went in, what came out, and the config that shaped it.
/// Timestamps are opt-in so repeated runs produce byte-identical manifests.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string stage;
  std::vector<std::string> inputs;
  std::map<std::string, std::string> outputs;  ///< path -> content hash
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  void add_output(const std::string& path, std::string_view bytes) { outputs[path] = hex64(fnv1a64(bytes)); }
  void add_output_file(const std::string& path) { add_output(path, read_file(path)); }

  std::string to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["stage"] = stage;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    if (started_at) j["started_at"] = *started_at;
    if (finished_at) j["finished_at"] = *finished_at;
    return j.dump(2) + "\n";
  }

  static RunManifest from_json(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.stage = j.at("stage").get<std::string>();
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    if (j.contains("started_at")) m.started_at = j["started_at"].get<std::string>();
    if (j.contains("finished_at")) m.finished_at = j["finished_at"].get<std::string>();
    return m;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace spatial_diar
