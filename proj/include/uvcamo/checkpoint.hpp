#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uvcamo/efe.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

inline constexpr int kCheckpointVersion = 1;

// Provenance stored next to the weights.
struct CheckpointInfo {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t dataset_seed = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

namespace detail {

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint not found: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

inline nlohmann::json info_json(const CheckpointInfo& info) {
  return {{"config_hash", info.config_hash},
          {"seed", info.seed},
          {"dataset_seed", info.dataset_seed},
          {"metrics", info.metrics}};
}

inline CheckpointInfo info_from(const nlohmann::json& j) {
  return {j.value("config_hash", ""), j.value("seed", std::uint64_t{0}), j.value("dataset_seed", std::uint64_t{0}),
          j.value("metrics", nlohmann::json::object())};
}

inline void check_header(const nlohmann::json& j, const char* kind, const std::filesystem::path& path) {
  if (j.value("format", "") != kind)
    throw InvariantViolation(path.string() + " is not a " + std::string(kind) + " checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw InvariantViolation(path.string() + ": unsupported checkpoint version " + std::to_string(j.value("version", 0)));
}

}  // namespace detail

inline void save_efe(const EfeNet& net, const CheckpointInfo& info, const std::filesystem::path& path) {
  const auto& a = net.architecture();
  nlohmann::json j{{"format", "uvcamo-efe"},
                   {"version", kCheckpointVersion},
                   {"architecture", {{"height", a.height}, {"width", a.width}, {"channels", {a.ch1, a.ch2, a.ch3}}}},
                   {"info", detail::info_json(info)},
                   {"params", std::vector<double>(net.params().begin(), net.params().end())}};
  detail::write_json_file(j, path);
}

inline EfeNet load_efe(const std::filesystem::path& path, CheckpointInfo* info = nullptr) {
  const auto j = detail::read_json_file(path);
  detail::check_header(j, "uvcamo-efe", path);
  try {
    const auto& a = j.at("architecture");
    EfeArchitecture arch{a.at("height").get<int>(), a.at("width").get<int>(), a.at("channels").at(0).get<int>(),
                         a.at("channels").at(1).get<int>(), a.at("channels").at(2).get<int>()};
    EfeNet net(arch, 0);
    net.set_params(j.at("params").get<std::vector<double>>());
    if (info) *info = detail::info_from(j.value("info", nlohmann::json::object()));
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("malformed EFE checkpoint " + path.string() + ": " + e.what());
  }
}

inline void save_detector(const ToyDetector& det, const CheckpointInfo& info, const std::filesystem::path& path) {
  const auto& a = det.architecture();
  nlohmann::json j{{"format", "uvcamo-detector"},
                   {"version", kCheckpointVersion},
                   {"architecture",
                    {{"height", a.height}, {"width", a.width}, {"grid", a.grid}, {"base_channels", a.base_channels}}},
                   {"info", detail::info_json(info)},
                   {"params", std::vector<double>(det.params().begin(), det.params().end())}};
  detail::write_json_file(j, path);
}

inline ToyDetector load_detector(const std::filesystem::path& path, CheckpointInfo* info = nullptr) {
  const auto j = detail::read_json_file(path);
  detail::check_header(j, "uvcamo-detector", path);
  try {
    const auto& a = j.at("architecture");
    DetectorArchitecture arch{a.at("height").get<int>(), a.at("width").get<int>(), a.at("grid").get<int>(),
                              a.at("base_channels").get<int>()};
    ToyDetector det(arch, 0);
    det.set_params(j.at("params").get<std::vector<double>>());
    if (info) *info = detail::info_from(j.value("info", nlohmann::json::object()));
    return det;
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("malformed detector checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace uvcamo
