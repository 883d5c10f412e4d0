#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "uvcamo/dataset.hpp"
#include "uvcamo/efe.hpp"
#include "uvcamo/hash.hpp"
#include "uvcamo/optimize.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

inline constexpr int kFormatVersion = 1;

struct PipelineConfig {
  std::string mesh;  // OBJ path; empty selects the built-in procedural car
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  SceneSettings scene;
  GridConfig dataset;
  EfeTrainConfig efe;
  DetectorTrainConfig detector;
  OptimizeConfig optimize;
  std::string external_detector;  // evaluation-only command, see README

  PipelineConfig() {
    detector.arch = {scene.image_size.height, scene.image_size.width, 8, 16};
    efe.arch = {scene.image_size.height, scene.image_size.width, 16, 32, 64};
  }
};

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items())
      if (std::ranges::find(seen_, k) == seen_.end()) throw ConfigError(field(k.c_str()) + ": unknown field");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"mesh", c.mesh},
          {"out_dir", c.out_dir},
          {"seed", c.seed},
          {"scene",
           {{"image_height", c.scene.image_size.height},
            {"image_width", c.scene.image_size.width},
            {"fov_deg", c.scene.fov_deg},
            {"sun_azimuth", c.scene.sun_azimuth}}},
          {"dataset", to_json(c.dataset)},
          {"efe",
           {{"epochs", c.efe.epochs},
            {"learning_rate", c.efe.learning_rate},
            {"batch_size", c.efe.batch_size},
            {"use_area_weight", c.efe.use_area_weight},
            {"channels", {c.efe.arch.ch1, c.efe.arch.ch2, c.efe.arch.ch3}}}},
          {"detector",
           {{"epochs", c.detector.epochs},
            {"learning_rate", c.detector.learning_rate},
            {"batch_size", c.detector.batch_size},
            {"lambda_coord", c.detector.lambda_coord},
            {"lambda_noobj", c.detector.lambda_noobj},
            {"ignore_iou", c.detector.ignore_iou},
            {"flip_augment", c.detector.flip_augment},
            {"min_ap", c.detector.min_ap},
            {"grid", c.detector.arch.grid},
            {"base_channels", c.detector.arch.base_channels}}},
          {"optimize",
           {{"learning_rate", c.optimize.learning_rate},
            {"epochs", c.optimize.epochs},
            {"batch_size", c.optimize.batch_size},
            {"alpha", c.optimize.alpha},
            {"beta", c.optimize.beta},
            {"texture_height", c.optimize.texture_height},
            {"texture_width", c.optimize.texture_width},
            {"loss", to_string(c.optimize.loss)},
            {"checkpoint_every_epochs", c.optimize.checkpoint_every_epochs}}},
          {"external_detector", c.external_detector}};
}

// Seeds of every stage follow the top-level seed.
inline void propagate_seed(PipelineConfig& c) {
  c.efe.seed = mix_seed(c.seed, 11);
  c.detector.seed = mix_seed(c.seed, 12);
  c.optimize.seed = mix_seed(c.seed, 13);
}

inline void validate_config(const PipelineConfig& c) {
  if (c.scene.image_size.height < 8 || c.scene.image_size.width < 8)
    throw ConfigError("scene.image_height/image_width: must be >= 8");
  if (!(c.scene.fov_deg > 0 && c.scene.fov_deg < 180)) throw ConfigError("scene.fov_deg: must lie in (0, 180)");
  validate_grid(c.dataset);
  if (c.efe.epochs < 1) throw ConfigError("efe.epochs: must be >= 1");
  if (!(c.efe.learning_rate > 0)) throw ConfigError("efe.learning_rate: must be > 0");
  if (c.efe.batch_size < 1) throw ConfigError("efe.batch_size: must be >= 1");
  if (c.detector.epochs < 1) throw ConfigError("detector.epochs: must be >= 1");
  if (!(c.detector.learning_rate > 0)) throw ConfigError("detector.learning_rate: must be > 0");
  if (c.detector.batch_size < 1) throw ConfigError("detector.batch_size: must be >= 1");
  if (c.detector.min_ap < 0 || c.detector.min_ap > 1) throw ConfigError("detector.min_ap: must lie in [0, 1]");
  c.optimize.validate();
  if (!c.mesh.empty() && !std::filesystem::exists(c.mesh)) throw ConfigError("mesh: file not found: " + c.mesh);
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  detail::JsonReader r(j, "");
  r.get("mesh", c.mesh);
  r.get("out_dir", c.out_dir);
  r.get("seed", c.seed);
  r.get("external_detector", c.external_detector);
  if (const auto* s = r.child("scene")) {
    detail::JsonReader rs(*s, "scene");
    rs.get("image_height", c.scene.image_size.height);
    rs.get("image_width", c.scene.image_size.width);
    rs.get("fov_deg", c.scene.fov_deg);
    rs.get("sun_azimuth", c.scene.sun_azimuth);
    rs.reject_unknown();
  }
  if (const auto* d = r.child("dataset")) c.dataset = grid_from_json(*d, "dataset");
  if (const auto* e = r.child("efe")) {
    detail::JsonReader re(*e, "efe");
    re.get("epochs", c.efe.epochs);
    re.get("learning_rate", c.efe.learning_rate);
    re.get("batch_size", c.efe.batch_size);
    re.get("use_area_weight", c.efe.use_area_weight);
    std::array<int, 3> ch{c.efe.arch.ch1, c.efe.arch.ch2, c.efe.arch.ch3};
    re.get("channels", ch);
    c.efe.arch.ch1 = ch[0];
    c.efe.arch.ch2 = ch[1];
    c.efe.arch.ch3 = ch[2];
    re.reject_unknown();
  }
  if (const auto* d = r.child("detector")) {
    detail::JsonReader rd(*d, "detector");
    rd.get("epochs", c.detector.epochs);
    rd.get("learning_rate", c.detector.learning_rate);
    rd.get("batch_size", c.detector.batch_size);
    rd.get("lambda_coord", c.detector.lambda_coord);
    rd.get("lambda_noobj", c.detector.lambda_noobj);
    rd.get("ignore_iou", c.detector.ignore_iou);
    rd.get("flip_augment", c.detector.flip_augment);
    rd.get("min_ap", c.detector.min_ap);
    rd.get("grid", c.detector.arch.grid);
    rd.get("base_channels", c.detector.arch.base_channels);
    rd.reject_unknown();
  }
  if (const auto* o = r.child("optimize")) {
    detail::JsonReader ro(*o, "optimize");
    ro.get("learning_rate", c.optimize.learning_rate);
    ro.get("epochs", c.optimize.epochs);
    ro.get("batch_size", c.optimize.batch_size);
    ro.get("alpha", c.optimize.alpha);
    ro.get("beta", c.optimize.beta);
    ro.get("texture_height", c.optimize.texture_height);
    ro.get("texture_width", c.optimize.texture_width);
    std::string loss = to_string(c.optimize.loss);
    ro.get("loss", loss);
    try {
      c.optimize.loss = attack_loss_kind_from_string(loss);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("optimize.loss: ") + e.what());
    }
    ro.get("checkpoint_every_epochs", c.optimize.checkpoint_every_epochs);
    ro.reject_unknown();
  }
  r.reject_unknown();
  c.efe.arch.height = c.detector.arch.height = c.scene.image_size.height;
  c.efe.arch.width = c.detector.arch.width = c.scene.image_size.width;
  propagate_seed(c);
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// Fingerprint of everything that influences artifacts. The output
// directory is excluded so relocating a run keeps its hash.
inline std::string config_hash(const PipelineConfig& c) {
  auto j = to_json(c);
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

inline PngMetadata artifact_metadata(const PipelineConfig& c) {
  return {{"config_hash", config_hash(c)}, {"seed", std::to_string(c.seed)},
          {"format_version", std::to_string(kFormatVersion)}};
}

}  // namespace uvcamo
