#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "uvcamo/detect.hpp"
#include "uvcamo/efe.hpp"
#include "uvcamo/environment.hpp"
#include "uvcamo/hash.hpp"
#include "uvcamo/image_io.hpp"
#include "uvcamo/raster.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "uvcamo-manifest";

enum class SplitTag { EfeTrain, EfeTest, Texgen, EvalSeen, EvalUnseen };

inline constexpr std::array<SplitTag, 5> kAllSplits{SplitTag::EfeTrain, SplitTag::EfeTest, SplitTag::Texgen,
                                                    SplitTag::EvalSeen, SplitTag::EvalUnseen};

inline std::string to_string(SplitTag s) {
  switch (s) {
    case SplitTag::EfeTrain: return "efe-train";
    case SplitTag::EfeTest: return "efe-test";
    case SplitTag::Texgen: return "texgen";
    case SplitTag::EvalSeen: return "eval-seen";
    case SplitTag::EvalUnseen: return "eval-unseen";
  }
  return "?";
}

inline SplitTag split_from_string(const std::string& s) {
  for (auto t : kAllSplits)
    if (to_string(t) == s) return t;
  throw ConfigError("unknown split '" + s + "' (expected efe-train, efe-test, texgen, eval-seen, eval-unseen)");
}

using Rgb = std::array<double, 3>;

// Preset paint colors for EFE targets.
inline std::vector<Rgb> efe_training_colors() {
  return {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 1, 1}, {0, 0, 0}, {0.5, 0.5, 0.5}};
}

// `count` colors drawn without replacement from the 4^3 palette with
// channel levels {0, 85, 170, 255}.
inline std::vector<Rgb> efe_test_palette(int count, std::uint64_t seed) {
  std::vector<Rgb> all;
  for (int r = 0; r < 4; ++r)
    for (int g = 0; g < 4; ++g)
      for (int b = 0; b < 4; ++b) all.push_back({r * 85 / 255.0, g * 85 / 255.0, b * 85 / 255.0});
  std::mt19937_64 rng(mix_seed(seed, 0x70a1e77e));
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::clamp(count, 1, 64));
  return all;
}

struct GridConfig {
  std::vector<double> seen_sun_altitudes{-90, -30, 30, 90};
  std::vector<double> seen_fog_densities{0, 25, 50, 90};
  std::vector<double> unseen_sun_altitudes{-60, 0, 60};
  std::vector<double> unseen_fog_densities{10, 40, 70};
  std::vector<double> azimuths{0, 45, 90, 135, 180, 225, 270, 315};
  std::vector<double> elevations{0.0, 22.5, 45.0, 67.5};
  std::vector<double> distances{5, 10, 15, 20};
  int efe_train_poses_per_weather = 4;
  int efe_test_poses_per_weather = 4;
  int efe_colors_per_record = 4;
  int efe_test_palette_size = 16;
  int texgen_poses_per_weather = 32;
  int eval_poses_per_weather = 32;
  double look_at_jitter = 0.06;  // fraction of camera distance, per horizontal axis

  bool operator==(const GridConfig&) const = default;
};

inline std::vector<WeatherParams> weather_grid(const std::vector<double>& suns, const std::vector<double>& fogs) {
  std::vector<WeatherParams> w;
  for (double s : suns)
    for (double f : fogs) w.push_back({s, f});
  return w;
}

inline void validate_grid(const GridConfig& g) {
  auto nonempty = [](const std::vector<double>& v, const char* name) {
    if (v.empty()) throw ConfigError(std::string("dataset grid: ") + name + " is empty");
  };
  nonempty(g.seen_sun_altitudes, "seen_sun_altitudes");
  nonempty(g.seen_fog_densities, "seen_fog_densities");
  nonempty(g.azimuths, "azimuths");
  nonempty(g.elevations, "elevations");
  nonempty(g.distances, "distances");
  for (const auto& w : weather_grid(g.seen_sun_altitudes, g.seen_fog_densities)) validate_weather(w);
  for (const auto& w : weather_grid(g.unseen_sun_altitudes, g.unseen_fog_densities)) validate_weather(w);
  for (double e : g.elevations)
    if (e < 0 || e > 90) throw ConfigError("dataset grid: elevation " + std::to_string(e) + " outside [0, 90]");
  for (double d : g.distances)
    if (!(d > 0)) throw ConfigError("dataset grid: distances must be positive");
  const auto seen = weather_grid(g.seen_sun_altitudes, g.seen_fog_densities);
  for (const auto& w : weather_grid(g.unseen_sun_altitudes, g.unseen_fog_densities))
    if (std::ranges::find(seen, w) != seen.end())
      throw ConfigError("dataset grid: unseen weather overlaps the seen grid");
  if (g.efe_train_poses_per_weather < 0 || g.efe_test_poses_per_weather < 0 || g.texgen_poses_per_weather < 0 ||
      g.eval_poses_per_weather < 0 || g.efe_colors_per_record < 1 || g.efe_test_palette_size < 1)
    throw ConfigError("dataset grid: negative sample counts");
  if (g.look_at_jitter < 0) throw ConfigError("dataset grid: look_at_jitter must be >= 0");
}

// Rendering settings shared by every stage that touches a dataset.
struct SceneSettings {
  ImageSize image_size{64, 64};
  double fov_deg = kDefaultFovDeg;
  double sun_azimuth = kDefaultSunAzimuth;
  bool operator==(const SceneSettings&) const = default;
};

struct ColorTarget {
  Rgb color{};
  std::string image;  // path relative to the manifest directory
};

struct ManifestRecord {
  std::string id;
  SplitTag split = SplitTag::Texgen;
  std::string image;
  std::string mask;
  CameraPose pose;
  WeatherParams weather;
  int location = 0;
  Box gt;
  std::vector<ColorTarget> targets;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  std::string config_hash;
  SceneSettings scene;
  GridConfig grid;
  std::vector<ManifestRecord> records;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  std::size_t count(SplitTag s) const {
    return static_cast<std::size_t>(std::ranges::count_if(records, [s](const auto& r) { return r.split == s; }));
  }
};

struct SceneSample {
  std::string id;
  Image i_in;
  Mask m;  // 0 on vehicle pixels, 1 on background
  Box y;
  CameraPose pose;
  WeatherParams weather;
  SplitTag split = SplitTag::Texgen;
  int location = 0;
  std::vector<std::pair<Rgb, Image>> targets;
};

// Foreground/background decomposition: x_ref = i_in * (1 - m), b = i_in * m.
struct ForegroundBackground {
  Image x_ref;
  Image b;
};

inline ForegroundBackground split_fg_bg(const Image& i_in, const Mask& m) {
  require_same_plane(i_in, m, "split_fg_bg");
  if (m.channels() != 1) throw ShapeMismatch("mask must have one channel");
  ForegroundBackground out{Image(i_in.channels(), i_in.height(), i_in.width(), 0.0),
                           Image(i_in.channels(), i_in.height(), i_in.width(), 0.0)};
  const std::size_t plane = i_in.plane();
  for (std::size_t p = 0; p < plane; ++p)
    if (m[p] > 1) throw InvariantViolation("mask is not binary at pixel " + std::to_string(p));
  for (int c = 0; c < i_in.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      if (m[p]) out.b[i] = i_in[i];
      else out.x_ref[i] = i_in[i];
    }
  return out;
}

// Tight box around the zero (vehicle) region, half-open pixel coordinates.
inline Box gt_box_from_mask(const Mask& m) {
  int x1 = m.width(), y1 = m.height(), x2 = -1, y2 = -1;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(0, y, x) == 0) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
  if (x2 < 0) throw DegenerateSample("mask has no vehicle pixels");
  return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

inline Mask vehicle_mask_from(const Mask& m) {
  Mask v(1, m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 0 : 1;
  return v;
}

// Procedural backdrop: a flat or vertical-gradient plate with mild noise,
// dimmed with the sun altitude.
inline Image background_plate(ImageSize size, double sun_altitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool gradient = u(rng) < 0.5;
  Rgb top{}, bottom{};
  for (auto& v : top) v = 0.15 + 0.7 * u(rng);
  for (auto& v : bottom) v = 0.15 + 0.7 * u(rng);
  if (!gradient) bottom = top;
  const double brightness = 0.25 + 0.65 * std::clamp(std::sin(deg2rad(sun_altitude)), 0.0, 1.0);
  Image img(3, size.height, size.width);
  for (int y = 0; y < size.height; ++y) {
    const double t = size.height > 1 ? static_cast<double>(y) / (size.height - 1) : 0.0;
    for (int x = 0; x < size.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double noise = 0.06 * (u(rng) - 0.5);
        img(c, y, x) = std::clamp(brightness * ((1 - t) * top[c] + t * bottom[c]) + noise, 0.0, 1.0);
      }
  }
  return img;
}

// Photographic stand-in: the oracle-shaded vehicle with `texture` pasted
// over the background b (already zero on vehicle pixels).
inline Image physical_scene(const Mesh& mesh, const TextureMap& texture, const CameraPose& pose,
                            const WeatherParams& weather, const Image& background, const SceneSettings& scene) {
  const auto render = rasterize(mesh, texture, pose, scene.image_size, scene.fov_deg);
  Image out = env_oracle(render, weather, scene.sun_azimuth);
  require_same_shape(out, background, "physical_scene background");
  const std::size_t plane = out.plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (!render.silhouette[p]) out[c * plane + p] = background[c * plane + p];
  return out;
}

// 8-bit round trip, so in-memory images match what a PNG reload yields.
inline Image quantize8(const Image& img) {
  Image q = img;
  for (auto& v : q) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return q;
}

// ----- manifest (de)serialization -----

inline nlohmann::json to_json(const CameraPose& p) {
  nlohmann::json j{{"azimuth", p.azimuth}, {"elevation", p.elevation}, {"distance", p.distance}};
  if (p.look_at) j["look_at"] = {p.look_at->x(), p.look_at->y(), p.look_at->z()};
  return j;
}

inline CameraPose pose_from_json(const nlohmann::json& j) {
  CameraPose p;
  p.azimuth = j.at("azimuth").get<double>();
  p.elevation = j.at("elevation").get<double>();
  p.distance = j.at("distance").get<double>();
  if (j.contains("look_at")) {
    const auto& l = j.at("look_at");
    p.look_at = Eigen::Vector3d(l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>());
  }
  return p;
}

inline nlohmann::json to_json(const GridConfig& g) {
  return {{"seen_sun_altitudes", g.seen_sun_altitudes},
          {"seen_fog_densities", g.seen_fog_densities},
          {"unseen_sun_altitudes", g.unseen_sun_altitudes},
          {"unseen_fog_densities", g.unseen_fog_densities},
          {"azimuths", g.azimuths},
          {"elevations", g.elevations},
          {"distances", g.distances},
          {"efe_train_poses_per_weather", g.efe_train_poses_per_weather},
          {"efe_test_poses_per_weather", g.efe_test_poses_per_weather},
          {"efe_colors_per_record", g.efe_colors_per_record},
          {"efe_test_palette_size", g.efe_test_palette_size},
          {"texgen_poses_per_weather", g.texgen_poses_per_weather},
          {"eval_poses_per_weather", g.eval_poses_per_weather},
          {"look_at_jitter", g.look_at_jitter}};
}

// Reads known keys, keeping defaults for absent ones; unknown keys are
// rejected so typos surface as diagnostics.
inline GridConfig grid_from_json(const nlohmann::json& j, const std::string& where = "dataset") {
  GridConfig g;
  const nlohmann::json ref = to_json(g);
  for (const auto& [k, v] : j.items())
    if (!ref.contains(k)) throw ConfigError(where + "." + k + ": unknown field");
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + "." + key + ": " + e.what());
    }
  };
  get("seen_sun_altitudes", g.seen_sun_altitudes);
  get("seen_fog_densities", g.seen_fog_densities);
  get("unseen_sun_altitudes", g.unseen_sun_altitudes);
  get("unseen_fog_densities", g.unseen_fog_densities);
  get("azimuths", g.azimuths);
  get("elevations", g.elevations);
  get("distances", g.distances);
  get("efe_train_poses_per_weather", g.efe_train_poses_per_weather);
  get("efe_test_poses_per_weather", g.efe_test_poses_per_weather);
  get("efe_colors_per_record", g.efe_colors_per_record);
  get("efe_test_palette_size", g.efe_test_palette_size);
  get("texgen_poses_per_weather", g.texgen_poses_per_weather);
  get("eval_poses_per_weather", g.eval_poses_per_weather);
  get("look_at_jitter", g.look_at_jitter);
  return g;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json j{{"id", r.id},
                     {"split", to_string(r.split)},
                     {"image", r.image},
                     {"mask", r.mask},
                     {"pose", to_json(r.pose)},
                     {"weather", {{"sun_altitude", r.weather.sun_altitude}, {"fog_density", r.weather.fog_density}}},
                     {"location", r.location},
                     {"gt", {r.gt.x1, r.gt.y1, r.gt.x2, r.gt.y2}}};
    if (!r.targets.empty()) {
      nlohmann::json t = nlohmann::json::array();
      for (const auto& c : r.targets) t.push_back({{"color", c.color}, {"image", c.image}});
      j["targets"] = t;
    }
    recs.push_back(std::move(j));
  }
  return {{"format", kManifestFormat},
          {"version", m.version},
          {"seed", m.seed},
          {"config_hash", m.config_hash},
          {"scene",
           {{"image_height", m.scene.image_size.height},
            {"image_width", m.scene.image_size.width},
            {"fov_deg", m.scene.fov_deg},
            {"sun_azimuth", m.scene.sun_azimuth}}},
          {"grid", to_json(m.grid)},
          {"records", recs}};
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json(m).dump(1) << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest file not found: " + path.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != kManifestFormat) throw InvariantViolation("not a uvcamo manifest");
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion)
      throw InvariantViolation("unsupported manifest version " + std::to_string(m.version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.value("config_hash", "");
    const auto& s = j.at("scene");
    m.scene.image_size = {s.at("image_height").get<int>(), s.at("image_width").get<int>()};
    m.scene.fov_deg = s.at("fov_deg").get<double>();
    m.scene.sun_azimuth = s.at("sun_azimuth").get<double>();
    m.grid = grid_from_json(j.at("grid"), "manifest.grid");
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.id = r.at("id").get<std::string>();
      try {
        rec.split = split_from_string(r.at("split").get<std::string>());
        rec.image = r.at("image").get<std::string>();
        rec.mask = r.at("mask").get<std::string>();
        rec.pose = pose_from_json(r.at("pose"));
        rec.weather = {r.at("weather").at("sun_altitude").get<double>(), r.at("weather").at("fog_density").get<double>()};
        rec.location = r.at("location").get<int>();
        const auto& g = r.at("gt");
        rec.gt = {g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<double>()};
        if (r.contains("targets"))
          for (const auto& t : r.at("targets"))
            rec.targets.push_back({t.at("color").get<Rgb>(), t.at("image").get<std::string>()});
      } catch (const nlohmann::json::exception& e) {
        throw InvariantViolation("manifest record " + rec.id + ": " + e.what());
      }
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("malformed manifest " + path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

// Loads (and validates) the samples of one split, or of all splits.
inline std::vector<SceneSample> load_samples(const DatasetManifest& m, std::optional<SplitTag> split = std::nullopt) {
  std::vector<SceneSample> out;
  std::set<std::tuple<int, double, double, double, double, double, int>> keys;
  for (const auto& r : m.records) {
    if (split && r.split != *split) continue;
    auto fail = [&](const std::string& what) { throw InvariantViolation("sample " + r.id + ": " + what); };
    if (!keys.insert({static_cast<int>(r.split), r.pose.azimuth, r.pose.elevation, r.pose.distance,
                      r.weather.sun_altitude, r.weather.fog_density, r.location})
             .second)
      fail("duplicate (pose, weather, location) key within split");
    SceneSample s;
    s.id = r.id;
    s.pose = r.pose;
    s.weather = r.weather;
    s.split = r.split;
    s.location = r.location;
    s.y = r.gt;
    const auto image_path = m.root / r.image, mask_path = m.root / r.mask;
    if (!std::filesystem::exists(image_path)) fail("missing image file " + image_path.string());
    if (!std::filesystem::exists(mask_path)) fail("missing mask file " + mask_path.string());
    try {
      s.i_in = read_png_rgb(image_path.string());
      s.m = read_png_mask(mask_path.string());
    } catch (const Error& e) {
      fail(e.what());
    }
    const ImageSize sz = m.scene.image_size;
    if (s.i_in.height() != sz.height || s.i_in.width() != sz.width) fail("image size differs from manifest");
    if (!s.i_in.same_plane(s.m)) fail("mask size differs from image");
    if (!s.y.valid() || s.y.x1 < 0 || s.y.y1 < 0 || s.y.x2 > sz.width || s.y.y2 > sz.height)
      fail("ground-truth box outside image bounds or unordered");
    Box tight;
    try {
      tight = gt_box_from_mask(s.m);
    } catch (const DegenerateSample&) {
      fail("mask has no vehicle pixels");
    }
    if (!(tight == s.y)) fail("ground-truth box is not the tight box of the mask");
    for (const auto& t : r.targets) {
      const auto tp = m.root / t.image;
      if (!std::filesystem::exists(tp)) fail("missing target file " + tp.string());
      s.targets.emplace_back(t.color, read_png_rgb(tp.string()));
    }
    try {
      validate_weather(s.weather);
      validate_pose(s.pose);
    } catch (const Error& e) {
      fail(e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SceneSample> load_manifest(const std::filesystem::path& path,
                                              std::optional<SplitTag> split = std::nullopt) {
  return load_samples(read_manifest(path), split);
}

// ----- generation -----

struct PoseChoice {
  double azimuth, elevation, distance;
};

// Stratified pose subset: every (elevation, distance) pair gets an equal
// share of azimuths, drawn without replacement.
inline std::vector<PoseChoice> stratified_poses(const GridConfig& g, int count, std::mt19937_64& rng) {
  std::vector<PoseChoice> all;
  const std::size_t strata = g.elevations.size() * g.distances.size();
  if (count <= 0) return all;
  if (static_cast<std::size_t>(count) >= strata * g.azimuths.size()) {
    for (double e : g.elevations)
      for (double d : g.distances)
        for (double a : g.azimuths) all.push_back({a, e, d});
    return all;
  }
  std::vector<std::pair<double, double>> cells;
  for (double e : g.elevations)
    for (double d : g.distances) cells.emplace_back(e, d);
  std::shuffle(cells.begin(), cells.end(), rng);
  const int per = count / static_cast<int>(strata), extra = count % static_cast<int>(strata);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const int n = per + (static_cast<int>(i) < extra ? 1 : 0);
    auto az = g.azimuths;
    std::shuffle(az.begin(), az.end(), rng);
    for (int k = 0; k < n && k < static_cast<int>(az.size()); ++k) all.push_back({az[k], cells[i].first, cells[i].second});
  }
  std::ranges::sort(all, [](const PoseChoice& a, const PoseChoice& b) {
    return std::tie(a.distance, a.elevation, a.azimuth) < std::tie(b.distance, b.elevation, b.azimuth);
  });
  return all;
}

// EFE poses: distances cycle through the grid so every weather covers each
// distance; azimuth and elevation are drawn from the grid.
inline std::vector<PoseChoice> efe_poses(const GridConfig& g, int count, std::mt19937_64& rng) {
  std::vector<PoseChoice> out;
  std::uniform_int_distribution<std::size_t> ai(0, g.azimuths.size() - 1), ei(0, g.elevations.size() - 1);
  for (int k = 0; k < count; ++k) {
    const double a = g.azimuths[ai(rng)];
    const double e = g.elevations[ei(rng)];
    out.push_back({a, e, g.distances[static_cast<std::size_t>(k) % g.distances.size()]});
  }
  return out;
}

struct GenerationOptions {
  std::string config_hash;
  std::uint64_t seed = 0;
};

namespace detail {

inline int split_code(SplitTag s) { return static_cast<int>(s) + 1; }

struct PendingRecord {
  SplitTag split;
  WeatherParams weather;
  PoseChoice pose;
  int location;
  std::vector<Rgb> colors;
};

}  // namespace detail

// Renders every grid point of every split, writes images, masks, EFE
// targets and the manifest under out_dir. Deterministic for a given seed.
// base_texture paints the reference vehicle in i_in, which is what the EFE
// sees as x_ref.
inline DatasetManifest generate_dataset(const Mesh& mesh, const TextureMap& base_texture, const GridConfig& grid,
                                        const SceneSettings& scene, const std::filesystem::path& out_dir,
                                        const GenerationOptions& opts) {
  validate_grid(grid);
  mesh.validate();
  namespace fs = std::filesystem;
  const auto seen = weather_grid(grid.seen_sun_altitudes, grid.seen_fog_densities);
  const auto unseen = weather_grid(grid.unseen_sun_altitudes, grid.unseen_fog_densities);

  std::vector<detail::PendingRecord> pending;
  const auto train_colors = efe_training_colors();
  const auto test_colors = efe_test_palette(grid.efe_test_palette_size, opts.seed);
  auto plan = [&](SplitTag split, const std::vector<WeatherParams>& weathers, int per_weather, bool efe) {
    std::mt19937_64 rng(mix_seed(opts.seed, 1000 + detail::split_code(split)));
    int loc = 0;
    std::size_t color_cursor = 0;
    for (const auto& w : weathers) {
      const auto poses = efe ? efe_poses(grid, per_weather, rng) : stratified_poses(grid, per_weather, rng);
      for (const auto& p : poses) {
        detail::PendingRecord r{split, w, p, loc++, {}};
        if (efe) {
          const auto& palette = split == SplitTag::EfeTrain ? train_colors : test_colors;
          for (int k = 0; k < grid.efe_colors_per_record; ++k) r.colors.push_back(palette[color_cursor++ % palette.size()]);
        }
        pending.push_back(std::move(r));
      }
    }
  };
  plan(SplitTag::EfeTrain, seen, grid.efe_train_poses_per_weather, true);
  plan(SplitTag::EfeTest, seen, grid.efe_test_poses_per_weather, true);
  plan(SplitTag::Texgen, seen, grid.texgen_poses_per_weather, false);
  plan(SplitTag::EvalSeen, seen, grid.eval_poses_per_weather, false);
  plan(SplitTag::EvalUnseen, unseen, grid.eval_poses_per_weather, false);
  if (pending.empty()) throw ConfigError("dataset grid has zero points");

  for (const char* sub : {"images", "masks", "targets"}) fs::create_directories(out_dir / sub);
  PngMetadata meta{{"config_hash", opts.config_hash},
                   {"seed", std::to_string(opts.seed)},
                   {"format_version", std::to_string(kManifestVersion)}};

  DatasetManifest man;
  man.seed = opts.seed;
  man.config_hash = opts.config_hash;
  man.scene = scene;
  man.grid = grid;
  man.root = out_dir;
  const Vec3 centroid = mesh.centroid();
  std::map<SplitTag, int> index;

  for (const auto& pr : pending) {
    const int idx = index[pr.split]++;
    std::mt19937_64 rng(mix_seed(mix_seed(opts.seed, detail::split_code(pr.split)), static_cast<std::uint64_t>(idx)));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CameraPose pose{pr.pose.azimuth, pr.pose.elevation, pr.pose.distance, std::nullopt};
    const double jitter = grid.look_at_jitter * pr.pose.distance;
    const double jx = jitter * u(rng), jy = jitter * u(rng);
    pose.look_at = Vec3(centroid.x() + jx, centroid.y() + jy, centroid.z());

    const auto fr = rasterize_fragments(mesh, pose, scene.image_size, scene.fov_deg);
    if (fr.covered_count() == 0) continue;  // vehicle out of frame
    const Mask sil = silhouette_of(fr);
    Mask m(1, sil.height(), sil.width());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = sil[i] ? 0 : 1;

    Image bg = background_plate(scene.image_size, pr.weather.sun_altitude, rng);
    const std::size_t plane = bg.plane();
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        if (!m[p]) bg[c * plane + p] = 0.0;
    const Image i_in = physical_scene(mesh, base_texture, pose, pr.weather, bg, scene);

    ManifestRecord rec;
    char name[64];
    std::snprintf(name, sizeof name, "%s-%05d", to_string(pr.split).c_str(), idx);
    rec.id = name;
    rec.split = pr.split;
    rec.image = "images/" + rec.id + ".png";
    rec.mask = "masks/" + rec.id + ".png";
    rec.pose = pose;
    rec.weather = pr.weather;
    rec.location = pr.location;
    rec.gt = gt_box_from_mask(m);
    write_png_rgb((out_dir / rec.image).string(), i_in, meta);
    write_png_mask((out_dir / rec.mask).string(), m, meta);
    for (std::size_t k = 0; k < pr.colors.size(); ++k) {
      const auto& col = pr.colors[k];
      const auto render = rasterize(mesh, TextureMap::solid(4, 4, col[0], col[1], col[2]), pose, scene.image_size,
                                    scene.fov_deg);
      const Image tg = env_oracle(render, pr.weather, scene.sun_azimuth);
      ColorTarget ct{col, "targets/" + rec.id + "-c" + std::to_string(k) + ".png"};
      write_png_rgb((out_dir / ct.image).string(), tg, meta);
      rec.targets.push_back(ct);
    }
    man.records.push_back(std::move(rec));
  }
  write_manifest(man, out_dir / "manifest.json");
  return man;
}

// ----- training/evaluation views of samples -----

// EFE record: reference-paint crop, solid-color renders and their
// oracle targets.
inline EfeExample make_efe_example(const Mesh& mesh, const SceneSample& s, const SceneSettings& scene) {
  if (s.targets.empty()) throw InvariantViolation("sample " + s.id + " carries no EFE targets");
  const auto fg = split_fg_bg(s.i_in, s.m);
  EfeExample ex;
  ex.x_ref = fg.x_ref;
  ex.vehicle = vehicle_mask_from(s.m);
  ex.distance = s.pose.distance;
  if (ex.vehicle_pixels() == 0) throw DegenerateSample("sample " + s.id + " has no vehicle pixels");
  const auto fr = rasterize_fragments(mesh, s.pose, scene.image_size, scene.fov_deg);
  for (const auto& [color, tg] : s.targets) {
    ex.x_nr.push_back(shade(fr, TextureMap::solid(2, 2, color[0], color[1], color[2])));
    ex.target.push_back(tg);
  }
  return ex;
}

inline std::vector<EfeExample> make_efe_examples(const Mesh& mesh, std::span<const SceneSample> samples,
                                                 const SceneSettings& scene) {
  std::vector<EfeExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(make_efe_example(mesh, s, scene));
  return out;
}

// The scene a camera would capture if the vehicle were painted with
// `texture`: oracle shading of the textured render over the stored
// background, rounded to 8 bits like the stored photos.
inline Image textured_scene(const Mesh& mesh, const TextureMap& texture, const SceneSample& s,
                            const SceneSettings& scene) {
  const auto fg = split_fg_bg(s.i_in, s.m);
  return quantize8(physical_scene(mesh, texture, s.pose, s.weather, fg.b, scene));
}

inline std::vector<DetectorExample> make_detector_examples(const Mesh& mesh, const TextureMap& texture,
                                                           std::span<const SceneSample> samples,
                                                           const SceneSettings& scene) {
  std::vector<DetectorExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({textured_scene(mesh, texture, s, scene), s.y});
  return out;
}

}  // namespace uvcamo
