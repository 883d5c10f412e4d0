#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uvcamo/ap.hpp"
#include "uvcamo/dataset.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

inline constexpr double kEvalNmsIou = 0.5;
inline constexpr double kEvalConfidenceFloor = 0.05;

struct SampleEval {
  std::string id;
  CameraPose pose;
  WeatherParams weather;
  DetectionSet dets;  // after NMS
  Box gt;
  bool matched = false;  // some kept detection reaches IoU 0.5 with gt
};

struct EvalResult {
  std::string label;
  std::string split;
  std::vector<SampleEval> samples;

  double ap() const {
    std::vector<ImageDetections> all;
    all.reserve(samples.size());
    for (const auto& s : samples) all.push_back({s.dets, s.gt});
    return ap_at_05(all);
  }
};

using DetectFn = std::function<DetectionSet(const Image&)>;

inline DetectFn toy_detect_fn(const ToyDetector& det) {
  return [&det](const Image& img) { return det.forward(img); };
}

inline SampleEval evaluate_image(const DetectFn& detect, const Image& image, const SceneSample& s) {
  SampleEval e{s.id, s.pose, s.weather, nms(detect(image), kEvalNmsIou, kEvalConfidenceFloor), s.y, false};
  e.matched = std::ranges::any_of(e.dets.boxes, [&](const Box& b) { return iou(b, s.y) >= kMatchIou; });
  return e;
}

// Paints the vehicle with `texture`, re-renders every sample through the
// environment oracle and runs the detector.
inline EvalResult evaluate(const DetectFn& detect, const Mesh& mesh, const TextureMap& texture,
                           std::span<const SceneSample> samples, const SceneSettings& scene, std::string label,
                           std::string split) {
  EvalResult r{std::move(label), std::move(split), {}};
  r.samples.reserve(samples.size());
  for (const auto& s : samples) r.samples.push_back(evaluate_image(detect, textured_scene(mesh, texture, s, scene), s));
  return r;
}

enum class EvalAxis { Elevation, Azimuth, Distance, FogDensity, SunAltitude };

inline constexpr std::array<EvalAxis, 5> kAllAxes{EvalAxis::Elevation, EvalAxis::Azimuth, EvalAxis::Distance,
                                                  EvalAxis::FogDensity, EvalAxis::SunAltitude};

inline std::string to_string(EvalAxis a) {
  switch (a) {
    case EvalAxis::Elevation: return "elevation";
    case EvalAxis::Azimuth: return "azimuth";
    case EvalAxis::Distance: return "distance";
    case EvalAxis::FogDensity: return "fog_density";
    case EvalAxis::SunAltitude: return "sun_altitude";
  }
  return "?";
}

inline EvalAxis axis_from_string(const std::string& s) {
  for (auto a : kAllAxes)
    if (to_string(a) == s) return a;
  throw ConfigError("unknown axis '" + s + "' (expected elevation, azimuth, distance, fog_density, sun_altitude)");
}

inline double axis_value(const SampleEval& s, EvalAxis a) {
  switch (a) {
    case EvalAxis::Elevation: return s.pose.elevation;
    case EvalAxis::Azimuth: return normalize_azimuth(s.pose.azimuth);
    case EvalAxis::Distance: return s.pose.distance;
    case EvalAxis::FogDensity: return s.weather.fog_density;
    case EvalAxis::SunAltitude: return s.weather.sun_altitude;
  }
  return 0.0;
}

struct BucketPoint {
  double value = 0.0;
  double ap = 0.0;
  std::size_t count = 0;
};

// One AP per distinct axis value, ascending.
inline std::vector<BucketPoint> bucketed_ap(const EvalResult& r, EvalAxis axis) {
  std::map<double, std::vector<ImageDetections>> buckets;
  for (const auto& s : r.samples) buckets[axis_value(s, axis)].push_back({s.dets, s.gt});
  std::vector<BucketPoint> out;
  for (const auto& [v, items] : buckets) out.push_back({v, ap_at_05(items), items.size()});
  return out;
}

inline std::vector<BucketPoint> bucketed_ap(const EvalResult& r, const std::string& axis) {
  return bucketed_ap(r, axis_from_string(axis));
}

// ----- persistence -----

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples) {
    nlohmann::json dets = nlohmann::json::array();
    for (std::size_t i = 0; i < s.dets.size(); ++i) {
      const auto& b = s.dets.boxes[i];
      dets.push_back({{"box", {b.x1, b.y1, b.x2, b.y2}},
                      {"objectness", s.dets.objectness[i]},
                      {"class_conf", s.dets.class_conf[i]}});
    }
    samples.push_back({{"id", s.id},
                       {"pose", to_json(s.pose)},
                       {"weather", {{"sun_altitude", s.weather.sun_altitude}, {"fog_density", s.weather.fog_density}}},
                       {"gt", {s.gt.x1, s.gt.y1, s.gt.x2, s.gt.y2}},
                       {"matched", s.matched},
                       {"detections", dets}});
  }
  return {{"label", r.label}, {"split", r.split}, {"ap50", r.ap()}, {"samples", samples}};
}

inline EvalResult eval_result_from_json(const nlohmann::json& j) {
  EvalResult r;
  try {
    r.label = j.at("label").get<std::string>();
    r.split = j.at("split").get<std::string>();
    for (const auto& js : j.at("samples")) {
      SampleEval s;
      s.id = js.at("id").get<std::string>();
      s.pose = pose_from_json(js.at("pose"));
      s.weather = {js.at("weather").at("sun_altitude").get<double>(), js.at("weather").at("fog_density").get<double>()};
      const auto& g = js.at("gt");
      s.gt = {g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<double>()};
      s.matched = js.at("matched").get<bool>();
      for (const auto& d : js.at("detections")) {
        const auto& b = d.at("box");
        s.dets.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
                         d.at("objectness").get<double>(), d.at("class_conf").get<std::array<double, kNumClasses>>());
      }
      r.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation(std::string("malformed evaluation record: ") + e.what());
  }
  return r;
}

inline void save_eval_result(const EvalResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(r).dump(1) << '\n';
}

inline EvalResult load_eval_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("evaluation file not found: " + path.string());
  try {
    return eval_result_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("malformed evaluation file " + path.string() + ": " + e.what());
  }
}

// ----- report -----

// Results of one texture on both weather splits.
struct TextureEvaluation {
  std::string label;
  EvalResult seen;
  EvalResult unseen;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

inline void require_same_samples(const EvalResult& a, const EvalResult& b) {
  bool same = a.samples.size() == b.samples.size();
  for (std::size_t i = 0; same && i < a.samples.size(); ++i) same = a.samples[i].id == b.samples[i].id;
  if (!same)
    throw InvariantViolation("evaluation '" + b.label + "' (" + b.split + ") covers different samples than '" +
                             a.label + "'");
}

inline const std::array<std::array<double, 3>, 6>& plot_palette() {
  static const std::array<std::array<double, 3>, 6> p{{{0.15, 0.35, 0.75},
                                                       {0.85, 0.45, 0.10},
                                                       {0.75, 0.10, 0.15},
                                                       {0.20, 0.60, 0.25},
                                                       {0.50, 0.30, 0.65},
                                                       {0.40, 0.40, 0.40}}};
  return p;
}

inline void plot_put(Image& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int k = 0; k < 3; ++k) img(k, y, x) = c[k];
}

inline void plot_line(Image& img, int x0, int y0, int x1, int y1, const std::array<double, 3>& c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    plot_put(img, x0, y0, c);
    plot_put(img, x0, y0 + 1, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Line chart of AP (y in [0,1]) over bucket index. No text rendering; the
// CSV next to it carries the numbers.
inline Image plot_curves(const std::vector<std::vector<BucketPoint>>& series) {
  const int W = 320, H = 200, L = 30, R = 10, T = 10, B = 25;
  Image img(3, H, W, 1.0);
  const std::array<double, 3> axis{0, 0, 0}, grid{0.85, 0.85, 0.85};
  for (int q = 0; q <= 4; ++q) {
    const int y = T + (H - T - B) * q / 4;
    plot_line(img, L, y, W - R, y, grid);
  }
  plot_line(img, L, T, L, H - B, axis);
  plot_line(img, L, H - B, W - R, H - B, axis);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& pts = series[s];
    const auto& col = plot_palette()[s % plot_palette().size()];
    const int n = static_cast<int>(pts.size());
    auto px = [&](int i) { return n > 1 ? L + (W - L - R) * i / (n - 1) : (L + W - R) / 2; };
    auto py = [&](double ap) { return T + static_cast<int>(std::lround((1.0 - ap) * (H - T - B))); };
    for (int i = 0; i < n; ++i) {
      if (i > 0) plot_line(img, px(i - 1), py(pts[i - 1].ap), px(i), py(pts[i].ap), col);
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) plot_put(img, px(i) + dx, py(pts[i].ap) + dy, col);
    }
  }
  for (int i = 0; i < static_cast<int>(series.empty() ? 0 : series[0].size()); ++i) {
    const int n = static_cast<int>(series[0].size());
    const int x = n > 1 ? L + (W - L - R) * i / (n - 1) : (L + W - R) / 2;
    plot_line(img, x, H - B, x, H - B + 4, axis);
  }
  return img;
}

}  // namespace detail

struct ReportFiles {
  std::filesystem::path summary;
  std::vector<std::filesystem::path> curves;
  std::vector<std::filesystem::path> plots;
};

// summary.json: AP table (one row per texture, seen/unseen columns) plus
// per-axis curves; curves/<split>_<axis>.csv and plots/<split>_<axis>.png.
inline ReportFiles emit_report(std::span<const TextureEvaluation> evals, const std::filesystem::path& out_dir,
                               const PngMetadata& meta = {}) {
  if (evals.empty()) throw InvariantViolation("report needs at least one evaluated texture");
  for (const auto& e : evals) {
    detail::require_same_samples(evals[0].seen, e.seen);
    detail::require_same_samples(evals[0].unseen, e.unseen);
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "curves");
  fs::create_directories(out_dir / "plots");
  ReportFiles files;

  nlohmann::json table = nlohmann::json::array();
  nlohmann::json curves = nlohmann::json::object();
  for (const auto& e : evals) {
    nlohmann::json row{{"texture", e.label}};
    row["seen"] = e.seen.samples.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.seen.ap());
    row["unseen"] = e.unseen.samples.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.unseen.ap());
    table.push_back(row);
  }
  for (const char* split : {"seen", "unseen"}) {
    const bool is_seen = std::string(split) == "seen";
    if ((is_seen ? evals[0].seen : evals[0].unseen).samples.empty()) continue;
    for (auto axis : kAllAxes) {
      std::vector<std::vector<BucketPoint>> series;
      for (const auto& e : evals) series.push_back(bucketed_ap(is_seen ? e.seen : e.unseen, axis));
      const std::string stem = std::string(split) + "_" + to_string(axis);
      std::ostringstream csv;
      csv << to_string(axis) << ",count";
      for (const auto& e : evals) csv << ',' << e.label;
      csv << '\n';
      nlohmann::json jc = nlohmann::json::array();
      for (std::size_t i = 0; i < series[0].size(); ++i) {
        csv << detail::fmt(series[0][i].value) << ',' << series[0][i].count;
        nlohmann::json point{{"value", series[0][i].value}, {"count", series[0][i].count}};
        for (std::size_t s = 0; s < series.size(); ++s) {
          csv << ',' << detail::fmt(series[s][i].ap);
          point[evals[s].label] = series[s][i].ap;
        }
        csv << '\n';
        jc.push_back(point);
      }
      curves[split][to_string(axis)] = jc;
      const auto csv_path = out_dir / "curves" / (stem + ".csv");
      std::ofstream(csv_path) << csv.str();
      files.curves.push_back(csv_path);
      const auto png_path = out_dir / "plots" / (stem + ".png");
      write_png_rgb(png_path.string(), detail::plot_curves(series), meta);
      files.plots.push_back(png_path);
    }
  }
  nlohmann::json summary{{"ap50", table},
                         {"curves", curves},
                         {"samples", {{"seen", evals[0].seen.samples.size()}, {"unseen", evals[0].unseen.samples.size()}}},
                         {"nms_iou", kEvalNmsIou},
                         {"confidence_floor", kEvalConfidenceFloor}};
  for (const auto& [k, v] : meta) summary["meta"][k] = v;
  files.summary = out_dir / "summary.json";
  std::ofstream out(files.summary);
  if (!out) throw IoError("cannot write " + files.summary.string());
  out << summary.dump(1) << '\n';
  return files;
}

}  // namespace uvcamo
