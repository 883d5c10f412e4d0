#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "uvcamo/detect.hpp"
#include "uvcamo/image_io.hpp"

namespace uvcamo {

// Runs a third-party detector through files. For each image the adapter
// writes <work>/frame.png, executes `<command> <work>/frame.png
// <work>/dets.json` and reads back a JSON array of
//   {"box": [x1, y1, x2, y2], "objectness": o, "car": c}
// in pixel coordinates. "objectness" defaults to 1 when absent.
class ExternalDetector {
 public:
  ExternalDetector(std::string command, std::filesystem::path work_dir)
      : command_(std::move(command)), work_(std::move(work_dir)) {
    if (command_.empty()) throw ConfigError("external_detector: empty command");
    std::filesystem::create_directories(work_);
  }

  DetectionSet operator()(const Image& image) const {
    const auto in = work_ / "frame.png", out = work_ / "dets.json";
    std::filesystem::remove(out);
    write_png_rgb(in.string(), image);
    const std::string cmd = command_ + " '" + in.string() + "' '" + out.string() + "'";
    if (const int rc = std::system(cmd.c_str()); rc != 0)
      throw IoError("external detector exited with status " + std::to_string(rc) + ": " + cmd);
    return parse_detections(out);
  }

  static DetectionSet parse_detections(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("external detector produced no output file " + path.string());
    DetectionSet d;
    try {
      const auto j = nlohmann::json::parse(f);
      for (const auto& r : j) {
        const auto& b = r.at("box");
        const Box box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        if (!box.valid()) throw InvariantViolation("external detector returned an unordered box");
        const double car = r.at("car").get<double>();
        const double obj = r.value("objectness", 1.0);
        if (car < 0 || car > 1 || obj < 0 || obj > 1)
          throw InvariantViolation("external detector scores must lie in [0, 1]");
        d.push_back(box, obj, {car, 1.0 - car});
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvariantViolation("malformed external detector output " + path.string() + ": " + e.what());
    }
    return d;
  }

 private:
  std::string command_;
  std::filesystem::path work_;
};

}  // namespace uvcamo
