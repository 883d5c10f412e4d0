#pragma once

#include <algorithm>
#include <cmath>

#include "uvcamo/camera.hpp"
#include "uvcamo/raster.hpp"

namespace uvcamo {

struct WeatherParams {
  double sun_altitude = 90.0;  // degrees, [-90, 90]
  double fog_density = 0.0;    // [0, 100]

  bool operator==(const WeatherParams&) const = default;
  auto operator<=>(const WeatherParams&) const = default;
};

inline void validate_weather(const WeatherParams& w) {
  if (!(w.sun_altitude >= -90.0 && w.sun_altitude <= 90.0))
    throw InvariantViolation("sun altitude must lie in [-90, 90]");
  if (!(w.fog_density >= 0.0 && w.fog_density <= 100.0))
    throw InvariantViolation("fog density must lie in [0, 100]");
}

inline constexpr double kDefaultSunAzimuth = 45.0;
inline constexpr double kFogGray = 0.7;
inline constexpr double kFogPerMeterPerDensity = 0.004;

inline double ambient_term(double sun_altitude_deg) {
  return 0.15 + 0.35 * std::clamp(std::sin(deg2rad(sun_altitude_deg)), 0.0, 1.0);
}

inline double fog_transmittance(double depth, double fog_density) {
  return std::exp(-depth * fog_density * kFogPerMeterPerDensity);
}

// Analytic stand-in for a photo-realistic renderer: Lambertian sun shading
// followed by exponential fog, applied inside the silhouette only.
inline Image env_oracle(const RenderOutput& render, const WeatherParams& weather,
                        double sun_azimuth = kDefaultSunAzimuth) {
  validate_weather(weather);
  const Fragments& fr = render.fragments;
  const int H = render.color.height(), W = render.color.width();
  const Vec3 sun = camera_offset(sun_azimuth, weather.sun_altitude);
  const double ambient = ambient_term(weather.sun_altitude);
  Image out(3, H, W, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!render.silhouette(0, y, x)) continue;
      const Vec3 n(fr.normal(0, y, x), fr.normal(1, y, x), fr.normal(2, y, x));
      const double shade = ambient + (1.0 - ambient) * std::max(0.0, n.dot(sun));
      const double t = fog_transmittance(render.depth(0, y, x), weather.fog_density);
      for (int c = 0; c < 3; ++c) out(c, y, x) = render.color(c, y, x) * shade * t + kFogGray * (1.0 - t);
    }
  return out;
}

}  // namespace uvcamo
