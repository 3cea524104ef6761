#include <algorithm>
#include <cmath>

#include "motref/io.hpp"

namespace motref {

namespace {

constexpr double kPi = 3.14159265358979323846;

void hsv_to_rgb(double h_deg, double s, double v, double rgb[3]) {
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

}  // namespace

ImageU8 flow_to_color(const FlowField& flow, double max_magnitude) {
  double max_mag = max_magnitude;
  if (max_mag <= 0.0) {
    for (size_t i = 0; i < flow.pixel_count(); ++i) {
      const double m = std::hypot(flow.u[i], flow.v[i]);
      max_mag = std::max(max_mag, m);
    }
    if (max_mag <= 0.0) max_mag = 1.0;  // all-zero field renders white
  }
  ImageU8 image(flow.width, flow.height);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const size_t i = flow.idx(x, y);
      const double mag = std::hypot(flow.u[i], flow.v[i]);
      double angle = std::atan2(flow.v[i], flow.u[i]);
      if (angle < 0.0) angle += 2.0 * kPi;
      const double hue = angle * 180.0 / kPi;
      const double sat = std::clamp(mag / max_mag, 0.0, 1.0);
      double rgb[3];
      hsv_to_rgb(hue, sat, 1.0, rgb);
      for (int c = 0; c < 3; ++c) {
        image.at(x, y, c) = static_cast<std::uint8_t>(
            std::clamp(static_cast<long>(std::lround(rgb[c] * 255.0)), 0L, 255L));
      }
    }
  }
  return image;
}

}  // namespace motref
