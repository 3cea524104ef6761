#pragma once

// File formats: Middlebury .flo (the only binary format), PNG images, and
// the flow colorwheel rendering.

#include <string>
#include <vector>

#include "motref/core.hpp"

namespace motref {

// Middlebury format: 4-byte magic "PIEH", little-endian int32 width and
// height, then row-major interleaved (u,v) float32. Write-then-read is
// bit-exact. Throws on bad magic, truncated payload, or dimensions <= 0.
void write_flo(const FlowField& flow, const std::string& path);
FlowField read_flo(const std::string& path);

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 channels, row-major

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}
  std::uint8_t& at(int x, int y, int c) {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

void write_png(const ImageU8& image, const std::string& path);
ImageU8 read_png(const std::string& path);

// 8-bit <-> normalized color conversion: u8 value x maps to x/255 - 0.5.
Frame frame_from_u8(const ImageU8& image, int time_index = 0);
ImageU8 frame_to_u8(const Frame& frame);

// Masks persist as grayscale PNG (0 = clear, 255 = set).
void write_mask_png(const Mask& mask, const std::string& path);
Mask read_mask_png(const std::string& path);

// Colorwheel flow rendering: hue from atan2(v, u), saturation from
// magnitude / max_magnitude, value 1. Zero flow maps to white.
// max_magnitude <= 0 selects the field's own maximum.
ImageU8 flow_to_color(const FlowField& flow, double max_magnitude = 0.0);

// Atomic text write (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

}  // namespace motref
