#include "motref/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace motref {

namespace {

struct BilinearWeights {
  int x0, x1, y0, y1;
  float fx, fy;
};

inline BilinearWeights weights_for(int width, int height, float x, float y) {
  // Clamp to the border before interpolation.
  x = std::clamp(x, 0.0f, static_cast<float>(width - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(height - 1));
  BilinearWeights w;
  w.x0 = static_cast<int>(std::floor(x));
  w.y0 = static_cast<int>(std::floor(y));
  w.x0 = std::min(w.x0, width - 1);
  w.y0 = std::min(w.y0, height - 1);
  w.x1 = std::min(w.x0 + 1, width - 1);
  w.y1 = std::min(w.y0 + 1, height - 1);
  w.fx = x - static_cast<float>(w.x0);
  w.fy = y - static_cast<float>(w.y0);
  return w;
}

inline float lerp4(float v00, float v10, float v01, float v11, float fx, float fy) {
  const float top = v00 + fx * (v10 - v00);
  const float bot = v01 + fx * (v11 - v01);
  return top + fy * (bot - top);
}

void check_point(float x, float y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw std::invalid_argument("bilinear_sample: non-finite point");
  }
}

void check_shapes(int wa, int ha, int wb, int hb, const char* what) {
  if (wa != wb || ha != hb) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

float bilinear_sample(const std::vector<float>& plane, int width, int height,
                      float x, float y) {
  if (width <= 0 || height <= 0 || plane.empty()) {
    throw std::invalid_argument("bilinear_sample: empty plane");
  }
  check_point(x, y);
  const auto w = weights_for(width, height, x, y);
  const auto at = [&](int px, int py) {
    return plane[static_cast<size_t>(py) * width + px];
  };
  return lerp4(at(w.x0, w.y0), at(w.x1, w.y0), at(w.x0, w.y1), at(w.x1, w.y1),
               w.fx, w.fy);
}

float bilinear_sample_channel(const Frame& frame, int channel, float x, float y) {
  check_point(x, y);
  const auto w = weights_for(frame.width, frame.height, x, y);
  return lerp4(frame.at(w.x0, w.y0, channel), frame.at(w.x1, w.y0, channel),
               frame.at(w.x0, w.y1, channel), frame.at(w.x1, w.y1, channel),
               w.fx, w.fy);
}

Vec2f bilinear_sample_flow(const FlowField& flow, float x, float y) {
  check_point(x, y);
  const auto w = weights_for(flow.width, flow.height, x, y);
  const auto at = [&](const std::vector<float>& plane, int px, int py) {
    return plane[static_cast<size_t>(py) * flow.width + px];
  };
  Vec2f out;
  out.x = lerp4(at(flow.u, w.x0, w.y0), at(flow.u, w.x1, w.y0),
                at(flow.u, w.x0, w.y1), at(flow.u, w.x1, w.y1), w.fx, w.fy);
  out.y = lerp4(at(flow.v, w.x0, w.y0), at(flow.v, w.x1, w.y0),
                at(flow.v, w.x0, w.y1), at(flow.v, w.x1, w.y1), w.fx, w.fy);
  return out;
}

Frame warp_backward(const Frame& target, const FlowField& flow) {
  check_shapes(target.width, target.height, flow.width, flow.height, "warp_backward");
  Frame out(target.width, target.height, target.time_index);
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      const size_t i = flow.idx(x, y);
      const float sx = static_cast<float>(x) + flow.u[i];
      const float sy = static_cast<float>(y) + flow.v[i];
      for (int c = 0; c < Frame::channels; ++c) {
        float v = bilinear_sample_channel(target, c, sx, sy);
        out.at(x, y, c) = std::clamp(v, -0.5f, 0.5f);
      }
    }
  }
  return out;
}

FlowField align_backward_flow(const FlowField& forward, const FlowField& backward) {
  check_shapes(forward.width, forward.height, backward.width, backward.height,
               "align_backward_flow");
  FlowField out(forward.width, forward.height);
  for (int y = 0; y < forward.height; ++y) {
    for (int x = 0; x < forward.width; ++x) {
      const size_t i = forward.idx(x, y);
      const float sx = static_cast<float>(x) + forward.u[i];
      const float sy = static_cast<float>(y) + forward.v[i];
      const Vec2f b = bilinear_sample_flow(backward, sx, sy);
      out.u[i] = b.x;
      out.v[i] = b.y;
    }
  }
  return out;
}

std::vector<float> residual_map(const Frame& source, const Frame& target,
                                const FlowField& flow) {
  check_shapes(source.width, source.height, target.width, target.height, "residual_map");
  check_shapes(source.width, source.height, flow.width, flow.height, "residual_map");
  std::vector<float> out(source.pixel_count(), 0.0f);
  for (int y = 0; y < source.height; ++y) {
    for (int x = 0; x < source.width; ++x) {
      const size_t i = flow.idx(x, y);
      const float sx = static_cast<float>(x) + flow.u[i];
      const float sy = static_cast<float>(y) + flow.v[i];
      float sum = 0.0f;
      for (int c = 0; c < Frame::channels; ++c) {
        const float d = source.at(x, y, c) - bilinear_sample_channel(target, c, sx, sy);
        sum += d * d;
      }
      out[i] = sum;
    }
  }
  return out;
}

}  // namespace motref
