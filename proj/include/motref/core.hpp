#pragma once

// Core domain types shared by every stage: frames, flow fields, fixed-length
// trajectories, and the seeded random streams that make runs reproducible.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace motref {

// Tracks are always 8 frames long. The filter thresholds and the metric
// definitions are calibrated against this window length, so it is a fixed
// constant rather than a runtime parameter.
inline constexpr int kTrackLen = 8;

struct Vec2f {
  float x = 0.0f;
  float y = 0.0f;
};

struct Vec2d {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2f operator+(Vec2f a, Vec2f b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2f operator-(Vec2f a, Vec2f b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2f operator*(float s, Vec2f a) { return {s * a.x, s * a.y}; }
inline Vec2d operator+(Vec2d a, Vec2d b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2d operator-(Vec2d a, Vec2d b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2d operator*(double s, Vec2d a) { return {s * a.x, s * a.y}; }

// RGB frame with colors normalized to [-0.5, 0.5]. Data is row-major,
// channel-interleaved. 8-bit inputs map through x/255 - 0.5.
struct Frame {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<float> data;
  int time_index = 0;

  Frame() = default;
  Frame(int w, int h, int t = 0)
      : width(w), height(h), data(static_cast<size_t>(w) * h * channels, 0.0f), time_index(t) {}

  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Dense per-pixel displacement map. u/v are planar; valid is optional
// (empty means every pixel is valid).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h),
        u(static_cast<size_t>(w) * h, 0.0f),
        v(static_cast<size_t>(w) * h, 0.0f) {}

  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  bool has_valid_mask() const { return !valid.empty(); }
  bool is_valid(int x, int y) const { return valid.empty() || valid[idx(x, y)] != 0; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Per-pixel boolean grid (acceptance masks, occlusion masks).
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, bool fill = false)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t count_set() const {
    size_t n = 0;
    for (auto b : data) n += (b != 0);
    return n;
  }
};

// Fixed-length point track with per-timestep validity and visibility.
// query_index marks the timestep that holds the query point.
struct Trajectory {
  std::array<Vec2f, kTrackLen> points{};
  std::array<std::uint8_t, kTrackLen> validity{};
  std::array<std::uint8_t, kTrackLen> visibility{};
  int query_index = 0;
};

struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  std::string clip_id;

  size_t size() const { return trajectories.size(); }
};

// Deterministic random stream: identical (seed, label) pairs yield identical
// draw sequences. Uniform/normal draws are derived from the raw engine output
// by fixed arithmetic, so sequences are stable across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  // Box-Muller, no cached spare.
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Child stream for a sub-task; keeps draw order independent of sibling use.
  RngStream derive(const std::string& sublabel) const;

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

 private:
  std::uint64_t seed_ = 0;
  std::string label_;
  std::uint64_t state_[4] = {0, 0, 0, 0};
};

// 64-bit FNV-1a. Used for config hashes and artifact digests.
std::uint64_t fnv1a64(const void* bytes, size_t n, std::uint64_t basis = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t basis = 0xcbf29ce484222325ull);

// Frame invariant check. Violations are data, not faults: the list is empty
// iff the frame is well-formed.
std::vector<std::string> validate_frame(const Frame& frame);

// Window starts for 8-frame chunks sampled at the given temporal stride.
struct ChunkPlan {
  std::vector<int> starts;
  bool too_short = false;  // frame_count < 8
};
ChunkPlan clip_to_chunks(int frame_count, int stride);

}  // namespace motref
