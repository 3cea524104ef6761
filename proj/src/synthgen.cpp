#include "motref/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "motref/sampling.hpp"

namespace motref {

namespace {

constexpr double kPi = 3.14159265358979323846;

inline float smoothstep(float t) { return t * t * (3.0f - 2.0f * t); }

// Single-channel value noise on a coarse lattice.
class NoiseLattice {
 public:
  NoiseLattice(int width, int height, float scale, RngStream& rng) : scale_(scale) {
    nx_ = static_cast<int>(std::ceil(width / scale)) + 2;
    ny_ = static_cast<int>(std::ceil(height / scale)) + 2;
    values_.resize(static_cast<size_t>(nx_) * ny_);
    for (auto& v : values_) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }

  float sample(float x, float y) const {
    const float gx = x / scale_;
    const float gy = y / scale_;
    int i = static_cast<int>(std::floor(gx));
    int j = static_cast<int>(std::floor(gy));
    i = std::clamp(i, 0, nx_ - 2);
    j = std::clamp(j, 0, ny_ - 2);
    const float fx = smoothstep(std::clamp(gx - i, 0.0f, 1.0f));
    const float fy = smoothstep(std::clamp(gy - j, 0.0f, 1.0f));
    const float v00 = at(i, j), v10 = at(i + 1, j);
    const float v01 = at(i, j + 1), v11 = at(i + 1, j + 1);
    const float top = v00 + fx * (v10 - v00);
    const float bot = v01 + fx * (v11 - v01);
    return top + fy * (bot - top);
  }

 private:
  float at(int i, int j) const { return values_[static_cast<size_t>(j) * nx_ + i]; }
  int nx_, ny_;
  float scale_;
  std::vector<float> values_;
};

// 3-channel noise texture rendered to a dense grid.
Frame render_noise(int width, int height, const NoiseParams& p, RngStream rng) {
  Frame out(width, height);
  std::vector<std::vector<NoiseLattice>> octaves(Frame::channels);
  for (int c = 0; c < Frame::channels; ++c) {
    float scale = p.base_scale;
    for (int o = 0; o < p.octaves; ++o) {
      auto sub = rng.derive("oct" + std::to_string(c) + "_" + std::to_string(o));
      octaves[c].emplace_back(width, height, scale, sub);
      scale = std::max(2.0f, scale * 0.5f);
    }
  }
  std::optional<NoiseLattice> mod;
  if (p.mod_scale > 0.0f && p.mod_depth > 0.0f) {
    auto sub = rng.derive("mod");
    mod.emplace(width, height, p.mod_scale, sub);
  }
  float total_amp = 0.0f;
  {
    float a = 1.0f;
    for (int o = 0; o < p.octaves; ++o, a *= 0.5f) total_amp += a;
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      float weight = 1.0f;
      if (mod) {
        const float m = 0.5f + 0.5f * mod->sample(static_cast<float>(x), static_cast<float>(y));
        weight = 1.0f - p.mod_depth * m;
      }
      for (int c = 0; c < Frame::channels; ++c) {
        float sum = 0.0f;
        float a = 1.0f;
        for (int o = 0; o < p.octaves; ++o, a *= 0.5f) {
          sum += a * octaves[c][o].sample(static_cast<float>(x), static_cast<float>(y));
        }
        out.at(x, y, c) = p.amplitude * weight * sum / total_amp;
      }
    }
  }
  return out;
}

struct SpritePose {
  Vec2d center;
  double cos_a, sin_a;
  double scale;
};

class Scene {
 public:
  explicit Scene(const SceneSpec& spec) : spec_(spec) {
    RngStream rng(spec.seed, spec.label);
    background_ = render_noise(spec.width, spec.height, spec.background, rng.derive("bg"));
    for (size_t k = 0; k < spec.sprites.size(); ++k) {
      const auto& s = spec.sprites[k];
      textures_.push_back(render_noise(s.tex_width, s.tex_height, s.texture,
                                       rng.derive("sprite" + std::to_string(k))));
    }
    for (int t = 0; t < kTrackLen; ++t) {
      std::vector<SpritePose> poses;
      for (const auto& s : spec.sprites) {
        SpritePose p;
        p.center = {s.start.x + t * static_cast<double>(s.velocity.x),
                    s.start.y + t * static_cast<double>(s.velocity.y)};
        const double ang = t * s.rotation_deg * kPi / 180.0;
        p.cos_a = std::cos(ang);
        p.sin_a = std::sin(ang);
        p.scale = std::pow(static_cast<double>(s.scale_rate), t);
        poses.push_back(p);
      }
      poses_.push_back(std::move(poses));
    }
  }

  int width() const { return spec_.width; }
  int height() const { return spec_.height; }
  int sprite_count() const { return static_cast<int>(spec_.sprites.size()); }

  Vec2d tex_center(int k) const {
    const auto& s = spec_.sprites[k];
    return {(s.tex_width - 1) * 0.5, (s.tex_height - 1) * 0.5};
  }

  // texture coords -> canvas at time t
  Vec2d to_canvas(int k, int t, Vec2d q) const {
    const auto& p = poses_[t][k];
    const Vec2d c = tex_center(k);
    const double dx = q.x - c.x, dy = q.y - c.y;
    return {p.center.x + p.scale * (p.cos_a * dx - p.sin_a * dy),
            p.center.y + p.scale * (p.sin_a * dx + p.cos_a * dy)};
  }

  // canvas -> texture coords at time t
  Vec2d to_texture(int k, int t, Vec2d pt) const {
    const auto& p = poses_[t][k];
    const Vec2d c = tex_center(k);
    const double dx = (pt.x - p.center.x) / p.scale;
    const double dy = (pt.y - p.center.y) / p.scale;
    return {c.x + p.cos_a * dx + p.sin_a * dy, c.y - p.sin_a * dx + p.cos_a * dy};
  }

  bool on_sprite(int k, int t, Vec2d pt) const {
    const auto& s = spec_.sprites[k];
    const Vec2d q = to_texture(k, t, pt);
    return q.x >= 0.0 && q.x <= s.tex_width - 1 && q.y >= 0.0 && q.y <= s.tex_height - 1;
  }

  // Topmost layer covering pt (later sprites are nearer); -1 = background.
  int owner(int t, Vec2d pt) const {
    for (int k = sprite_count() - 1; k >= 0; --k) {
      if (on_sprite(k, t, pt)) return k;
    }
    return -1;
  }

  // Motion of the layer that owns pt at time t, from t to t+1.
  Vec2d flow_at(int t, Vec2d pt) const {
    const int k = owner(t, pt);
    if (k < 0) return {0.0, 0.0};  // background is static
    const Vec2d q = to_texture(k, t, pt);
    const Vec2d next = to_canvas(k, t + 1, q);
    return {next.x - pt.x, next.y - pt.y};
  }

  bool in_canvas(Vec2d pt) const {
    return pt.x >= 0.0 && pt.x <= spec_.width - 1 && pt.y >= 0.0 &&
           pt.y <= spec_.height - 1;
  }

  bool transport_occluded(int t, Vec2d pt) const {
    const int k = owner(t, pt);
    const Vec2d w = flow_at(t, pt);
    const Vec2d target{pt.x + w.x, pt.y + w.y};
    if (!in_canvas(target)) return true;
    return owner(t + 1, target) != k;
  }

  // Color of the scene at time t ignoring transport (used for the last frame
  // and for occluded pixels where transport is undefined).
  void fresh_color(int t, int x, int y, float* rgb) const {
    const Vec2d pt{static_cast<double>(x), static_cast<double>(y)};
    const int k = owner(t, pt);
    if (k < 0) {
      for (int c = 0; c < Frame::channels; ++c) rgb[c] = background_.at(x, y, c);
      return;
    }
    const Vec2d q = to_texture(k, t, pt);
    for (int c = 0; c < Frame::channels; ++c) {
      rgb[c] = bilinear_sample_channel(textures_[k], c, static_cast<float>(q.x),
                                       static_cast<float>(q.y));
    }
  }

  void check_sprites_on_canvas() const {
    for (int t = 0; t < kTrackLen; ++t) {
      for (int k = 0; k < sprite_count(); ++k) {
        const auto& s = spec_.sprites[k];
        bool any_inside = false;
        for (int j = 0; j < 3 && !any_inside; ++j) {
          for (int i = 0; i < 3 && !any_inside; ++i) {
            const Vec2d q{i * 0.5 * (s.tex_width - 1), j * 0.5 * (s.tex_height - 1)};
            if (in_canvas(to_canvas(k, t, q))) any_inside = true;
          }
        }
        if (!any_inside) {
          throw std::invalid_argument("generate_sequence: sprite " + std::to_string(k) +
                                      " fully off canvas at frame " + std::to_string(t));
        }
      }
    }
  }

 private:
  SceneSpec spec_;
  Frame background_;
  std::vector<Frame> textures_;
  std::vector<std::vector<SpritePose>> poses_;
};

}  // namespace

SequenceData generate_sequence(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8) {
    throw std::invalid_argument("generate_sequence: canvas too small");
  }
  const float max_tex = std::max(
      spec.background.amplitude,
      [&] {
        float m = 0.0f;
        for (const auto& s : spec.sprites) m = std::max(m, s.texture.amplitude);
        return m;
      }());
  if (max_tex + (kTrackLen - 1) * std::abs(spec.drift_per_frame) > 0.5f + 1e-6f) {
    throw std::invalid_argument("generate_sequence: drift breaks color range");
  }

  Scene scene(spec);
  scene.check_sprites_on_canvas();

  SequenceData out;
  const int w = spec.width, h = spec.height;

  // Exact analytic flow and transport-occlusion per frame pair.
  for (int t = 0; t + 1 < kTrackLen; ++t) {
    FlowField flow(w, h);
    Mask occ(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Vec2d pt{static_cast<double>(x), static_cast<double>(y)};
        const Vec2d f = scene.flow_at(t, pt);
        flow.u[flow.idx(x, y)] = static_cast<float>(f.x);
        flow.v[flow.idx(x, y)] = static_cast<float>(f.y);
        occ.at(x, y) = scene.transport_occluded(t, pt) ? 1 : 0;
      }
    }
    out.gt.flows.push_back(std::move(flow));
    out.gt.occlusion.push_back(std::move(occ));
  }

  // Colors: render the last frame, then pull it backwards through the flow.
  // Non-occluded pixels transport exactly; occluded pixels re-render fresh.
  std::vector<Frame> frames(kTrackLen);
  frames[kTrackLen - 1] = Frame(w, h, kTrackLen - 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float rgb[3];
      scene.fresh_color(kTrackLen - 1, x, y, rgb);
      for (int c = 0; c < Frame::channels; ++c) frames[kTrackLen - 1].at(x, y, c) = rgb[c];
    }
  }
  for (int t = kTrackLen - 2; t >= 0; --t) {
    frames[t] = Frame(w, h, t);
    const FlowField& flow = out.gt.flows[t];
    const Mask& occ = out.gt.occlusion[t];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (occ.at(x, y)) {
          float rgb[3];
          scene.fresh_color(t, x, y, rgb);
          for (int c = 0; c < Frame::channels; ++c) frames[t].at(x, y, c) = rgb[c];
        } else {
          const size_t i = flow.idx(x, y);
          const float sx = static_cast<float>(x) + flow.u[i];
          const float sy = static_cast<float>(y) + flow.v[i];
          for (int c = 0; c < Frame::channels; ++c) {
            frames[t].at(x, y, c) = bilinear_sample_channel(frames[t + 1], c, sx, sy);
          }
        }
      }
    }
  }

  if (spec.drift_per_frame != 0.0f) {
    for (int t = 0; t < kTrackLen; ++t) {
      const float offset = spec.drift_per_frame * t;
      for (auto& v : frames[t].data) v = std::clamp(v + offset, -0.5f, 0.5f);
    }
  }
  out.frames = std::move(frames);

  // Ground-truth tracks: grid queries plus sprite-interior queries, chained
  // through the flow fields.
  std::vector<Vec2f> queries;
  const int stride = std::max(2, spec.track_grid_stride);
  for (int y = stride / 2; y < h; y += stride) {
    for (int x = stride / 2; x < w; x += stride) {
      queries.push_back({static_cast<float>(x), static_cast<float>(y)});
    }
  }
  {
    Scene& sc = scene;
    for (int k = 0; k < sc.sprite_count(); ++k) {
      for (int j = 1; j <= 2; ++j) {
        for (int i = 1; i <= 2; ++i) {
          const Vec2d q{i / 3.0 * (spec.sprites[k].tex_width - 1),
                        j / 3.0 * (spec.sprites[k].tex_height - 1)};
          const Vec2d pt = sc.to_canvas(k, 0, q);
          if (sc.in_canvas(pt) && sc.owner(0, pt) == k) {
            queries.push_back({static_cast<float>(pt.x), static_cast<float>(pt.y)});
          }
        }
      }
    }
  }
  for (const Vec2f& q : queries) {
    Trajectory traj;
    traj.query_index = 0;
    const int layer = scene.owner(0, {q.x, q.y});
    Vec2f pos = q;
    bool valid = true;
    for (int t = 0; t < kTrackLen; ++t) {
      traj.points[t] = pos;
      const bool inside = scene.in_canvas({pos.x, pos.y});
      valid = valid && inside;
      traj.validity[t] = valid ? 1 : 0;
      traj.visibility[t] =
          (inside && scene.owner(t, {pos.x, pos.y}) == layer) ? 1 : 0;
      if (t + 1 < kTrackLen) {
        const Vec2f f = bilinear_sample_flow(out.gt.flows[t], pos.x, pos.y);
        pos = pos + f;
      }
    }
    out.gt.tracks.trajectories.push_back(traj);
  }
  return out;
}

ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "brightness-scale") return ShiftKind::BrightnessScale;
  if (name == "blur") return ShiftKind::Blur;
  if (name == "contrast") return ShiftKind::Contrast;
  throw std::invalid_argument("domain_shift: unknown kind '" + name + "'");
}

std::vector<Frame> domain_shift(const std::vector<Frame>& frames, ShiftKind kind,
                                float magnitude) {
  std::vector<Frame> out;
  out.reserve(frames.size());
  switch (kind) {
    case ShiftKind::BrightnessScale: {
      if (!(magnitude > 0.0f && magnitude <= 1.0f)) {
        throw std::invalid_argument("brightness-scale magnitude must be in (0, 1]");
      }
      for (const auto& f : frames) {
        Frame g = f;
        for (auto& v : g.data) v *= magnitude;
        out.push_back(std::move(g));
      }
      break;
    }
    case ShiftKind::Blur: {
      if (!(magnitude >= 0.0f && magnitude <= 3.0f)) {
        throw std::invalid_argument("blur sigma must be in [0, 3]");
      }
      if (magnitude == 0.0f) return frames;
      const float sigma = magnitude;
      const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
      std::vector<float> kernel(2 * radius + 1);
      float sum = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
        sum += kernel[i + radius];
      }
      for (auto& k : kernel) k /= sum;
      for (const auto& f : frames) {
        Frame tmp(f.width, f.height, f.time_index);
        Frame g(f.width, f.height, f.time_index);
        for (int y = 0; y < f.height; ++y) {
          for (int x = 0; x < f.width; ++x) {
            for (int c = 0; c < Frame::channels; ++c) {
              float acc = 0.0f;
              for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, f.width - 1);
                acc += kernel[i + radius] * f.at(xx, y, c);
              }
              tmp.at(x, y, c) = acc;
            }
          }
        }
        for (int y = 0; y < f.height; ++y) {
          for (int x = 0; x < f.width; ++x) {
            for (int c = 0; c < Frame::channels; ++c) {
              float acc = 0.0f;
              for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, f.height - 1);
                acc += kernel[i + radius] * tmp.at(x, yy, c);
              }
              g.at(x, y, c) = acc;
            }
          }
        }
        out.push_back(std::move(g));
      }
      break;
    }
    case ShiftKind::Contrast: {
      if (!(magnitude > 0.0f && magnitude <= 2.0f)) {
        throw std::invalid_argument("contrast magnitude must be in (0, 2]");
      }
      for (const auto& f : frames) {
        Frame g = f;
        for (int c = 0; c < Frame::channels; ++c) {
          double mean = 0.0;
          for (size_t i = 0; i < f.pixel_count(); ++i) mean += f.data[i * Frame::channels + c];
          mean /= static_cast<double>(f.pixel_count());
          for (size_t i = 0; i < f.pixel_count(); ++i) {
            float& v = g.data[i * Frame::channels + c];
            v = std::clamp(static_cast<float>(mean + magnitude * (v - mean)), -0.5f, 0.5f);
          }
        }
        out.push_back(std::move(g));
      }
      break;
    }
  }
  return out;
}

std::vector<SceneSpec> default_corpus_specs(std::uint64_t seed, int width, int height,
                                            int clips) {
  std::vector<SceneSpec> specs;
  RngStream rng(seed, "corpus");
  for (int idx = 0; idx < clips; ++idx) {
    auto crng = rng.derive("clip" + std::to_string(idx));
    SceneSpec spec;
    spec.width = width;
    spec.height = height;
    spec.seed = seed;
    spec.label = "corpus/clip" + std::to_string(idx);
    spec.background = {20.0f, 2, 0.34f, 48.0f, 0.6f};
    // Regimes: 0..3 slow, 4..7 medium, 8..11 fast.
    const int regime = (idx * 3) / std::max(3, clips);
    const float max_speed = regime == 0 ? 2.0f : (regime == 1 ? 6.0f : 12.0f);
    spec.drift_per_frame = (idx % 2 == 1)
                               ? static_cast<float>(crng.uniform(0.008, 0.016)) *
                                     (idx % 4 == 1 ? 1.0f : -1.0f)
                               : 0.0f;
    const int sprite_count = 2;
    for (int k = 0; k < sprite_count; ++k) {
      SpriteSpec s;
      const int size = 26 + static_cast<int>(crng.uniform_int(18));
      s.tex_width = size;
      s.tex_height = size;
      s.texture = {7.0f, 2, 0.42f, 0.0f, 0.0f};
      const double ang = crng.uniform(0.0, 2.0 * kPi);
      const double speed = crng.uniform(0.55, 1.0) * max_speed;
      s.velocity = {static_cast<float>(speed * std::cos(ang)),
                    static_cast<float>(speed * std::sin(ang))};
      s.rotation_deg = static_cast<float>(crng.uniform(-1.5, 1.5));
      s.scale_rate = static_cast<float>(crng.uniform(0.995, 1.005));
      // Keep both the start and end positions comfortably on canvas.
      const double margin = 0.35 * size + 2.0;
      const double tx = (kTrackLen - 1) * s.velocity.x;
      const double ty = (kTrackLen - 1) * s.velocity.y;
      const double x_lo = margin + std::max(0.0, -tx);
      const double x_hi = width - 1 - margin - std::max(0.0, tx);
      const double y_lo = margin + std::max(0.0, -ty);
      const double y_hi = height - 1 - margin - std::max(0.0, ty);
      if (x_lo >= x_hi || y_lo >= y_hi) {
        // Motion too large for the canvas; damp it and retry placement.
        s.velocity = 0.5f * s.velocity;
      }
      const double sx_lo = margin + std::max(0.0, -(kTrackLen - 1.0) * s.velocity.x);
      const double sx_hi = width - 1 - margin - std::max(0.0, (kTrackLen - 1.0) * s.velocity.x);
      const double sy_lo = margin + std::max(0.0, -(kTrackLen - 1.0) * s.velocity.y);
      const double sy_hi = height - 1 - margin - std::max(0.0, (kTrackLen - 1.0) * s.velocity.y);
      s.start = {static_cast<float>(crng.uniform(sx_lo, std::max(sx_lo + 1.0, sx_hi))),
                 static_cast<float>(crng.uniform(sy_lo, std::max(sy_lo + 1.0, sy_hi)))};
      spec.sprites.push_back(s);
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

Corpus generate_corpus(const std::vector<SceneSpec>& specs) {
  Corpus corpus;
  for (size_t i = 0; i < specs.size(); ++i) {
    auto data = generate_sequence(specs[i]);
    Clip clip;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "clip_%02zu", i);
    clip.id = buf;
    clip.frames = std::move(data.frames);
    clip.gt = std::move(data.gt);
    clip.gt->tracks.clip_id = clip.id;
    corpus.push_back(std::move(clip));
  }
  return corpus;
}

bool is_holdout_clip(int index) { return index % 4 == 3; }

}  // namespace motref
