#pragma once

// Synthetic clip generator with exact ground truth. Scenes are layered:
// a static textured background plus affine-moving textured sprites, with
// later sprites in the list occluding earlier ones. Colors are constructed
// by pulling the last frame backwards through the exact ground-truth flow,
// so the color-transport property holds at machine precision even for
// rotating and scaling sprites. Occluded pixels are rendered fresh from
// their own layer's texture, so transport genuinely breaks there.

#include <optional>
#include <string>
#include <vector>

#include "motref/core.hpp"

namespace motref {

// Band-limited value noise. base_scale is the lattice spacing in pixels
// (larger = smoother); octaves add halved-scale detail. mod_scale/mod_depth
// optionally modulate local contrast so parts of the field go near-flat,
// which starves trackers of gradients there.
struct NoiseParams {
  float base_scale = 16.0f;
  int octaves = 2;
  float amplitude = 0.4f;
  float mod_scale = 0.0f;
  float mod_depth = 0.0f;
};

struct SpriteSpec {
  int tex_width = 32;
  int tex_height = 32;
  NoiseParams texture;
  Vec2f start{0, 0};          // canvas position of the patch center at t=0
  Vec2f velocity{0, 0};       // px/frame
  float rotation_deg = 0.0f;  // deg/frame about the patch center
  float scale_rate = 1.0f;    // multiplicative size change per frame
};

struct SceneSpec {
  int width = 192;
  int height = 128;
  NoiseParams background;
  std::vector<SpriteSpec> sprites;
  float drift_per_frame = 0.0f;  // global brightness offset added per frame
  std::uint64_t seed = 0;
  std::string label = "scene";
  int track_grid_stride = 16;  // query spacing for ground-truth tracks
};

struct GroundTruth {
  // flows[t] maps frame t to frame t+1 (7 fields for an 8-frame clip).
  std::vector<FlowField> flows;
  // occlusion[t](p) is true when the transport of p from t to t+1 is
  // invalid: the point leaves the canvas or gets covered by a nearer sprite.
  std::vector<Mask> occlusion;
  // Tracks chained from the ground-truth flows, queried at t=0.
  TrajectorySet tracks;
};

struct SequenceData {
  std::vector<Frame> frames;  // kTrackLen frames
  GroundTruth gt;
};

// Deterministic given (spec.seed, spec.label). Throws std::invalid_argument
// if a sprite leaves the canvas entirely at any frame or the drift breaks
// the color range.
SequenceData generate_sequence(const SceneSpec& spec);

enum class ShiftKind { BrightnessScale, Blur, Contrast };
ShiftKind parse_shift_kind(const std::string& name);  // throws on unknown kind

// Photometric-only transform; ground-truth motion is unchanged.
// Safe ranges: brightness-scale (0, 1]; blur sigma [0, 3]; contrast (0, 2]
// (contrast output is clamped back into color range).
std::vector<Frame> domain_shift(const std::vector<Frame>& frames, ShiftKind kind,
                                float magnitude);

// A clip as the rest of the pipeline consumes it.
struct Clip {
  std::string id;
  std::vector<Frame> frames;
  std::optional<GroundTruth> gt;
};
using Corpus = std::vector<Clip>;

// The default 12-clip corpus: 4 clips per motion regime (slow <= 2 px/frame,
// medium <= 6, fast <= 12), half the clips carry illumination drift.
// Clips with index % 4 == 3 are the conventional held-out split.
std::vector<SceneSpec> default_corpus_specs(std::uint64_t seed, int width = 192,
                                            int height = 128, int clips = 12);
Corpus generate_corpus(const std::vector<SceneSpec>& specs);
bool is_holdout_clip(int index);

}  // namespace motref
