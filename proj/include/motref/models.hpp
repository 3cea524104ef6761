#pragma once

// The MotionModel contract and the reference implementation: a frozen
// pyramidal Lucas-Kanade base with a small trainable iterative correction
// head. The head owns 12 scalars (a 2x6 weight matrix), so fine-tuning on a
// few hundred pseudo-labels is well-posed at desk scale.

#include <memory>
#include <string>
#include <vector>

#include "motref/core.hpp"

namespace motref {

enum class ModelMode { DenseFlow, SparseTrajectory };

struct LKConfig {
  int levels = 3;        // pyramid levels
  int radius = 3;        // window radius in px (window = (2r+1)^2)
  int iters = 2;         // inner iterations per level
  float min_eig = 2.5e-4f;  // floor on the window-averaged structure tensor
};

// f_{k+1}(p) = f_k(p) + W * phi(p, f_k) with
// phi = [I_x, I_y, I_t(f), f_x, f_y, 1]. I_x/I_y are spatial gradients of the
// channel-mean source image at p; I_t(f) is the channel-mean warp residual
// target(p+f) - source(p). W = 0 makes the head the identity.
struct HeadWeights {
  double w[2][6] = {{0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}};
};

struct Mat26 {
  double m[2][6] = {{0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}};
  Mat26& operator+=(const Mat26& o) {
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 6; ++c) m[r][c] += o.m[r][c];
    return *this;
  }
  Mat26& operator*=(double s) {
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 6; ++c) m[r][c] *= s;
    return *this;
  }
  double max_abs() const {
    double v = 0;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 6; ++c) v = std::max(v, std::abs(m[r][c]));
    return v;
  }
};

struct DenseResult {
  std::vector<FlowField> iterations;  // head_iters+1 entries, last = final
};
struct TrackResult {
  std::vector<TrajectorySet> iterations;
  // Per-step point flows of the final iteration, one entry per track. Chain
  // positions are the float cumulative sum of these steps, so storing them
  // alongside the points lets self-labelled training reproduce its own
  // outputs bit-exactly.
  std::vector<std::array<Vec2f, kTrackLen - 1>> final_steps;
};

// Pyramidal Lucas-Kanade on the channel-mean image. Pixels whose structure
// tensor is too flat keep the coarser-level flow and are masked invalid.
FlowField lk_flow(const Frame& source, const Frame& target, const LKConfig& cfg);

class MotionModel {
 public:
  virtual ~MotionModel() = default;
  virtual ModelMode mode() const = 0;
  virtual int iteration_count() const = 0;
  virtual DenseResult estimate_flow(const Frame& source, const Frame& target) const = 0;
  // Tracks run forward from frame 0 of the supplied window; callers reverse
  // the window to track backward.
  virtual TrackResult estimate_tracks(const std::vector<Frame>& frames,
                                      const std::vector<Vec2f>& queries) const = 0;

  FlowField predict_flow(const Frame& source, const Frame& target) const {
    return estimate_flow(source, target).iterations.back();
  }
  TrajectorySet predict_tracks(const std::vector<Frame>& frames,
                               const std::vector<Vec2f>& queries) const {
    return estimate_tracks(frames, queries).iterations.back();
  }
};

// Precomputed per-pair state reused by the correction head: gray planes,
// source gradients, and the frozen base flow.
struct PairCache {
  int width = 0, height = 0;
  std::vector<float> gray_src, gray_tgt;
  std::vector<float> grad_x, grad_y;
  FlowField base;
};

class RefModel : public MotionModel {
 public:
  RefModel() = default;
  RefModel(LKConfig lk, ModelMode mode, int head_iters = 4)
      : lk_(lk), mode_(mode), head_iters_(head_iters) {}

  ModelMode mode() const override { return mode_; }
  int iteration_count() const override { return head_iters_ + 1; }
  DenseResult estimate_flow(const Frame& source, const Frame& target) const override;
  TrackResult estimate_tracks(const std::vector<Frame>& frames,
                              const std::vector<Vec2f>& queries) const override;

  PairCache make_cache(const Frame& source, const Frame& target) const;
  // Per-iteration point flows at p starting from the cached base estimate
  // (head_iters+1 entries, last = final).
  std::vector<Vec2d> point_flow_iterations(const PairCache& cache, Vec2d p) const;

  const LKConfig& lk_config() const { return lk_; }
  const HeadWeights& weights() const { return weights_; }
  HeadWeights& weights() { return weights_; }
  int head_iters() const { return head_iters_; }
  void set_mode(ModelMode m) { mode_ = m; }

 private:
  LKConfig lk_;
  ModelMode mode_ = ModelMode::DenseFlow;
  int head_iters_ = 4;
  HeadWeights weights_;
};

std::array<double, 6> head_features(const PairCache& cache, Vec2d p, Vec2d f);

// One supervised unit for the head gradient. Dense labels supervise a pixel's
// displacement on a frame pair; trajectory labels supervise each step of the
// track along the labelled path (teacher forcing), which keeps the truncated
// per-iteration gradient exact and testable.
struct FlowPointLabel {
  float x = 0, y = 0;
  float du = 0, dv = 0;
};

struct TrainItem {
  // Dense mode: frames has 2 entries and flow_labels is used.
  // Sparse mode: frames has kTrackLen entries; traj_labels carries the
  // positions and traj_steps the per-step displacement targets.
  std::vector<Frame> frames;
  std::vector<FlowPointLabel> flow_labels;
  std::vector<Trajectory> traj_labels;
  std::vector<std::array<Vec2f, kTrackLen - 1>> traj_steps;
};

struct GradResult {
  Mat26 grad;
  double loss = 0.0;
  size_t label_count = 0;
};

// Analytic d(sequence loss)/dW with each iteration's input estimate treated
// as a constant (truncated backpropagation through iterations). Loss is the
// discounted L1 sequence loss, averaged over labels in the batch.
GradResult head_gradient(const RefModel& model, const std::vector<TrainItem>& batch,
                         double discount);

// Text checkpoint: 12 decimal floats plus the LK config, versioned.
void save_model(const RefModel& model, const std::string& path);
RefModel load_model(const std::string& path);

}  // namespace motref
