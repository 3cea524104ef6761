#pragma once

// Stage 2: augmented fine-tuning on pseudo-labels, plus the classic
// self-supervised objectives (color constancy, smoothness) as baselines.
// The optimizer is plain gradient descent with cosine annealing; with 12
// trainable scalars the arithmetic stays auditable.

#include <string>
#include <vector>

#include "motref/consistency.hpp"
#include "motref/core.hpp"
#include "motref/models.hpp"
#include "motref/synthgen.hpp"

namespace motref {

struct AugmentationSpec {
  double brightness = 0.0;  // max |offset| added to all channels
  double contrast_min = 1.0, contrast_max = 1.0;
  double crop_min = 1.0, crop_max = 1.0;  // crop size as a fraction of the frame
  int resize_w = 0, resize_h = 0;         // 0 = resize back to the input size
  int occluders = 0;                      // constant-color rectangles per sample
  int occ_min = 8, occ_max = 24;          // occluder side range, px
  double flip_h = 0.0, flip_v = 0.0;      // flip probabilities

  static AugmentationSpec identity() { return {}; }
  bool is_identity() const {
    return brightness == 0.0 && contrast_min == 1.0 && contrast_max == 1.0 &&
           crop_min == 1.0 && crop_max == 1.0 && resize_w == 0 && resize_h == 0 &&
           occluders == 0 && flip_h == 0.0 && flip_v == 0.0;
  }
};

struct TrainSample {
  std::vector<Frame> frames;
  std::vector<FlowPointLabel> flow_labels;
  std::vector<Trajectory> traj_labels;
  std::vector<std::array<Vec2f, kTrackLen - 1>> traj_steps;  // parallel to traj_labels
};

// Photometric ops change frames only; geometric ops transform label
// coordinates and displacements consistently; occluder rectangles are painted
// after the label transform, so labels under occluders are retained. Labels
// whose source coordinates fall outside the crop are dropped; throws when the
// input had labels and none survive.
TrainSample augment(const TrainSample& sample, const AugmentationSpec& spec,
                    RngStream& rng);

// sum_k g^(K-k) * L1(estimate_k, label) for one supervised point.
double sequence_loss(const std::vector<Vec2d>& estimates, Vec2d label, double discount);
// Batch variant: mean over labels.
double sequence_loss(const std::vector<std::vector<Vec2d>>& per_label_estimates,
                     const std::vector<Vec2d>& labels, double discount);

// Sparse: sum_{t>=1} ||X_t[y_t] - X_0[y_0]||_2 per track, mean over tracks.
double color_constancy_loss(const std::vector<Frame>& frames, const TrajectorySet& tracks);
// Dense: mean L2 reconstruction error of the backward warp.
double color_constancy_loss(const Frame& source, const Frame& target,
                            const FlowField& flow);

// Mean over interior pixels of the L2 norm of forward-difference flow
// gradients. The edge-aware variant multiplies each term by
// exp(-lambda * ||grad I||) computed on the channel-mean source image.
double smoothness_loss(const FlowField& flow, bool edge_aware = false,
                       const Frame* source = nullptr, double lambda = 10.0);

enum class Objective { PseudoLabels, Color, ColorSmooth, ColorEdgeSmooth };
enum class VideoMode { Single, Multi };

struct TrainConfig {
  int kappa = 200;      // optimizer steps
  int batch = 1;        // windows per gradient evaluation
  int accum = 8;        // gradient accumulation period
  double lr = 1e-2;     // initial step size, cosine-annealed to 0 over kappa
  double discount = 0.8;
  AugmentationSpec aug;
  VideoMode videos = VideoMode::Multi;
  std::string video_id;  // selects the clip in Single mode (default: first)
  Objective objective = Objective::PseudoLabels;
  std::uint64_t seed = 0;
  double smooth_weight = 0.1;
  double edge_lambda = 10.0;
};

double cosine_lr(int step, int kappa, double lr0);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  size_t labels_seen = 0;
};

struct FinetuneResult {
  RefModel model;
  std::vector<TrainLogRow> log;
};

// Pseudo-label fine-tuning. Deterministic given (model, labels, cfg, seed).
FinetuneResult finetune(const RefModel& model, const Corpus& clips,
                        const PseudoLabelSet& labels, const TrainConfig& cfg);

// Baseline objectives (color constancy, optionally with a smoothness term).
// The 12 head parameters are optimized with central-difference gradients on
// a regular pixel subset.
FinetuneResult finetune_objective(const RefModel& model, const Corpus& clips,
                                  const TrainConfig& cfg);

void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace motref
