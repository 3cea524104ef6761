#pragma once

// Evaluation suite: EPE, ATE (with validity mask), MTE, delta accuracy,
// survival rate, and Average Jaccard, plus dataset-level aggregation.

#include <optional>
#include <string>
#include <vector>

#include "motref/core.hpp"

namespace motref {

// Mean ||f - f_hat||_2 over valid entries. Throws when nothing is valid.
double epe(const FlowField& pred, const FlowField& gt, const Mask* valid = nullptr);
double epe(const std::vector<Vec2f>& pred, const std::vector<Vec2f>& gt);

struct AteOptions {
  // Default normalizes by the number of valid timesteps. The literal mode
  // divides by the fixed window length 8, which silently down-weights tracks
  // with invalid frames; it is kept for parity with that convention.
  bool literal_eighth = false;
};

// Per-track error: sum_t ||y_t - y_hat_t|| * psi_t / normalizer, with psi
// taken from the ground-truth track. Throws when no timestep is valid.
double ate(const Trajectory& pred, const Trajectory& gt, const AteOptions& opt = {});

// Median; even counts take the mean of the two middle values.
double mte(std::vector<double> track_errors);

// Fraction of valid timesteps with error < t, averaged over thresholds
// {1,2,4,8,16}, in percent.
double delta_accuracy(const Trajectory& pred, const Trajectory& gt);

// (t-1)/8 for the first 1-indexed timestep whose error exceeds the fall-off
// threshold; 1.0 when the track never falls off.
double survival_rate(const Trajectory& pred, const Trajectory& gt,
                     double fall_off_threshold = 16.0);

// Jaccard over matched points/timesteps at one threshold. Every point-step
// lands in exactly one bucket: TP (both visible, close), FP (predicted
// visible but wrong or ground truth occluded), FN (ground truth visible but
// prediction occluded). Absent when no point is visible on either side.
std::optional<double> jaccard_at(const TrajectorySet& pred, const TrajectorySet& gt,
                                 double threshold);
// Mean over thresholds {1,2,4,8,16}, in percent.
std::optional<double> average_jaccard(const TrajectorySet& pred, const TrajectorySet& gt);

// Dataset-level aggregation for track evaluation.
struct TrackReport {
  std::optional<double> ate_all;
  std::optional<double> ate_vis;   // tracks fully visible in the ground truth
  std::optional<double> ate_occ;   // tracks that undergo occlusion
  std::optional<double> mte_px;
  std::optional<double> delta_pct;
  std::optional<double> survival_pct;
  std::optional<double> aj_pct;
  size_t samples = 0;
};

TrackReport eval_tracks(const TrajectorySet& pred, const TrajectorySet& gt,
                        const AteOptions& opt = {}, double fall_off_threshold = 16.0);

}  // namespace motref
