#pragma once

// Stage 1: turn raw forward/backward model outputs into a sparse, reliable
// pseudo-label set via the cycle-consistency and color-constancy filters,
// then re-balance it by motion magnitude.

#include <string>
#include <vector>

#include "motref/core.hpp"
#include "motref/models.hpp"
#include "motref/synthgen.hpp"

namespace motref {

enum class FilterKind { Both, CycleOnly, ColorOnly };

struct FilterConfig {
  double alpha = 0.005;  // cycle tolerance slope
  double beta = 0.25;    // cycle tolerance offset, px^2
  double gamma = 0.1;    // color residual threshold, squared color units
  double tau = 2.5;      // trajectory drift threshold, px^2
  int stride = 2;        // temporal stride between processed windows
  bool rebalance = true;
  int bins = 8;
  FilterKind kind = FilterKind::Both;
  int query_stride = 12;  // trajectory query grid spacing, px

  std::string canonical_string() const;
  std::uint64_t hash() const;
};

struct FlowLabelRecord {
  std::string clip_id;
  int window = 0;  // frame-pair start index
  int x = 0, y = 0;
  float du = 0, dv = 0;
};

struct TrajLabelRecord {
  std::string clip_id;
  int window = 0;  // chunk start index
  Trajectory traj;
  // The model's own per-step flows; traj.points is their float cumulative
  // sum from the query, which makes self-training on these labels an exact
  // fixed point.
  std::array<Vec2f, kTrackLen - 1> steps{};
};

struct ClipFilterStats {
  std::string clip_id;
  size_t accepted = 0;
  size_t total = 0;
  bool densified = false;
};

struct PseudoLabelSet {
  ModelMode mode = ModelMode::DenseFlow;
  std::vector<FlowLabelRecord> flow_labels;
  std::vector<TrajLabelRecord> traj_labels;
  std::uint64_t config_hash = 0;
  size_t accepted = 0;
  size_t total = 0;
  std::vector<ClipFilterStats> per_clip;

  double acceptance_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(total);
  }
  size_t label_count() const {
    return mode == ModelMode::DenseFlow ? flow_labels.size() : traj_labels.size();
  }
};

// mask(p) = ||w + w_hat||^2 < alpha * (||w||^2 + ||w_hat||^2 + beta), with
// w_hat the backward flow warped into alignment with the forward flow.
// The inequality is strict: boundary values reject.
Mask flow_cycle_mask(const FlowField& forward, const FlowField& backward,
                     double alpha, double beta);

// mask(p) = residual_map(p) < gamma (strict).
Mask color_mask(const Frame& source, const Frame& target, const FlowField& flow,
                double gamma);

// max_t ||v_t - v_hat_t||^2 < tau (strict). backward_flipped must already be
// time-flipped onto the forward timeline.
bool trajectory_cycle_mask(const Trajectory& forward, const Trajectory& backward_flipped,
                           double tau);

// Runs the model forward and on time-reversed input per stride-window and
// keeps the estimates that pass the filters. Deterministic given the rng
// stream (which only feeds the optional rebalance step).
PseudoLabelSet generate_pseudolabels(const Corpus& clips, const MotionModel& model,
                                     const FilterConfig& config, RngStream& rng);

// Histogram labels by motion magnitude into equal-width bins and subsample
// every bin above the (lower) median occupied-bin count down to that median.
PseudoLabelSet rebalance(const PseudoLabelSet& labels, int bins, RngStream& rng);

// Line-oriented text format: a header with the config hash, then one record
// per line: clip,window,t,x,y,dx0,dy0,...
void save_pseudolabels(const PseudoLabelSet& labels, const std::string& path);
PseudoLabelSet load_pseudolabels(const std::string& path);

}  // namespace motref
