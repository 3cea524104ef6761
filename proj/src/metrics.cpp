#include "motref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace motref {

namespace {

constexpr double kDeltaThresholds[5] = {1.0, 2.0, 4.0, 8.0, 16.0};

double point_error(const Trajectory& pred, const Trajectory& gt, int t) {
  const double dx = pred.points[t].x - gt.points[t].x;
  const double dy = pred.points[t].y - gt.points[t].y;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

double epe(const FlowField& pred, const FlowField& gt, const Mask* valid) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw std::invalid_argument("epe: shape mismatch");
  }
  if (valid && (valid->width != pred.width || valid->height != pred.height)) {
    throw std::invalid_argument("epe: mask shape mismatch");
  }
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < pred.pixel_count(); ++i) {
    if (valid && !valid->data[i]) continue;
    const double dx = pred.u[i] - gt.u[i];
    const double dy = pred.v[i] - gt.v[i];
    sum += std::sqrt(dx * dx + dy * dy);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("epe: zero valid entries");
  return sum / static_cast<double>(count);
}

double epe(const std::vector<Vec2f>& pred, const std::vector<Vec2f>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("epe: size mismatch");
  if (pred.empty()) throw std::invalid_argument("epe: zero valid entries");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i].x - gt[i].x;
    const double dy = pred[i].y - gt[i].y;
    sum += std::sqrt(dx * dx + dy * dy);
  }
  return sum / static_cast<double>(pred.size());
}

double ate(const Trajectory& pred, const Trajectory& gt, const AteOptions& opt) {
  double sum = 0.0;
  int valid = 0;
  for (int t = 0; t < kTrackLen; ++t) {
    if (!gt.validity[t]) continue;
    sum += point_error(pred, gt, t);
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("ate: no valid timesteps");
  return sum / (opt.literal_eighth ? static_cast<double>(kTrackLen)
                                   : static_cast<double>(valid));
}

double mte(std::vector<double> track_errors) {
  if (track_errors.empty()) throw std::invalid_argument("mte: empty input");
  std::sort(track_errors.begin(), track_errors.end());
  const size_t n = track_errors.size();
  if (n % 2 == 1) return track_errors[n / 2];
  return 0.5 * (track_errors[n / 2 - 1] + track_errors[n / 2]);
}

double delta_accuracy(const Trajectory& pred, const Trajectory& gt) {
  int valid = 0;
  int within[5] = {0, 0, 0, 0, 0};
  for (int t = 0; t < kTrackLen; ++t) {
    if (!gt.validity[t]) continue;
    ++valid;
    const double err = point_error(pred, gt, t);
    for (int k = 0; k < 5; ++k) {
      if (err < kDeltaThresholds[k]) ++within[k];
    }
  }
  if (valid == 0) throw std::invalid_argument("delta_accuracy: no valid timesteps");
  double acc = 0.0;
  for (int k = 0; k < 5; ++k) acc += static_cast<double>(within[k]) / valid;
  return 100.0 * acc / 5.0;
}

double survival_rate(const Trajectory& pred, const Trajectory& gt,
                     double fall_off_threshold) {
  for (int t = 0; t < kTrackLen; ++t) {
    if (!gt.validity[t]) continue;
    if (point_error(pred, gt, t) > fall_off_threshold) {
      return static_cast<double>(t) / kTrackLen;  // (t-1)/8 with 1-indexed t
    }
  }
  return 1.0;
}

std::optional<double> jaccard_at(const TrajectorySet& pred, const TrajectorySet& gt,
                                 double threshold) {
  if (pred.size() != gt.size()) throw std::invalid_argument("jaccard_at: size mismatch");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    for (int t = 0; t < kTrackLen; ++t) {
      const bool pv = pred.trajectories[i].visibility[t] != 0;
      const bool gv = gt.trajectories[i].visibility[t] != 0;
      if (!pv && !gv) continue;
      if (pv && gv && point_error(pred.trajectories[i], gt.trajectories[i], t) < threshold) {
        ++tp;
      } else if (pv) {
        ++fp;  // predicted visible but occluded in gt or out of threshold
      } else {
        ++fn;  // gt visible but predicted occluded
      }
    }
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

std::optional<double> average_jaccard(const TrajectorySet& pred, const TrajectorySet& gt) {
  double sum = 0.0;
  for (double thr : kDeltaThresholds) {
    const auto j = jaccard_at(pred, gt, thr);
    if (!j) return std::nullopt;
    sum += *j;
  }
  return 100.0 * sum / 5.0;
}

TrackReport eval_tracks(const TrajectorySet& pred, const TrajectorySet& gt,
                        const AteOptions& opt, double fall_off_threshold) {
  if (pred.size() != gt.size()) throw std::invalid_argument("eval_tracks: size mismatch");
  TrackReport report;
  report.samples = pred.size();
  std::vector<double> errors;
  double sum_all = 0.0, sum_vis = 0.0, sum_occ = 0.0;
  size_t n_vis = 0, n_occ = 0;
  double delta_sum = 0.0, survival_sum = 0.0;
  size_t usable = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const auto& g = gt.trajectories[i];
    bool any_valid = false;
    bool fully_visible = true;
    for (int t = 0; t < kTrackLen; ++t) {
      any_valid = any_valid || g.validity[t] != 0;
      if (g.validity[t] && !g.visibility[t]) fully_visible = false;
    }
    if (!any_valid) continue;
    const double err = ate(pred.trajectories[i], g, opt);
    errors.push_back(err);
    sum_all += err;
    if (fully_visible) {
      sum_vis += err;
      ++n_vis;
    } else {
      sum_occ += err;
      ++n_occ;
    }
    delta_sum += delta_accuracy(pred.trajectories[i], g);
    survival_sum += survival_rate(pred.trajectories[i], g, fall_off_threshold);
    ++usable;
  }
  if (usable > 0) {
    report.ate_all = sum_all / usable;
    report.mte_px = mte(errors);
    report.delta_pct = delta_sum / usable;
    report.survival_pct = 100.0 * survival_sum / usable;
  }
  if (n_vis > 0) report.ate_vis = sum_vis / n_vis;
  if (n_occ > 0) report.ate_occ = sum_occ / n_occ;
  report.aj_pct = average_jaccard(pred, gt);
  return report;
}

}  // namespace motref
