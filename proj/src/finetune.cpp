#include "motref/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "motref/sampling.hpp"

namespace motref {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct GeomMap {
  int tw = 0, th = 0;      // output size
  int ox = 0, oy = 0;      // crop offset
  int cw = 0, ch = 0;      // crop size
  double sx = 1.0, sy = 1.0;
  bool flip_h = false, flip_v = false;

  bool in_crop(float x, float y) const {
    return x >= ox && x <= ox + cw - 1 && y >= oy && y <= oy + ch - 1;
  }
  Vec2f map_point(Vec2f p) const {
    double x = (p.x - ox + 0.5) * sx - 0.5;
    double y = (p.y - oy + 0.5) * sy - 0.5;
    if (flip_h) x = (tw - 1) - x;
    if (flip_v) y = (th - 1) - y;
    return {static_cast<float>(x), static_cast<float>(y)};
  }
  Vec2f map_disp(Vec2f d) const {
    double x = d.x * sx;
    double y = d.y * sy;
    if (flip_h) x = -x;
    if (flip_v) y = -y;
    return {static_cast<float>(x), static_cast<float>(y)};
  }
};

struct Occluder {
  int x, y, w, h;
  float color;
};

std::optional<TrainSample> augment_impl(const TrainSample& sample,
                                        const AugmentationSpec& spec, RngStream& rng) {
  if (sample.frames.empty()) throw std::invalid_argument("augment: no frames");
  const int w = sample.frames[0].width, h = sample.frames[0].height;

  GeomMap g;
  const double frac = rng.uniform(spec.crop_min, spec.crop_max);
  g.cw = std::max(8, static_cast<int>(std::lround(frac * w)));
  g.ch = std::max(8, static_cast<int>(std::lround(frac * h)));
  g.cw = std::min(g.cw, w);
  g.ch = std::min(g.ch, h);
  g.ox = static_cast<int>(rng.uniform_int(w - g.cw + 1));
  g.oy = static_cast<int>(rng.uniform_int(h - g.ch + 1));
  g.tw = spec.resize_w > 0 ? spec.resize_w : w;
  g.th = spec.resize_h > 0 ? spec.resize_h : h;
  g.sx = static_cast<double>(g.tw) / g.cw;
  g.sy = static_cast<double>(g.th) / g.ch;
  g.flip_h = rng.uniform() < spec.flip_h;
  g.flip_v = rng.uniform() < spec.flip_v;
  const double brightness = rng.uniform(-spec.brightness, spec.brightness);
  const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
  std::vector<Occluder> occluders;
  for (int i = 0; i < spec.occluders; ++i) {
    Occluder o;
    o.w = spec.occ_min + static_cast<int>(rng.uniform_int(
                             std::max(1, spec.occ_max - spec.occ_min + 1)));
    o.h = spec.occ_min + static_cast<int>(rng.uniform_int(
                             std::max(1, spec.occ_max - spec.occ_min + 1)));
    o.x = static_cast<int>(rng.uniform_int(std::max(1, g.tw - o.w + 1)));
    o.y = static_cast<int>(rng.uniform_int(std::max(1, g.th - o.h + 1)));
    o.color = static_cast<float>(rng.uniform(-0.45, 0.45));
    occluders.push_back(o);
  }

  TrainSample out;
  out.frames.reserve(sample.frames.size());
  for (size_t fi = 0; fi < sample.frames.size(); ++fi) {
    const Frame& src = sample.frames[fi];
    Frame dst(g.tw, g.th, src.time_index);
    for (int y = 0; y < g.th; ++y) {
      for (int x = 0; x < g.tw; ++x) {
        const int xs = g.flip_h ? (g.tw - 1 - x) : x;
        const int ys = g.flip_v ? (g.th - 1 - y) : y;
        const float srcx = static_cast<float>((xs + 0.5) / g.sx - 0.5 + g.ox);
        const float srcy = static_cast<float>((ys + 0.5) / g.sy - 0.5 + g.oy);
        for (int c = 0; c < Frame::channels; ++c) {
          const float v = bilinear_sample_channel(src, c, srcx, srcy);
          dst.at(x, y, c) = std::clamp(
              static_cast<float>(contrast * v + brightness), -0.5f, 0.5f);
        }
      }
    }
    // Occluders are painted on every frame after the first, after the label
    // transform, so supervision under them is retained.
    if (fi > 0) {
      for (const auto& o : occluders) {
        for (int y = o.y; y < std::min(g.th, o.y + o.h); ++y) {
          for (int x = o.x; x < std::min(g.tw, o.x + o.w); ++x) {
            for (int c = 0; c < Frame::channels; ++c) dst.at(x, y, c) = o.color;
          }
        }
      }
    }
    out.frames.push_back(std::move(dst));
  }

  for (const auto& lb : sample.flow_labels) {
    if (!g.in_crop(lb.x, lb.y)) continue;
    const Vec2f p = g.map_point({lb.x, lb.y});
    const Vec2f d = g.map_disp({lb.du, lb.dv});
    out.flow_labels.push_back({p.x, p.y, d.x, d.y});
  }
  for (size_t li = 0; li < sample.traj_labels.size(); ++li) {
    const auto& traj = sample.traj_labels[li];
    bool keep = true;
    for (int t = 0; t < kTrackLen && keep; ++t) {
      if (traj.validity[t] && !g.in_crop(traj.points[t].x, traj.points[t].y)) {
        keep = false;
      }
    }
    if (!keep) continue;
    Trajectory mapped = traj;
    for (int t = 0; t < kTrackLen; ++t) mapped.points[t] = g.map_point(traj.points[t]);
    std::array<Vec2f, kTrackLen - 1> steps{};
    if (li < sample.traj_steps.size()) {
      for (int t = 0; t + 1 < kTrackLen; ++t) steps[t] = g.map_disp(sample.traj_steps[li][t]);
    }
    out.traj_labels.push_back(mapped);
    out.traj_steps.push_back(steps);
  }

  const size_t in_labels = sample.flow_labels.size() + sample.traj_labels.size();
  const size_t out_labels = out.flow_labels.size() + out.traj_labels.size();
  if (in_labels > 0 && out_labels == 0) return std::nullopt;
  return out;
}

}  // namespace

TrainSample augment(const TrainSample& sample, const AugmentationSpec& spec,
                    RngStream& rng) {
  auto out = augment_impl(sample, spec, rng);
  if (!out) throw std::invalid_argument("augment: every label became unmappable");
  return std::move(*out);
}

double sequence_loss(const std::vector<Vec2d>& estimates, Vec2d label, double discount) {
  if (estimates.empty()) throw std::invalid_argument("sequence_loss: empty estimates");
  if (!(discount > 0.0 && discount <= 1.0)) {
    throw std::invalid_argument("sequence_loss: discount must be in (0,1]");
  }
  const int K = static_cast<int>(estimates.size());
  double loss = 0.0;
  for (int k = 1; k <= K; ++k) {
    const Vec2d& e = estimates[k - 1];
    loss += std::pow(discount, K - k) *
            (std::abs(e.x - label.x) + std::abs(e.y - label.y));
  }
  return loss;
}

double sequence_loss(const std::vector<std::vector<Vec2d>>& per_label_estimates,
                     const std::vector<Vec2d>& labels, double discount) {
  if (per_label_estimates.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("sequence_loss: batch size mismatch or empty");
  }
  double sum = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    sum += sequence_loss(per_label_estimates[i], labels[i], discount);
  }
  return sum / static_cast<double>(labels.size());
}

double color_constancy_loss(const std::vector<Frame>& frames, const TrajectorySet& tracks) {
  if (frames.empty()) throw std::invalid_argument("color_constancy_loss: no frames");
  if (tracks.trajectories.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& traj : tracks.trajectories) {
    const int steps = std::min<int>(kTrackLen, static_cast<int>(frames.size()));
    float ref[3];
    for (int c = 0; c < Frame::channels; ++c) {
      ref[c] = bilinear_sample_channel(frames[0], c, traj.points[0].x, traj.points[0].y);
    }
    for (int t = 1; t < steps; ++t) {
      double sq = 0.0;
      for (int c = 0; c < Frame::channels; ++c) {
        const double d = bilinear_sample_channel(frames[t], c, traj.points[t].x,
                                                 traj.points[t].y) -
                         ref[c];
        sq += d * d;
      }
      sum += std::sqrt(sq);
    }
  }
  return sum / static_cast<double>(tracks.trajectories.size());
}

double color_constancy_loss(const Frame& source, const Frame& target,
                            const FlowField& flow) {
  const Frame rec = warp_backward(target, flow);
  double sum = 0.0;
  for (int y = 0; y < source.height; ++y) {
    for (int x = 0; x < source.width; ++x) {
      double sq = 0.0;
      for (int c = 0; c < Frame::channels; ++c) {
        const double d = rec.at(x, y, c) - source.at(x, y, c);
        sq += d * d;
      }
      sum += std::sqrt(sq);
    }
  }
  return sum / static_cast<double>(source.pixel_count());
}

double smoothness_loss(const FlowField& flow, bool edge_aware, const Frame* source,
                       double lambda) {
  if (flow.width < 2 || flow.height < 2) return 0.0;
  if (edge_aware && source == nullptr) {
    throw std::invalid_argument("smoothness_loss: edge-aware needs the source frame");
  }
  double sum = 0.0;
  size_t count = 0;
  for (int y = 0; y + 1 < flow.height; ++y) {
    for (int x = 0; x + 1 < flow.width; ++x) {
      const size_t i = flow.idx(x, y);
      const size_t ir = flow.idx(x + 1, y);
      const size_t id = flow.idx(x, y + 1);
      const double dux = flow.u[ir] - flow.u[i];
      const double duy = flow.u[id] - flow.u[i];
      const double dvx = flow.v[ir] - flow.v[i];
      const double dvy = flow.v[id] - flow.v[i];
      double term = std::sqrt(dux * dux + duy * duy + dvx * dvx + dvy * dvy);
      if (edge_aware) {
        const auto gray = [&](int px, int py) {
          return (source->at(px, py, 0) + source->at(px, py, 1) + source->at(px, py, 2)) /
                 3.0;
        };
        const double gx = gray(x + 1, y) - gray(x, y);
        const double gy = gray(x, y + 1) - gray(x, y);
        term *= std::exp(-lambda * std::sqrt(gx * gx + gy * gy));
      }
      sum += term;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double cosine_lr(int step, int kappa, double lr0) {
  if (kappa <= 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / kappa));
}

namespace {

struct PoolEntry {
  int clip_index = 0;
  int window = 0;
  std::vector<FlowPointLabel> flow_labels;
  std::vector<Trajectory> traj_labels;
  std::vector<std::array<Vec2f, kTrackLen - 1>> traj_steps;
};

// Windows grouped per clip, in deterministic (clip, window) order.
std::vector<std::vector<PoolEntry>> build_pools(const Corpus& clips,
                                                const PseudoLabelSet& labels) {
  std::map<std::string, int> clip_index;
  for (size_t i = 0; i < clips.size(); ++i) clip_index[clips[i].id] = static_cast<int>(i);
  std::map<std::pair<int, int>, PoolEntry> grouped;
  const auto entry_for = [&](const std::string& id, int window) -> PoolEntry& {
    const auto it = clip_index.find(id);
    if (it == clip_index.end()) {
      throw std::invalid_argument("finetune: labels reference unknown clip '" + id + "'");
    }
    auto& e = grouped[{it->second, window}];
    e.clip_index = it->second;
    e.window = window;
    return e;
  };
  for (const auto& lb : labels.flow_labels) {
    auto& e = entry_for(lb.clip_id, lb.window);
    e.flow_labels.push_back({static_cast<float>(lb.x), static_cast<float>(lb.y), lb.du, lb.dv});
  }
  for (const auto& lb : labels.traj_labels) {
    auto& e = entry_for(lb.clip_id, lb.window);
    e.traj_labels.push_back(lb.traj);
    e.traj_steps.push_back(lb.steps);
  }
  std::vector<std::vector<PoolEntry>> pools(clips.size());
  for (auto& [key, entry] : grouped) pools[key.first].push_back(std::move(entry));
  return pools;
}

TrainSample make_sample(const Corpus& clips, const PoolEntry& entry, ModelMode mode) {
  TrainSample s;
  const Clip& clip = clips[entry.clip_index];
  if (mode == ModelMode::DenseFlow) {
    s.frames = {clip.frames[entry.window], clip.frames[entry.window + 1]};
    s.flow_labels = entry.flow_labels;
  } else {
    s.frames.assign(clip.frames.begin() + entry.window,
                    clip.frames.begin() + entry.window + kTrackLen);
    s.traj_labels = entry.traj_labels;
    s.traj_steps = entry.traj_steps;
  }
  return s;
}

// Deterministic per-video step allocation: each video with labels gets a
// contiguous share of the kappa steps, in corpus order.
std::vector<int> plan_video_steps(const std::vector<int>& videos, int kappa) {
  std::vector<int> plan(kappa, videos.empty() ? 0 : videos[0]);
  if (videos.empty()) return plan;
  const int per = kappa / static_cast<int>(videos.size());
  int rem = kappa % static_cast<int>(videos.size());
  int step = 0;
  for (int v : videos) {
    int share = per + (rem > 0 ? 1 : 0);
    if (rem > 0) --rem;
    for (int i = 0; i < share && step < kappa; ++i) plan[step++] = v;
  }
  while (step < kappa) plan[step++] = videos.back();
  return plan;
}

class WindowCycler {
 public:
  WindowCycler(const std::vector<PoolEntry>* pool, RngStream rng)
      : pool_(pool), rng_(std::move(rng)) {
    order_.resize(pool_->size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }
  const PoolEntry& next() {
    if (cursor_ >= order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    return (*pool_)[order_[cursor_++]];
  }

 private:
  const std::vector<PoolEntry>* pool_;
  RngStream rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

}  // namespace

FinetuneResult finetune(const RefModel& model, const Corpus& clips,
                        const PseudoLabelSet& labels, const TrainConfig& cfg) {
  if (cfg.objective != Objective::PseudoLabels) {
    throw std::invalid_argument("finetune: use finetune_objective for baselines");
  }
  if (labels.label_count() == 0) {
    throw std::invalid_argument("finetune: empty pseudo-label set");
  }
  FinetuneResult result{model, {}};
  if (cfg.kappa == 0) return result;

  const ModelMode mode = labels.mode;
  result.model.set_mode(mode);
  auto pools = build_pools(clips, labels);
  std::vector<int> videos;
  if (cfg.videos == VideoMode::Single) {
    const std::string want = cfg.video_id.empty() ? clips[0].id : cfg.video_id;
    for (size_t i = 0; i < clips.size(); ++i) {
      if (clips[i].id == want) videos.push_back(static_cast<int>(i));
    }
    if (videos.empty() || pools[videos[0]].empty()) {
      throw std::invalid_argument("finetune: no labels for video '" + want + "'");
    }
  } else {
    for (size_t i = 0; i < clips.size(); ++i) {
      if (!pools[i].empty()) videos.push_back(static_cast<int>(i));
    }
  }
  if (videos.empty()) throw std::invalid_argument("finetune: no labelled videos");

  RngStream root(cfg.seed, "finetune");
  std::map<int, WindowCycler> cyclers;
  for (int v : videos) {
    cyclers.emplace(v, WindowCycler(&pools[v], root.derive("video" + std::to_string(v))));
  }
  RngStream aug_rng = root.derive("aug");
  const std::vector<int> plan = plan_video_steps(videos, cfg.kappa);

  for (int step = 0; step < cfg.kappa; ++step) {
    const double lr = cosine_lr(step, cfg.kappa, cfg.lr);
    Mat26 acc;
    double loss_acc = 0.0;
    size_t labels_seen = 0;
    int used = 0;
    for (int a = 0; a < cfg.accum; ++a) {
      std::vector<TrainItem> items;
      for (int b = 0; b < cfg.batch; ++b) {
        TrainSample sample = make_sample(clips, cyclers.at(plan[step]).next(), mode);
        std::optional<TrainSample> aug = sample;
        if (!cfg.aug.is_identity()) aug = augment_impl(sample, cfg.aug, aug_rng);
        if (!aug) continue;
        TrainItem item;
        item.frames = std::move(aug->frames);
        item.flow_labels = std::move(aug->flow_labels);
        item.traj_labels = std::move(aug->traj_labels);
        item.traj_steps = std::move(aug->traj_steps);
        if (item.flow_labels.empty() && item.traj_labels.empty()) continue;
        items.push_back(std::move(item));
      }
      if (items.empty()) continue;
      const GradResult g = head_gradient(result.model, items, cfg.discount);
      acc += g.grad;
      loss_acc += g.loss;
      labels_seen += g.label_count;
      ++used;
    }
    double step_loss = 0.0;
    if (used > 0) {
      acc *= 1.0 / used;
      step_loss = loss_acc / used;
      if (!std::isfinite(step_loss)) {
        throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step));
      }
      auto& W = result.model.weights();
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 6; ++c) W.w[r][c] -= lr * acc.m[r][c];
      }
    }
    result.log.push_back({step, step_loss, lr, labels_seen});
  }
  return result;
}

namespace {

// Probe-based objective for the baselines: color constancy (optionally with a
// smoothness term) evaluated on a stride-2 pixel grid, with the head applied
// pointwise on the frozen base flow.
struct ObjectiveEval {
  const PairCache* cache;
  const Frame* source;
  const Frame* target;
  int head_iters;
  Objective objective;
  double smooth_weight;
  double edge_lambda;
  std::vector<std::pair<int, int>> probes;

  Vec2d corrected_flow(const HeadWeights& W, double px, double py) const {
    Vec2d f = {bilinear_sample(cache->base.u, cache->width, cache->height,
                               static_cast<float>(px), static_cast<float>(py)),
               bilinear_sample(cache->base.v, cache->width, cache->height,
                               static_cast<float>(px), static_cast<float>(py))};
    for (int k = 0; k < head_iters; ++k) {
      const auto phi = head_features(*cache, {px, py}, f);
      double du = 0.0, dv = 0.0;
      for (int c = 0; c < 6; ++c) {
        du += W.w[0][c] * phi[c];
        dv += W.w[1][c] * phi[c];
      }
      f = {f.x + du, f.y + dv};
    }
    return f;
  }

  double operator()(const HeadWeights& W) const {
    double color_sum = 0.0, smooth_sum = 0.0;
    for (const auto& [x, y] : probes) {
      const Vec2d f = corrected_flow(W, x, y);
      double sq = 0.0;
      for (int c = 0; c < Frame::channels; ++c) {
        const double d = bilinear_sample_channel(*target, c, static_cast<float>(x + f.x),
                                                 static_cast<float>(y + f.y)) -
                         source->at(x, y, c);
        sq += d * d;
      }
      color_sum += std::sqrt(sq);
      if (objective == Objective::ColorSmooth || objective == Objective::ColorEdgeSmooth) {
        const Vec2d fr = corrected_flow(W, x + 1, y);
        const Vec2d fd = corrected_flow(W, x, y + 1);
        const double dux = fr.x - f.x, dvx = fr.y - f.y;
        const double duy = fd.x - f.x, dvy = fd.y - f.y;
        double term = std::sqrt(dux * dux + dvx * dvx + duy * duy + dvy * dvy);
        if (objective == Objective::ColorEdgeSmooth) {
          const size_t i = static_cast<size_t>(y) * cache->width + x;
          const double gx = cache->gray_src[i + 1] - cache->gray_src[i];
          const double gy = cache->gray_src[i + cache->width] - cache->gray_src[i];
          term *= std::exp(-edge_lambda * std::sqrt(gx * gx + gy * gy));
        }
        smooth_sum += term;
      }
    }
    const double n = static_cast<double>(probes.size());
    return color_sum / n + smooth_weight * smooth_sum / n;
  }
};

Mat26 central_difference_grad(const ObjectiveEval& obj, const HeadWeights& W,
                              double h = 1e-4) {
  Mat26 g;
  HeadWeights probe = W;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 6; ++c) {
      const double orig = probe.w[r][c];
      probe.w[r][c] = orig + h;
      const double hi = obj(probe);
      probe.w[r][c] = orig - h;
      const double lo = obj(probe);
      probe.w[r][c] = orig;
      g.m[r][c] = (hi - lo) / (2.0 * h);
    }
  }
  return g;
}

// Sparse color objective: chase color constancy of the model's own final
// tracks from a query grid.
struct TrackObjectiveEval {
  const std::vector<Frame>* frames;
  const std::vector<PairCache>* caches;
  int head_iters;
  std::vector<Vec2f> queries;

  double operator()(const HeadWeights& W) const {
    if (queries.empty()) return 0.0;
    const int w = (*frames)[0].width, h = (*frames)[0].height;
    double sum = 0.0;
    for (const auto& q : queries) {
      Vec2f y = q;
      float ref[3];
      for (int c = 0; c < Frame::channels; ++c) {
        ref[c] = bilinear_sample_channel((*frames)[0], c, y.x, y.y);
      }
      for (int t = 0; t + 1 < kTrackLen; ++t) {
        Vec2d f = {bilinear_sample((*caches)[t].base.u, w, h, y.x, y.y),
                   bilinear_sample((*caches)[t].base.v, w, h, y.x, y.y)};
        for (int k = 0; k < head_iters; ++k) {
          const auto phi = head_features((*caches)[t], {y.x, y.y}, f);
          double du = 0.0, dv = 0.0;
          for (int c = 0; c < 6; ++c) {
            du += W.w[0][c] * phi[c];
            dv += W.w[1][c] * phi[c];
          }
          f = {f.x + du, f.y + dv};
        }
        y = {static_cast<float>(y.x + f.x), static_cast<float>(y.y + f.y)};
        double sq = 0.0;
        for (int c = 0; c < Frame::channels; ++c) {
          const double d = bilinear_sample_channel((*frames)[t + 1], c, y.x, y.y) - ref[c];
          sq += d * d;
        }
        sum += std::sqrt(sq);
      }
    }
    return sum / static_cast<double>(queries.size());
  }
};

Mat26 central_difference_grad_tracks(const TrackObjectiveEval& obj, const HeadWeights& W,
                                     double h = 1e-4) {
  Mat26 g;
  HeadWeights probe = W;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 6; ++c) {
      const double orig = probe.w[r][c];
      probe.w[r][c] = orig + h;
      const double hi = obj(probe);
      probe.w[r][c] = orig - h;
      const double lo = obj(probe);
      probe.w[r][c] = orig;
      g.m[r][c] = (hi - lo) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace

FinetuneResult finetune_objective(const RefModel& model, const Corpus& clips,
                                  const TrainConfig& cfg) {
  if (cfg.objective == Objective::PseudoLabels) {
    throw std::invalid_argument("finetune_objective: pseudo-labels go through finetune");
  }
  if (clips.empty()) throw std::invalid_argument("finetune_objective: no clips");
  FinetuneResult result{model, {}};
  if (cfg.kappa == 0) return result;

  const ModelMode mode = model.mode();
  if (mode == ModelMode::SparseTrajectory && cfg.objective != Objective::Color) {
    throw std::invalid_argument(
        "finetune_objective: smoothness terms apply to dense flow only");
  }

  // Window pools: every stride-2 window of every clip.
  std::vector<std::vector<PoolEntry>> pools(clips.size());
  for (size_t i = 0; i < clips.size(); ++i) {
    const int frame_count = static_cast<int>(clips[i].frames.size());
    if (mode == ModelMode::DenseFlow) {
      for (int t = 0; t + 1 < frame_count; t += 2) {
        pools[i].push_back({static_cast<int>(i), t, {}, {}, {}});
      }
    } else {
      for (int s : clip_to_chunks(frame_count, 2).starts) {
        pools[i].push_back({static_cast<int>(i), s, {}, {}, {}});
      }
    }
  }
  std::vector<int> videos;
  if (cfg.videos == VideoMode::Single) {
    const std::string want = cfg.video_id.empty() ? clips[0].id : cfg.video_id;
    for (size_t i = 0; i < clips.size(); ++i) {
      if (clips[i].id == want && !pools[i].empty()) videos.push_back(static_cast<int>(i));
    }
  } else {
    for (size_t i = 0; i < clips.size(); ++i) {
      if (!pools[i].empty()) videos.push_back(static_cast<int>(i));
    }
  }
  if (videos.empty()) throw std::invalid_argument("finetune_objective: no usable videos");

  RngStream root(cfg.seed, "finetune-objective");
  std::map<int, WindowCycler> cyclers;
  for (int v : videos) {
    cyclers.emplace(v, WindowCycler(&pools[v], root.derive("video" + std::to_string(v))));
  }
  RngStream aug_rng = root.derive("aug");
  const std::vector<int> plan = plan_video_steps(videos, cfg.kappa);

  for (int step = 0; step < cfg.kappa; ++step) {
    const double lr = cosine_lr(step, cfg.kappa, cfg.lr);
    Mat26 acc;
    double loss_acc = 0.0;
    int used = 0;
    for (int a = 0; a < cfg.accum; ++a) {
      const PoolEntry& entry = cyclers.at(plan[step]).next();
      TrainSample sample = make_sample(clips, entry, mode);
      if (!cfg.aug.is_identity()) {
        auto aug = augment_impl(sample, cfg.aug, aug_rng);
        if (aug) sample = std::move(*aug);
      }
      if (mode == ModelMode::DenseFlow) {
        ObjectiveEval obj;
        const PairCache cache = result.model.make_cache(sample.frames[0], sample.frames[1]);
        obj.cache = &cache;
        obj.source = &sample.frames[0];
        obj.target = &sample.frames[1];
        obj.head_iters = result.model.head_iters();
        obj.objective = cfg.objective;
        obj.smooth_weight = cfg.smooth_weight;
        obj.edge_lambda = cfg.edge_lambda;
        for (int y = 1; y + 2 < cache.height; y += 2) {
          for (int x = 1; x + 2 < cache.width; x += 2) obj.probes.push_back({x, y});
        }
        acc += central_difference_grad(obj, result.model.weights());
        loss_acc += obj(result.model.weights());
      } else {
        TrackObjectiveEval obj;
        std::vector<PairCache> caches;
        for (int t = 0; t + 1 < kTrackLen; ++t) {
          caches.push_back(result.model.make_cache(sample.frames[t], sample.frames[t + 1]));
        }
        obj.frames = &sample.frames;
        obj.caches = &caches;
        obj.head_iters = result.model.head_iters();
        const int w = sample.frames[0].width, h = sample.frames[0].height;
        for (int y = 6; y < h; y += 12) {
          for (int x = 6; x < w; x += 12) {
            obj.queries.push_back({static_cast<float>(x), static_cast<float>(y)});
          }
        }
        acc += central_difference_grad_tracks(obj, result.model.weights());
        loss_acc += obj(result.model.weights());
      }
      ++used;
    }
    acc *= 1.0 / used;
    const double step_loss = loss_acc / used;
    if (!std::isfinite(step_loss)) {
      throw std::runtime_error("finetune_objective: non-finite loss at step " +
                               std::to_string(step));
    }
    auto& W = result.model.weights();
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 6; ++c) W.w[r][c] -= lr * acc.m[r][c];
    }
    result.log.push_back({step, step_loss, lr, 0});
  }
  return result;
}

void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ostringstream out;
  out << "step,loss,lr,labels_seen\n";
  char buf[64];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%zu\n", row.step, row.loss, row.lr,
                  row.labels_seen);
    out << buf;
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("save_train_log: cannot write " + tmp);
    f << out.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_train_log: rename failed for " + path);
  }
}

}  // namespace motref
