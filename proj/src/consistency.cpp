#include "motref/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "motref/sampling.hpp"

namespace motref {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmtf(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::string FilterConfig::canonical_string() const {
  std::ostringstream s;
  s << "alpha=" << fmt(alpha) << ";beta=" << fmt(beta) << ";gamma=" << fmt(gamma)
    << ";tau=" << fmt(tau) << ";stride=" << stride
    << ";rebalance=" << (rebalance ? "on" : "off") << ";bins=" << bins << ";kind="
    << (kind == FilterKind::Both ? "both"
                                 : (kind == FilterKind::CycleOnly ? "cycle" : "color"))
    << ";query_stride=" << query_stride;
  return s.str();
}

std::uint64_t FilterConfig::hash() const { return fnv1a64(canonical_string()); }

Mask flow_cycle_mask(const FlowField& forward, const FlowField& backward,
                     double alpha, double beta) {
  if (forward.width != backward.width || forward.height != backward.height) {
    throw std::invalid_argument("flow_cycle_mask: shape mismatch");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("flow_cycle_mask: alpha must be > 0");
  const FlowField aligned = align_backward_flow(forward, backward);
  Mask mask(forward.width, forward.height);
  for (size_t i = 0; i < forward.pixel_count(); ++i) {
    const double wx = forward.u[i], wy = forward.v[i];
    const double hx = aligned.u[i], hy = aligned.v[i];
    const double sum_sq = (wx + hx) * (wx + hx) + (wy + hy) * (wy + hy);
    const double tol = alpha * (wx * wx + wy * wy + hx * hx + hy * hy + beta);
    mask.data[i] = sum_sq < tol ? 1 : 0;
  }
  return mask;
}

Mask color_mask(const Frame& source, const Frame& target, const FlowField& flow,
                double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("color_mask: gamma must be > 0");
  const std::vector<float> resid = residual_map(source, target, flow);
  Mask mask(source.width, source.height);
  for (size_t i = 0; i < resid.size(); ++i) {
    mask.data[i] = static_cast<double>(resid[i]) < gamma ? 1 : 0;
  }
  return mask;
}

bool trajectory_cycle_mask(const Trajectory& forward, const Trajectory& backward_flipped,
                           double tau) {
  double worst = 0.0;
  for (int t = 0; t < kTrackLen; ++t) {
    const double dx = forward.points[t].x - backward_flipped.points[t].x;
    const double dy = forward.points[t].y - backward_flipped.points[t].y;
    worst = std::max(worst, dx * dx + dy * dy);
  }
  return worst < tau;
}

namespace {

struct ClipResult {
  std::vector<FlowLabelRecord> flow_labels;
  std::vector<TrajLabelRecord> traj_labels;
  size_t accepted = 0;
  size_t total = 0;
};

ClipResult filter_clip_flow(const Clip& clip, const MotionModel& model,
                            const FilterConfig& cfg) {
  ClipResult out;
  const int frame_count = static_cast<int>(clip.frames.size());
  for (int t = 0; t + 1 < frame_count; t += cfg.stride) {
    FlowField fwd, bwd;
    try {
      fwd = model.predict_flow(clip.frames[t], clip.frames[t + 1]);
      bwd = model.predict_flow(clip.frames[t + 1], clip.frames[t]);
    } catch (const std::exception& e) {
      throw std::runtime_error("pseudolabel: model failure on " + clip.id + " window " +
                               std::to_string(t) + ": " + e.what());
    }
    Mask accept(fwd.width, fwd.height, true);
    if (cfg.kind != FilterKind::ColorOnly) {
      const Mask cyc = flow_cycle_mask(fwd, bwd, cfg.alpha, cfg.beta);
      for (size_t i = 0; i < accept.data.size(); ++i) accept.data[i] &= cyc.data[i];
    }
    if (cfg.kind != FilterKind::CycleOnly) {
      const Mask col = color_mask(clip.frames[t], clip.frames[t + 1], fwd, cfg.gamma);
      for (size_t i = 0; i < accept.data.size(); ++i) accept.data[i] &= col.data[i];
    }
    out.total += accept.data.size();
    for (int y = 0; y < fwd.height; ++y) {
      for (int x = 0; x < fwd.width; ++x) {
        const size_t i = fwd.idx(x, y);
        if (!accept.data[i]) continue;
        out.flow_labels.push_back({clip.id, t, x, y, fwd.u[i], fwd.v[i]});
        ++out.accepted;
      }
    }
  }
  return out;
}

std::vector<Vec2f> grid_queries(int width, int height, int stride) {
  std::vector<Vec2f> q;
  for (int y = stride / 2; y < height; y += stride) {
    for (int x = stride / 2; x < width; x += stride) {
      q.push_back({static_cast<float>(x), static_cast<float>(y)});
    }
  }
  return q;
}

ClipResult filter_clip_tracks(const Clip& clip, const MotionModel& model,
                              const FilterConfig& cfg, int query_stride) {
  ClipResult out;
  const int w = clip.frames[0].width, h = clip.frames[0].height;
  const ChunkPlan plan = clip_to_chunks(static_cast<int>(clip.frames.size()), cfg.stride);
  const std::vector<Vec2f> queries = grid_queries(w, h, query_stride);
  for (int start : plan.starts) {
    std::vector<Frame> window(clip.frames.begin() + start,
                              clip.frames.begin() + start + kTrackLen);
    TrackResult fwd;
    try {
      fwd = model.estimate_tracks(window, queries);
    } catch (const std::exception& e) {
      throw std::runtime_error("pseudolabel: model failure on " + clip.id + " window " +
                               std::to_string(start) + ": " + e.what());
    }
    const TrajectorySet& fwd_final = fwd.iterations.back();

    // The backward pass starts from the forward pass's predicted endpoint;
    // tracks whose endpoint left the canvas cannot close the cycle.
    std::vector<Frame> reversed(window.rbegin(), window.rend());
    std::vector<Vec2f> back_queries;
    std::vector<size_t> back_index;
    for (size_t i = 0; i < fwd_final.trajectories.size(); ++i) {
      const auto& traj = fwd_final.trajectories[i];
      bool all_valid = true;
      for (int t = 0; t < kTrackLen; ++t) all_valid = all_valid && traj.validity[t];
      if (!all_valid) continue;
      back_queries.push_back(traj.points[kTrackLen - 1]);
      back_index.push_back(i);
    }
    TrajectorySet bwd_final;
    if (!back_queries.empty()) {
      try {
        bwd_final = model.predict_tracks(reversed, back_queries);
      } catch (const std::exception& e) {
        throw std::runtime_error("pseudolabel: model failure on " + clip.id +
                                 " window " + std::to_string(start) + ": " + e.what());
      }
    }

    out.total += fwd_final.trajectories.size();
    for (size_t j = 0; j < back_index.size(); ++j) {
      const size_t i = back_index[j];
      const auto& traj = fwd_final.trajectories[i];
      Trajectory flipped;
      flipped.query_index = traj.query_index;
      for (int t = 0; t < kTrackLen; ++t) {
        flipped.points[t] = bwd_final.trajectories[j].points[kTrackLen - 1 - t];
        flipped.validity[t] = bwd_final.trajectories[j].validity[kTrackLen - 1 - t];
        flipped.visibility[t] = bwd_final.trajectories[j].visibility[kTrackLen - 1 - t];
      }
      if (!trajectory_cycle_mask(traj, flipped, cfg.tau)) continue;
      TrajLabelRecord rec;
      rec.clip_id = clip.id;
      rec.window = start;
      rec.traj = traj;
      rec.steps = fwd.final_steps[i];
      out.traj_labels.push_back(std::move(rec));
      ++out.accepted;
    }
  }
  return out;
}

}  // namespace

PseudoLabelSet generate_pseudolabels(const Corpus& clips, const MotionModel& model,
                                     const FilterConfig& config, RngStream& rng) {
  if (clips.empty()) throw std::invalid_argument("generate_pseudolabels: no clips");
  PseudoLabelSet set;
  set.mode = model.mode();
  set.config_hash = config.hash();
  for (const auto& clip : clips) {
    ClipResult res;
    ClipFilterStats stats;
    stats.clip_id = clip.id;
    if (model.mode() == ModelMode::DenseFlow) {
      res = filter_clip_flow(clip, model, config);
    } else {
      res = filter_clip_tracks(clip, model, config, config.query_stride);
      // Densify: clips with almost nothing accepted get denser query seeding.
      if (res.total > 0 &&
          static_cast<double>(res.accepted) / static_cast<double>(res.total) < 0.05 &&
          config.query_stride >= 4) {
        res = filter_clip_tracks(clip, model, config,
                                 std::max(2, config.query_stride / 2));
        stats.densified = true;
      }
    }
    stats.accepted = res.accepted;
    stats.total = res.total;
    set.accepted += res.accepted;
    set.total += res.total;
    set.per_clip.push_back(stats);
    set.flow_labels.insert(set.flow_labels.end(), res.flow_labels.begin(),
                           res.flow_labels.end());
    set.traj_labels.insert(set.traj_labels.end(), res.traj_labels.begin(),
                           res.traj_labels.end());
  }
  if (config.rebalance && set.label_count() > 0) {
    return rebalance(set, config.bins, rng);
  }
  return set;
}

PseudoLabelSet rebalance(const PseudoLabelSet& labels, int bins, RngStream& rng) {
  if (bins < 1) throw std::invalid_argument("rebalance: bins must be >= 1");
  if (labels.label_count() == 0) throw std::invalid_argument("rebalance: empty label set");
  const size_t n = labels.label_count();
  if (bins == 1) return labels;

  std::vector<double> mag(n);
  if (labels.mode == ModelMode::DenseFlow) {
    for (size_t i = 0; i < n; ++i) {
      mag[i] = std::hypot(labels.flow_labels[i].du, labels.flow_labels[i].dv);
    }
  } else {
    for (size_t i = 0; i < n; ++i) {
      const auto& traj = labels.traj_labels[i].traj;
      mag[i] = std::hypot(traj.points[kTrackLen - 1].x - traj.points[0].x,
                          traj.points[kTrackLen - 1].y - traj.points[0].y);
    }
  }
  const double lo = *std::min_element(mag.begin(), mag.end());
  const double hi = *std::max_element(mag.begin(), mag.end());
  if (hi <= lo) return labels;  // single occupied bin

  std::vector<std::vector<size_t>> by_bin(bins);
  for (size_t i = 0; i < n; ++i) {
    int b = static_cast<int>((mag[i] - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    by_bin[b].push_back(i);
  }
  std::vector<size_t> occupied;
  for (const auto& b : by_bin) {
    if (!b.empty()) occupied.push_back(b.size());
  }
  std::sort(occupied.begin(), occupied.end());
  // Lower median, so in a two-bin {10, 90} split the big bin drops to 10.
  const size_t median = occupied[(occupied.size() - 1) / 2];

  std::vector<std::uint8_t> keep(n, 0);
  for (auto& bin : by_bin) {
    if (bin.size() <= median) {
      for (size_t i : bin) keep[i] = 1;
    } else {
      rng.shuffle(bin);
      for (size_t j = 0; j < median; ++j) keep[bin[j]] = 1;
    }
  }
  PseudoLabelSet out = labels;
  out.flow_labels.clear();
  out.traj_labels.clear();
  for (size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    if (labels.mode == ModelMode::DenseFlow) {
      out.flow_labels.push_back(labels.flow_labels[i]);
    } else {
      out.traj_labels.push_back(labels.traj_labels[i]);
    }
  }
  return out;
}

void save_pseudolabels(const PseudoLabelSet& labels, const std::string& path) {
  std::ostringstream out;
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(labels.config_hash));
  out << "# motref-pseudolabels v1 mode="
      << (labels.mode == ModelMode::DenseFlow ? "flow" : "track")
      << " config_hash=" << hash_buf << " accepted=" << labels.accepted
      << " total=" << labels.total << "\n";
  if (labels.mode == ModelMode::DenseFlow) {
    for (const auto& lb : labels.flow_labels) {
      out << lb.clip_id << "," << lb.window << "," << lb.window << "," << lb.x << ","
          << lb.y << "," << fmtf(lb.du) << "," << fmtf(lb.dv) << "\n";
    }
  } else {
    for (const auto& lb : labels.traj_labels) {
      out << lb.clip_id << "," << lb.window << "," << lb.traj.query_index << ","
          << fmtf(lb.traj.points[0].x) << "," << fmtf(lb.traj.points[0].y);
      for (int t = 0; t + 1 < kTrackLen; ++t) {
        out << "," << fmtf(lb.steps[t].x) << "," << fmtf(lb.steps[t].y);
      }
      out << "\n";
    }
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("save_pseudolabels: cannot write " + tmp);
    f << out.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_pseudolabels: rename failed for " + path);
  }
}

PseudoLabelSet load_pseudolabels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_pseudolabels: cannot open " + path);
  std::string header;
  std::getline(f, header);
  PseudoLabelSet set;
  {
    std::istringstream hs(header);
    std::string tok;
    hs >> tok;  // '#'
    hs >> tok;  // format name
    if (tok != "motref-pseudolabels") {
      throw std::runtime_error("load_pseudolabels: bad header in " + path);
    }
    hs >> tok;  // version
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "mode") {
        set.mode = (val == "track") ? ModelMode::SparseTrajectory : ModelMode::DenseFlow;
      } else if (key == "config_hash") {
        set.config_hash = std::stoull(val, nullptr, 16);
      } else if (key == "accepted") {
        set.accepted = std::stoull(val);
      } else if (key == "total") {
        set.total = std::stoull(val);
      }
    }
  }
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) parts.push_back(cell);
    if (set.mode == ModelMode::DenseFlow) {
      if (parts.size() != 7) {
        throw std::runtime_error("load_pseudolabels: malformed flow record");
      }
      FlowLabelRecord lb;
      lb.clip_id = parts[0];
      lb.window = std::stoi(parts[1]);
      lb.x = std::stoi(parts[3]);
      lb.y = std::stoi(parts[4]);
      lb.du = std::stof(parts[5]);
      lb.dv = std::stof(parts[6]);
      set.flow_labels.push_back(std::move(lb));
    } else {
      if (parts.size() != 5 + 2 * (kTrackLen - 1)) {
        throw std::runtime_error("load_pseudolabels: malformed track record");
      }
      TrajLabelRecord lb;
      lb.clip_id = parts[0];
      lb.window = std::stoi(parts[1]);
      lb.traj.query_index = std::stoi(parts[2]);
      Vec2f pos{std::stof(parts[3]), std::stof(parts[4])};
      for (int t = 0; t < kTrackLen; ++t) {
        lb.traj.points[t] = pos;
        lb.traj.validity[t] = 1;
        lb.traj.visibility[t] = 1;
        if (t + 1 < kTrackLen) {
          lb.steps[t] = {std::stof(parts[5 + 2 * t]), std::stof(parts[6 + 2 * t])};
          pos = pos + lb.steps[t];
        }
      }
      set.traj_labels.push_back(std::move(lb));
    }
  }
  return set;
}

}  // namespace motref
