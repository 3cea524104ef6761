#include "motref/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "motref/sampling.hpp"

namespace motref {

namespace {

struct Plane {
  int w = 0, h = 0;
  std::vector<float> v;
  Plane() = default;
  Plane(int pw, int ph) : w(pw), h(ph), v(static_cast<size_t>(pw) * ph, 0.0f) {}
  float at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
  float& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
};

Plane to_gray(const Frame& f) {
  Plane g(f.width, f.height);
  for (size_t i = 0; i < f.pixel_count(); ++i) {
    const float* p = &f.data[i * Frame::channels];
    g.v[i] = (p[0] + p[1] + p[2]) / 3.0f;
  }
  return g;
}

Plane downsample2(const Plane& src) {
  Plane dst((src.w + 1) / 2, (src.h + 1) / 2);
  for (int y = 0; y < dst.h; ++y) {
    for (int x = 0; x < dst.w; ++x) {
      const int x0 = 2 * x, y0 = 2 * y;
      const int x1 = std::min(x0 + 1, src.w - 1);
      const int y1 = std::min(y0 + 1, src.h - 1);
      dst.at(x, y) = 0.25f * (src.at(x0, y0) + src.at(x1, y0) + src.at(x0, y1) +
                              src.at(x1, y1));
    }
  }
  return dst;
}

void central_gradients(const Plane& src, Plane& gx, Plane& gy) {
  gx = Plane(src.w, src.h);
  gy = Plane(src.w, src.h);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, src.w - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, src.h - 1);
      gx.at(x, y) = 0.5f * (src.at(xp, y) - src.at(xm, y));
      gy.at(x, y) = 0.5f * (src.at(x, yp) - src.at(x, ym));
    }
  }
}

// Summed-area table over a float plane; window sums in O(1).
struct Integral {
  int w = 0, h = 0;
  std::vector<double> s;
  explicit Integral(const Plane& p) : w(p.w), h(p.h), s((p.w + 1) * static_cast<size_t>(p.h + 1), 0.0) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        s[idx(x + 1, y + 1)] =
            p.at(x, y) + s[idx(x, y + 1)] + s[idx(x + 1, y)] - s[idx(x, y)];
      }
    }
  }
  size_t idx(int x, int y) const { return static_cast<size_t>(y) * (w + 1) + x; }
  // Inclusive window [x0,x1] x [y0,y1], clamped to the plane.
  double sum(int x0, int y0, int x1, int y1) const {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, w - 1);
    y1 = std::min(y1, h - 1);
    return s[idx(x1 + 1, y1 + 1)] - s[idx(x0, y1 + 1)] - s[idx(x1 + 1, y0)] +
           s[idx(x0, y0)];
  }
  static int count(int x0, int y0, int x1, int y1, int w, int h) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, w - 1);
    y1 = std::min(y1, h - 1);
    return (x1 - x0 + 1) * (y1 - y0 + 1);
  }
};

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.w, a.h);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

// Bilinear resize with pixel-center alignment; used to carry flow between
// pyramid levels.
std::vector<float> resize_plane(const std::vector<float>& src, int sw, int sh,
                                int dw, int dh) {
  std::vector<float> dst(static_cast<size_t>(dw) * dh);
  const float rx = static_cast<float>(sw) / dw;
  const float ry = static_cast<float>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    for (int x = 0; x < dw; ++x) {
      const float sx = (x + 0.5f) * rx - 0.5f;
      const float sy = (y + 0.5f) * ry - 0.5f;
      dst[static_cast<size_t>(y) * dw + x] = bilinear_sample(src, sw, sh, sx, sy);
    }
  }
  return dst;
}

double min_eigenvalue(double a, double b, double c) {
  const double half = 0.5 * (a + c);
  const double disc = 0.25 * (a - c) * (a - c) + b * b;
  return half - std::sqrt(std::max(disc, 0.0));
}

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline double dot6(const double* w, const std::array<double, 6>& phi) {
  double s = 0.0;
  for (int i = 0; i < 6; ++i) s += w[i] * phi[i];
  return s;
}

bool weights_are_zero(const HeadWeights& w) {
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 6; ++c)
      if (w.w[r][c] != 0.0) return false;
  return true;
}

}  // namespace

FlowField lk_flow(const Frame& source, const Frame& target, const LKConfig& cfg) {
  if (source.width != target.width || source.height != target.height) {
    throw std::invalid_argument("lk_flow: shape mismatch");
  }
  if (cfg.levels < 1 || cfg.radius < 1) {
    throw std::invalid_argument("lk_flow: bad config");
  }

  std::vector<Plane> pyr_s{to_gray(source)};
  std::vector<Plane> pyr_t{to_gray(target)};
  for (int l = 1; l < cfg.levels; ++l) {
    if (pyr_s.back().w < 16 || pyr_s.back().h < 16) break;
    pyr_s.push_back(downsample2(pyr_s.back()));
    pyr_t.push_back(downsample2(pyr_t.back()));
  }
  const int levels = static_cast<int>(pyr_s.size());

  std::vector<float> u, v;
  std::vector<std::uint8_t> valid;
  int prev_w = 0, prev_h = 0;

  for (int l = levels - 1; l >= 0; --l) {
    const Plane& S = pyr_s[l];
    const Plane& T = pyr_t[l];
    const int w = S.w, h = S.h;

    if (l == levels - 1) {
      u.assign(static_cast<size_t>(w) * h, 0.0f);
      v.assign(static_cast<size_t>(w) * h, 0.0f);
    } else {
      std::vector<float> nu = resize_plane(u, prev_w, prev_h, w, h);
      std::vector<float> nv = resize_plane(v, prev_w, prev_h, w, h);
      const float su = static_cast<float>(w) / prev_w;
      const float sv = static_cast<float>(h) / prev_h;
      for (auto& x : nu) x *= su;
      for (auto& x : nv) x *= sv;
      u = std::move(nu);
      v = std::move(nv);
    }

    Plane gx, gy;
    central_gradients(S, gx, gy);
    Integral ixx(multiply(gx, gx)), ixy(multiply(gx, gy)), iyy(multiply(gy, gy));

    valid.assign(static_cast<size_t>(w) * h, 0);
    const int r = cfg.radius;
    std::vector<double> sxx(static_cast<size_t>(w) * h), sxy(sxx.size()), syy(sxx.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        sxx[i] = ixx.sum(x - r, y - r, x + r, y + r);
        sxy[i] = ixy.sum(x - r, y - r, x + r, y + r);
        syy[i] = iyy.sum(x - r, y - r, x + r, y + r);
        const int n = Integral::count(x - r, y - r, x + r, y + r, w, h);
        valid[i] = min_eigenvalue(sxx[i] / n, sxy[i] / n, syy[i] / n) >= cfg.min_eig ? 1 : 0;
      }
    }

    Plane resid(w, h);
    for (int it = 0; it < cfg.iters; ++it) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const size_t i = static_cast<size_t>(y) * w + x;
          resid.at(x, y) =
              bilinear_sample(T.v, w, h, x + u[i], y + v[i]) - S.at(x, y);
        }
      }
      Integral ixt(multiply(gx, resid)), iyt(multiply(gy, resid));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const size_t i = static_cast<size_t>(y) * w + x;
          if (!valid[i]) continue;
          const double a = sxx[i], b = sxy[i], c = syy[i];
          const double det = a * c - b * b;
          if (det <= 1e-12) continue;
          const double bx = ixt.sum(x - r, y - r, x + r, y + r);
          const double by = iyt.sum(x - r, y - r, x + r, y + r);
          // Solve [a b; b c] d = -[bx; by]
          double dx = (-c * bx + b * by) / det;
          double dy = (b * bx - a * by) / det;
          dx = std::clamp(dx, -static_cast<double>(r), static_cast<double>(r));
          dy = std::clamp(dy, -static_cast<double>(r), static_cast<double>(r));
          u[i] += static_cast<float>(dx);
          v[i] += static_cast<float>(dy);
        }
      }
    }
    prev_w = w;
    prev_h = h;
  }

  FlowField out(source.width, source.height);
  out.u = std::move(u);
  out.v = std::move(v);
  out.valid = std::move(valid);
  return out;
}

PairCache RefModel::make_cache(const Frame& source, const Frame& target) const {
  PairCache cache;
  cache.width = source.width;
  cache.height = source.height;
  Plane gs = to_gray(source), gt = to_gray(target);
  Plane gx, gy;
  central_gradients(gs, gx, gy);
  cache.gray_src = std::move(gs.v);
  cache.gray_tgt = std::move(gt.v);
  cache.grad_x = std::move(gx.v);
  cache.grad_y = std::move(gy.v);
  cache.base = lk_flow(source, target, lk_);
  return cache;
}

std::array<double, 6> head_features(const PairCache& cache, Vec2d p, Vec2d f) {
  const float ix = bilinear_sample(cache.grad_x, cache.width, cache.height,
                                   static_cast<float>(p.x), static_cast<float>(p.y));
  const float iy = bilinear_sample(cache.grad_y, cache.width, cache.height,
                                   static_cast<float>(p.x), static_cast<float>(p.y));
  const float s = bilinear_sample(cache.gray_src, cache.width, cache.height,
                                  static_cast<float>(p.x), static_cast<float>(p.y));
  const float t = bilinear_sample(cache.gray_tgt, cache.width, cache.height,
                                  static_cast<float>(p.x + f.x), static_cast<float>(p.y + f.y));
  return {ix, iy, static_cast<double>(t) - s, f.x, f.y, 1.0};
}

DenseResult RefModel::estimate_flow(const Frame& source, const Frame& target) const {
  PairCache cache = make_cache(source, target);
  DenseResult res;
  res.iterations.push_back(cache.base);
  if (weights_are_zero(weights_)) {
    // Identity head: every iteration equals the base estimate.
    for (int k = 1; k <= head_iters_; ++k) res.iterations.push_back(cache.base);
    return res;
  }
  FlowField cur = cache.base;
  const int w = cache.width, h = cache.height;
  for (int k = 1; k <= head_iters_; ++k) {
    FlowField next = cur;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = cur.idx(x, y);
        const double fx = cur.u[i], fy = cur.v[i];
        const double tgt = bilinear_sample(cache.gray_tgt, w, h,
                                           static_cast<float>(x + fx),
                                           static_cast<float>(y + fy));
        const std::array<double, 6> phi = {
            cache.grad_x[i], cache.grad_y[i], tgt - cache.gray_src[i], fx, fy, 1.0};
        next.u[i] = static_cast<float>(fx + dot6(weights_.w[0], phi));
        next.v[i] = static_cast<float>(fy + dot6(weights_.w[1], phi));
      }
    }
    cur = std::move(next);
    res.iterations.push_back(cur);
  }
  return res;
}

std::vector<Vec2d> RefModel::point_flow_iterations(const PairCache& cache, Vec2d p) const {
  std::vector<Vec2d> out;
  Vec2d f = {bilinear_sample(cache.base.u, cache.width, cache.height,
                             static_cast<float>(p.x), static_cast<float>(p.y)),
             bilinear_sample(cache.base.v, cache.width, cache.height,
                             static_cast<float>(p.x), static_cast<float>(p.y))};
  out.push_back(f);
  for (int k = 1; k <= head_iters_; ++k) {
    const auto phi = head_features(cache, p, f);
    f = {f.x + dot6(weights_.w[0], phi), f.y + dot6(weights_.w[1], phi)};
    out.push_back(f);
  }
  return out;
}

TrackResult RefModel::estimate_tracks(const std::vector<Frame>& frames,
                                      const std::vector<Vec2f>& queries) const {
  if (frames.size() != static_cast<size_t>(kTrackLen)) {
    throw std::invalid_argument("estimate_tracks: window must hold 8 frames");
  }
  const int w = frames[0].width, h = frames[0].height;
  for (const auto& q : queries) {
    if (!(q.x >= 0 && q.x <= w - 1 && q.y >= 0 && q.y <= h - 1)) {
      throw std::invalid_argument("estimate_tracks: query outside bounds");
    }
  }
  std::vector<PairCache> caches;
  caches.reserve(kTrackLen - 1);
  for (int t = 0; t + 1 < kTrackLen; ++t) {
    caches.push_back(make_cache(frames[t], frames[t + 1]));
  }

  const auto in_bounds = [&](Vec2d p) {
    return p.x >= 0 && p.x <= w - 1 && p.y >= 0 && p.y <= h - 1;
  };
  const auto base_valid_near = [&](int pair, Vec2d p) {
    const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, w - 1);
    const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, h - 1);
    return caches[pair].base.is_valid(x, y);
  };

  TrackResult res;
  res.iterations.resize(head_iters_ + 1);
  for (int k = 0; k <= head_iters_; ++k) {
    TrajectorySet set;
    const bool final_iter = (k == head_iters_);
    for (const auto& q : queries) {
      Trajectory traj;
      traj.query_index = 0;
      std::array<Vec2f, kTrackLen - 1> steps{};
      // Positions advance in float so the stored points are exactly the
      // cumulative sum of the stored step flows.
      Vec2f y = q;
      bool valid = true;
      for (int t = 0; t < kTrackLen; ++t) {
        traj.points[t] = y;
        const bool inside = in_bounds({y.x, y.y});
        valid = valid && inside;
        traj.validity[t] = valid ? 1 : 0;
        const int pair = std::min(t, kTrackLen - 2);
        traj.visibility[t] = (inside && base_valid_near(pair, {y.x, y.y})) ? 1 : 0;
        if (t + 1 < kTrackLen) {
          // Per-step point flow with k head corrections at the tracked point.
          Vec2d f = {bilinear_sample(caches[t].base.u, w, h, y.x, y.y),
                     bilinear_sample(caches[t].base.v, w, h, y.x, y.y)};
          for (int j = 0; j < k; ++j) {
            const auto phi = head_features(caches[t], {y.x, y.y}, f);
            f = {f.x + dot6(weights_.w[0], phi), f.y + dot6(weights_.w[1], phi)};
          }
          const Vec2f step{static_cast<float>(f.x), static_cast<float>(f.y)};
          steps[t] = step;
          y = y + step;
        }
      }
      set.trajectories.push_back(traj);
      if (final_iter) res.final_steps.push_back(steps);
    }
    res.iterations[k] = std::move(set);
  }
  return res;
}

namespace {

void accumulate_point(const RefModel& model, const PairCache& cache, Vec2d p,
                      Vec2d target, double discount, Mat26& grad, double& loss) {
  const auto& W = model.weights();
  const int K = model.head_iters() + 1;
  Vec2d f = {bilinear_sample(cache.base.u, cache.width, cache.height,
                             static_cast<float>(p.x), static_cast<float>(p.y)),
             bilinear_sample(cache.base.v, cache.width, cache.height,
                             static_cast<float>(p.x), static_cast<float>(p.y))};
  loss += std::pow(discount, K - 1) *
          (std::abs(f.x - target.x) + std::abs(f.y - target.y));
  for (int k = 2; k <= K; ++k) {
    const auto phi = head_features(cache, p, f);
    const Vec2d fn = {f.x + dot6(W.w[0], phi), f.y + dot6(W.w[1], phi)};
    const double wk = std::pow(discount, K - k);
    loss += wk * (std::abs(fn.x - target.x) + std::abs(fn.y - target.y));
    const double sx = sgn(fn.x - target.x), sy = sgn(fn.y - target.y);
    for (int c = 0; c < 6; ++c) {
      grad.m[0][c] += wk * sx * phi[c];
      grad.m[1][c] += wk * sy * phi[c];
    }
    f = fn;
  }
}

}  // namespace

GradResult head_gradient(const RefModel& model, const std::vector<TrainItem>& batch,
                         double discount) {
  if (batch.empty()) throw std::invalid_argument("head_gradient: empty batch");
  GradResult res;
  for (const auto& item : batch) {
    if (!item.flow_labels.empty()) {
      if (item.frames.size() < 2) {
        throw std::invalid_argument("head_gradient: dense item needs a frame pair");
      }
      const PairCache cache = model.make_cache(item.frames[0], item.frames[1]);
      for (const auto& lb : item.flow_labels) {
        accumulate_point(model, cache, {lb.x, lb.y}, {lb.du, lb.dv}, discount,
                         res.grad, res.loss);
        ++res.label_count;
      }
    } else if (!item.traj_labels.empty()) {
      if (item.frames.size() != static_cast<size_t>(kTrackLen)) {
        throw std::invalid_argument("head_gradient: sparse item needs 8 frames");
      }
      if (item.traj_steps.size() != item.traj_labels.size()) {
        throw std::invalid_argument("head_gradient: trajectory labels need step targets");
      }
      std::vector<PairCache> caches;
      for (int t = 0; t + 1 < kTrackLen; ++t) {
        caches.push_back(model.make_cache(item.frames[t], item.frames[t + 1]));
      }
      for (size_t li = 0; li < item.traj_labels.size(); ++li) {
        const auto& traj = item.traj_labels[li];
        const auto& steps = item.traj_steps[li];
        // Teacher forcing: supervise each step's flow along the labelled path.
        for (int t = 0; t + 1 < kTrackLen; ++t) {
          if (!traj.validity[t] || !traj.validity[t + 1]) continue;
          const Vec2d p{traj.points[t].x, traj.points[t].y};
          const Vec2d d{steps[t].x, steps[t].y};
          accumulate_point(model, caches[t], p, d, discount, res.grad, res.loss);
        }
        ++res.label_count;
      }
    }
  }
  if (res.label_count == 0) {
    throw std::invalid_argument("head_gradient: no usable labels in batch");
  }
  res.grad *= 1.0 / static_cast<double>(res.label_count);
  res.loss /= static_cast<double>(res.label_count);
  return res;
}

void save_model(const RefModel& model, const std::string& path) {
  std::ostringstream out;
  out << "motref-model v1\n";
  out << "mode " << (model.mode() == ModelMode::DenseFlow ? "flow" : "track") << "\n";
  const auto& lk = model.lk_config();
  char buf[64];
  out << "lk_levels " << lk.levels << "\n";
  out << "lk_radius " << lk.radius << "\n";
  out << "lk_iters " << lk.iters << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(lk.min_eig));
  out << "lk_min_eig " << buf << "\n";
  out << "head_iters " << model.head_iters() << "\n";
  out << "W";
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 6; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", model.weights().w[r][c]);
      out << " " << buf;
    }
  }
  out << "\n";
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("save_model: cannot write " + tmp);
    f << out.str();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_model: rename failed for " + path);
  }
}

RefModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_model: cannot open " + path);
  std::string magic, version;
  f >> magic >> version;
  if (magic != "motref-model" || version != "v1") {
    throw std::runtime_error("load_model: unsupported format in " + path);
  }
  LKConfig lk;
  ModelMode mode = ModelMode::DenseFlow;
  int head_iters = 0;
  HeadWeights weights;
  std::string key;
  while (f >> key) {
    if (key == "mode") {
      std::string m;
      f >> m;
      mode = (m == "track") ? ModelMode::SparseTrajectory : ModelMode::DenseFlow;
    } else if (key == "lk_levels") {
      f >> lk.levels;
    } else if (key == "lk_radius") {
      f >> lk.radius;
    } else if (key == "lk_iters") {
      f >> lk.iters;
    } else if (key == "lk_min_eig") {
      f >> lk.min_eig;
    } else if (key == "head_iters") {
      f >> head_iters;
    } else if (key == "W") {
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 6; ++c) f >> weights.w[r][c];
    } else {
      throw std::runtime_error("load_model: unknown key '" + key + "'");
    }
  }
  RefModel model(lk, mode, head_iters);
  model.weights() = weights;
  return model;
}

}  // namespace motref
