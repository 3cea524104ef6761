#include "motref/core.hpp"

#include <cmath>
#include <stdexcept>

namespace motref {

std::uint64_t fnv1a64(const void* bytes, size_t n, std::uint64_t basis) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = basis;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s, std::uint64_t basis) {
  return fnv1a64(s.data(), s.size(), basis);
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string label)
    : seed_(seed), label_(std::move(label)) {
  // xoshiro256** seeded from (seed, label) via splitmix64.
  std::uint64_t sm = fnv1a64(label_, fnv1a64(&seed_, sizeof(seed_)));
  for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + uniform() * (hi - lo);
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be > 0");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal(double mean, double stddev) {
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

RngStream RngStream::derive(const std::string& sublabel) const {
  return RngStream(seed_, label_ + "/" + sublabel);
}

std::vector<std::string> validate_frame(const Frame& frame) {
  std::vector<std::string> violations;
  if (frame.width <= 0 || frame.height <= 0) {
    violations.push_back("non-positive dimensions");
  }
  const size_t expected =
      static_cast<size_t>(frame.width) * frame.height * Frame::channels;
  if (frame.data.size() != expected) {
    violations.push_back("length mismatch: data length != width*height*channels");
  }
  for (float v : frame.data) {
    if (!std::isfinite(v)) {
      violations.push_back("non-finite value");
      break;
    }
  }
  for (float v : frame.data) {
    if (v < -0.5f || v > 0.5f) {
      violations.push_back("value out of [-0.5,0.5]");
      break;
    }
  }
  return violations;
}

ChunkPlan clip_to_chunks(int frame_count, int stride) {
  if (stride < 1) throw std::invalid_argument("clip_to_chunks: stride must be >= 1");
  ChunkPlan plan;
  if (frame_count < kTrackLen) {
    plan.too_short = true;
    return plan;
  }
  for (int s = 0; s + kTrackLen <= frame_count; s += stride) {
    plan.starts.push_back(s);
  }
  return plan;
}

}  // namespace motref
