#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "motref/io.hpp"

namespace motref {

namespace {

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t float_bits(float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, sizeof(v));
  return v;
}

float bits_float(std::uint32_t v) {
  float f;
  std::memcpy(&f, &v, sizeof(f));
  return f;
}

}  // namespace

void write_flo(const FlowField& flow, const std::string& path) {
  if (flow.width <= 0 || flow.height <= 0) {
    throw std::invalid_argument("write_flo: dimensions must be positive");
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(12 + flow.pixel_count() * 8);
  bytes.push_back('P');
  bytes.push_back('I');
  bytes.push_back('E');
  bytes.push_back('H');
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.width));
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.height));
  for (size_t i = 0; i < flow.pixel_count(); ++i) {
    put_u32_le(bytes, float_bits(flow.u[i]));
    put_u32_le(bytes, float_bits(flow.v[i]));
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("write_flo: cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("write_flo: rename failed for " + path);
  }
}

FlowField read_flo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_flo: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw std::runtime_error("read_flo: truncated header in " + path);
  if (bytes[0] != 'P' || bytes[1] != 'I' || bytes[2] != 'E' || bytes[3] != 'H') {
    throw std::runtime_error("read_flo: bad magic in " + path);
  }
  const std::int32_t w = static_cast<std::int32_t>(get_u32_le(&bytes[4]));
  const std::int32_t h = static_cast<std::int32_t>(get_u32_le(&bytes[8]));
  if (w <= 0 || h <= 0) throw std::runtime_error("read_flo: bad dimensions in " + path);
  const size_t expected = 12 + static_cast<size_t>(w) * h * 8;
  if (bytes.size() < expected) {
    throw std::runtime_error("read_flo: truncated payload in " + path);
  }
  if (bytes.size() > expected) {
    throw std::runtime_error("read_flo: trailing bytes in " + path);
  }
  FlowField flow(w, h);
  const unsigned char* p = &bytes[12];
  for (size_t i = 0; i < flow.pixel_count(); ++i) {
    flow.u[i] = bits_float(get_u32_le(p));
    p += 4;
    flow.v[i] = bits_float(get_u32_le(p));
    p += 4;
  }
  return flow;
}

}  // namespace motref
