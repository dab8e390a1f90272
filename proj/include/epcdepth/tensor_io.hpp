#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "epcdepth/tensor.hpp"

namespace epc {

// Flat binary tensor format:
//   magic "EPCT" | version u16 | rank u16 | dims u32[rank] | f32 data, row-major
// All fields little-endian.

namespace detail {

inline void put_u16(std::vector<unsigned char>& buf, uint16_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<unsigned char>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

constexpr uint16_t kEpctVersion = 1;

inline void write_epct(const std::string& path, const Shape& shape,
                       const std::vector<float>& data) {
  EPC_CHECK(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "write_epct: data does not match shape");
  std::vector<unsigned char> buf;
  buf.reserve(8 + 4 * shape.size() + 4 * data.size());
  buf.push_back('E');
  buf.push_back('P');
  buf.push_back('C');
  buf.push_back('T');
  detail::put_u16(buf, kEpctVersion);
  detail::put_u16(buf, static_cast<uint16_t>(shape.size()));
  for (int d : shape) detail::put_u32(buf, static_cast<uint32_t>(d));
  for (float v : data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(buf, bits);
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw std::runtime_error("write_epct: cannot open " + path);
  const size_t written = std::fwrite(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (written != buf.size()) throw std::runtime_error("write_epct: short write to " + path);
}

inline void write_epct(const std::string& path, const Tensor& t) {
  write_epct(path, t.shape(), t.vec());
}

inline void write_epct(const std::string& path, const Grid& g) {
  write_epct(path, Shape{g.h, g.w}, g.v);
}

inline Tensor read_epct(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) throw std::runtime_error("read_epct: cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> buf(static_cast<size_t>(sz));
  const size_t got = std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (got != buf.size()) throw std::runtime_error("read_epct: short read from " + path);
  if (buf.size() < 8 || std::memcmp(buf.data(), "EPCT", 4) != 0)
    throw std::runtime_error("read_epct: bad magic in " + path);
  const uint16_t version = detail::get_u16(buf.data() + 4);
  if (version != kEpctVersion)
    throw std::runtime_error("read_epct: unsupported version in " + path);
  const uint16_t rank = detail::get_u16(buf.data() + 6);
  if (buf.size() < 8 + 4u * rank) throw std::runtime_error("read_epct: truncated header in " + path);
  Shape shape(rank);
  size_t off = 8;
  int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    shape[static_cast<size_t>(i)] = static_cast<int>(detail::get_u32(buf.data() + off));
    n *= shape[static_cast<size_t>(i)];
    off += 4;
  }
  if (buf.size() != off + 4u * static_cast<size_t>(n))
    throw std::runtime_error("read_epct: payload size mismatch in " + path);
  std::vector<float> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t bits = detail::get_u32(buf.data() + off + 4 * static_cast<size_t>(i));
    std::memcpy(&data[static_cast<size_t>(i)], &bits, 4);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

inline Grid read_epct_grid(const std::string& path) {
  Tensor t = read_epct(path);
  EPC_CHECK(t.rank() == 2, "read_epct_grid: expected rank-2 tensor in ", path, ", got ",
            shape_str(t.shape()));
  Grid g(t.dim(0), t.dim(1));
  g.v = t.vec();
  return g;
}

}  // namespace epc
