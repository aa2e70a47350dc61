// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/fluid/io.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fluidctl::fluid {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'D', '1'};
constexpr uint32_t kDtypeF64 = 1;

void fail(const std::string& path, const char* why) {
  throw std::runtime_error("field io: " + path + ": " + why);
}

}  // namespace

void write_field(const std::string& path, const ad::Tensor& t) {
  if (t.rank() != 2) fail(path, "only rank-2 tensors are stored");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  const uint32_t ny = static_cast<uint32_t>(t.rows());
  const uint32_t nx = static_cast<uint32_t>(t.cols());
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&ny), 4);
  f.write(reinterpret_cast<const char*>(&nx), 4);
  f.write(reinterpret_cast<const char*>(&kDtypeF64), 4);
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(double)) * t.size());
  if (!f) fail(path, "write failed");
}

ad::Tensor read_field(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  char magic[4];
  uint32_t ny = 0, nx = 0, dtype = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&ny), 4);
  f.read(reinterpret_cast<char*>(&nx), 4);
  f.read(reinterpret_cast<char*>(&dtype), 4);
  if (!f) fail(path, "truncated header");
  if (magic[0] != kMagic[0] || magic[1] != kMagic[1] || magic[2] != kMagic[2] || magic[3] != kMagic[3])
    fail(path, "bad magic");
  if (dtype != kDtypeF64) fail(path, "unsupported dtype");
  if (ny == 0 || nx == 0 || static_cast<uint64_t>(ny) * nx > (1u << 28)) fail(path, "implausible shape");
  std::vector<double> data(static_cast<size_t>(ny) * nx);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(sizeof(double)) * data.size());
  if (!f) fail(path, "truncated data");
  return ad::Tensor({static_cast<int>(ny), static_cast<int>(nx)}, std::move(data));
}

}  // namespace fluidctl::fluid
