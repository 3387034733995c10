// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Little-endian container shared by checkpoints and raw-tensor datasets:
//
//   "AVAE" | u32 version | u32 len, utf8 header | u32 count |
//   count x ( u32 len, utf8 name | u32 rank | u32 dims[rank] | f64 data[] )

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "avae/errors.hpp"
#include "avae/tensor.hpp"

namespace avae {

inline constexpr char kTensorFileMagic[4] = {'A', 'V', 'A', 'E'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
  std::string header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void f64(double v) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    bytes(b, 8);
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw DataError(std::string("tensor file: truncated while reading ") + what + ", expected " +
                          std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) +
                          " available",
                      static_cast<std::int64_t>(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(u);
  }
  std::string text(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  const unsigned char* cursor() const { return data_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor_file(const TensorFile& file) {
  detail::ByteWriter w;
  w.bytes(kTensorFileMagic, 4);
  w.u32(kTensorFileVersion);
  w.text(file.header);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw DataError("tensor file: dimension of '" + name + "' exceeds u32");
      }
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) w.f64(v);
  }
  return w.buffer();
}

inline TensorFile decode_tensor_file(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.need(4, "magic");
  if (std::memcmp(r.cursor(), kTensorFileMagic, 4) != 0) {
    throw DataError("tensor file: bad magic, expected \"AVAE\"", 0);
  }
  r.skip(4);
  const std::size_t version_at = r.position();
  const std::uint32_t version = r.u32("version");
  if (version != kTensorFileVersion) {
    throw DataError("tensor file: unsupported version " + std::to_string(version),
                    static_cast<std::int64_t>(version_at));
  }
  TensorFile file;
  file.header = r.text("header");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.text("tensor name");
    const std::size_t rank_at = r.position();
    const std::uint32_t rank = r.u32("rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0) {
        throw DataError("tensor file: zero dimension in '" + name + "'",
                        static_cast<std::int64_t>(rank_at));
      }
      shape.push_back(d);
    }
    const std::size_t n = element_count(shape);
    if (n > r.remaining() / 8) r.need(n * 8, "tensor data");
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw DataError("tensor file: " + std::to_string(r.remaining()) + " trailing bytes",
                    static_cast<std::int64_t>(r.position()));
  }
  return file;
}

inline void write_tensor_file(const std::string& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline TensorFile read_tensor_file(const std::string& path) {
  return decode_tensor_file(detail::read_file_bytes(path));
}

}  // namespace avae
