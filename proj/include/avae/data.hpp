// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

// Dataset ingestion (IDX and raw-tensor files), seeded splits and
// evaluation-pair sampling.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avae/errors.hpp"
#include "avae/tensor.hpp"
#include "avae/tensor_file.hpp"

namespace avae {

inline constexpr double kValidationFraction = 0.2;

/// All images of a dataset in one [N, C, H, W] tensor. The first
/// `source_train` rows come from the training source and the rest from the
/// test source; `train`, `validation` and `test` index into `images`.
struct Dataset {
  std::string name;
  Tensor images;
  std::size_t source_train = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t split_seed = 0;

  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t count() const { return images.dim(0); }
};

struct EvaluationSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (original, target) image indices
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace detail

/// Parses an IDX image file (magic 0x00000803) into [N, 1, rows, cols] / 255.
inline Tensor parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 16) {
    throw DataError(origin + ": IDX header needs 16 bytes, file has " + std::to_string(bytes.size()),
                    static_cast<std::int64_t>(bytes.size()));
  }
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != 0x00000803) {
    throw DataError(origin + ": bad IDX image magic 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000803", 0);
  }
  const std::size_t n = detail::read_be32(bytes, 4);
  const std::size_t rows = detail::read_be32(bytes, 8);
  const std::size_t cols = detail::read_be32(bytes, 12);
  if (n == 0 || rows == 0 || cols == 0) throw DataError(origin + ": empty IDX dimensions", 4);
  const std::size_t expected = 16 + n * rows * cols;
  if (bytes.size() != expected) {
    throw DataError(origin + ": IDX length mismatch, expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(bytes.size()),
                    static_cast<std::int64_t>(std::min(bytes.size(), expected)));
  }
  Tensor images({n, 1, rows, cols});
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = bytes[16 + i] / 255.0;
  return images;
}

/// Checks an IDX label file (magic 0x00000801) against the image count.
inline void check_idx_labels(const std::vector<unsigned char>& bytes, std::size_t count,
                             const std::string& origin) {
  if (bytes.size() < 8) throw DataError(origin + ": IDX label header needs 8 bytes", 0);
  if (detail::read_be32(bytes, 0) != 0x00000801) {
    throw DataError(origin + ": bad IDX label magic, expected 0x00000801", 0);
  }
  const std::size_t n = detail::read_be32(bytes, 4);
  if (n != count || bytes.size() != 8 + n) {
    throw DataError(origin + ": label file holds " + std::to_string(n) + " labels in " +
                        std::to_string(bytes.size()) + " bytes, images number " +
                        std::to_string(count),
                    4);
  }
}

inline Tensor concat_images(const Tensor& a, const Tensor& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DataError("train and test images differ in shape: " + to_string(a.shape()) + " vs " +
                    to_string(b.shape()));
  }
  std::vector<double> all(a.data().begin(), a.data().end());
  all.insert(all.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)}, std::move(all));
}

/// Holds out kValidationFraction of the training source, chosen by `seed`.
inline void split_dataset(Dataset& d, std::uint64_t seed) {
  std::vector<std::size_t> train = detail::iota_indices(0, d.source_train);
  std::mt19937_64 rng(seed);
  std::shuffle(train.begin(), train.end(), rng);
  const auto n_val = static_cast<std::size_t>(kValidationFraction * static_cast<double>(d.source_train));
  if (n_val == 0 || n_val == d.source_train) {
    throw DataError(d.name + ": training source of " + std::to_string(d.source_train) +
                    " images is too small to split");
  }
  d.validation.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
  d.train.assign(train.begin() + static_cast<std::ptrdiff_t>(n_val), train.end());
  std::sort(d.validation.begin(), d.validation.end());
  std::sort(d.train.begin(), d.train.end());
  d.test = detail::iota_indices(d.source_train, d.count());
  d.split_seed = seed;
}

/// Reads train-images-idx3-ubyte and t10k-images-idx3-ubyte from `dir`.
/// Label files are checked for consistency when present but never used.
inline Dataset load_mnist(const std::string& dir, std::uint64_t split_seed) {
  namespace fs = std::filesystem;
  auto images = [&](const char* file) {
    const std::string path = (fs::path(dir) / file).string();
    return parse_idx_images(detail::read_file_bytes(path), path);
  };
  auto labels = [&](const char* file, std::size_t count) {
    const fs::path path = fs::path(dir) / file;
    if (fs::exists(path)) check_idx_labels(detail::read_file_bytes(path.string()), count, path.string());
  };
  Tensor train = images("train-images-idx3-ubyte");
  Tensor test = images("t10k-images-idx3-ubyte");
  labels("train-labels-idx1-ubyte", train.dim(0));
  labels("t10k-labels-idx1-ubyte", test.dim(0));
  Dataset d{"mnist", concat_images(train, test), train.dim(0), {}, {}, {}, 0};
  split_dataset(d, split_seed);
  return d;
}

inline void check_unit_range(const Tensor& t, const std::string& origin) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= 0.0 && t[i] <= 1.0)) {
      throw DataError(origin + ": pixel " + std::to_string(i) + " has value " + std::to_string(t[i]) +
                      ", expected [0, 1]");
    }
  }
}

/// Raw-tensor dataset: tensor "images" [N, C, H, W] in [0, 1], and
/// optionally "test_images" of the same per-image shape. Without a test
/// tensor the last kValidationFraction of "images" serves as the test source.
inline Dataset load_raw_tensor(const std::string& path, std::uint64_t split_seed) {
  const TensorFile file = read_tensor_file(path);
  auto fetch = [&](const char* name) -> const Tensor* {
    const Tensor* t = file.find(name);
    if (t && t->rank() != 4) {
      throw DataError(path + ": tensor '" + name + "' has rank " + std::to_string(t->rank()) +
                      ", expected 4 (count, channels, height, width)");
    }
    if (t) check_unit_range(*t, path + " '" + name + "'");
    return t;
  };
  const Tensor* images = fetch("images");
  if (!images) throw DataError(path + ": no tensor named 'images'");
  const Tensor* test = fetch("test_images");
  Dataset d;
  d.name = std::filesystem::path(path).stem().string();
  if (test) {
    d.images = concat_images(*images, *test);
    d.source_train = images->dim(0);
  } else {
    d.images = *images;
    d.source_train = images->dim(0) -
                     static_cast<std::size_t>(kValidationFraction * static_cast<double>(images->dim(0)));
  }
  if (d.source_train == d.count()) throw DataError(path + ": too few images for a test split");
  split_dataset(d, split_seed);
  return d;
}

inline void write_raw_tensor(const std::string& path, const Tensor& images,
                             const Tensor* test_images = nullptr) {
  TensorFile f;
  f.header = "dataset";
  f.tensors.emplace_back("images", images);
  if (test_images) f.tensors.emplace_back("test_images", *test_images);
  write_tensor_file(path, f);
}

/// Copies the listed images into one [n, C, H, W] batch.
inline Tensor gather(const Tensor& images, const std::vector<std::size_t>& rows) {
  const std::size_t per = images.size() / images.dim(0);
  std::vector<double> out;
  out.reserve(rows.size() * per);
  for (std::size_t r : rows) {
    if (r >= images.dim(0)) throw std::out_of_range("gather: row " + std::to_string(r));
    auto src = images.data().subspan(r * per, per);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor({rows.size(), images.dim(1), images.dim(2), images.dim(3)}, std::move(out));
}

inline Tensor image_at(const Tensor& images, std::size_t row) { return gather(images, {row}); }

/// `count` disjoint (original, target) pairs from the test split.
inline EvaluationSet sample_evaluation_pairs(const Dataset& d, std::uint64_t seed,
                                             std::size_t count = 20) {
  if (count == 0) throw UsageError("evaluation set needs at least one pair");
  if (d.test.size() < 2 * count) {
    throw DataError(d.name + ": test split has " + std::to_string(d.test.size()) +
                    " images, " + std::to_string(2 * count) + " needed for " +
                    std::to_string(count) + " pairs");
  }
  std::vector<std::size_t> pool = d.test;
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  EvaluationSet set{{}, seed};
  for (std::size_t i = 0; i < count; ++i) set.pairs.emplace_back(pool[2 * i], pool[2 * i + 1]);
  return set;
}

}  // namespace avae
