// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "avae/data.hpp"
#include "test_util.hpp"

namespace avae {
namespace {

namespace fs = std::filesystem;

std::vector<unsigned char> idx_header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
  std::vector<unsigned char> b;
  auto put = [&](std::uint32_t v) {
    for (int shift : {24, 16, 8, 0}) b.push_back(static_cast<unsigned char>(v >> shift));
  };
  put(magic);
  for (auto d : dims) put(d);
  return b;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / name; }

Dataset synthetic(std::size_t n, std::size_t test, std::uint64_t split_seed) {
  std::mt19937_64 rng(1);
  Dataset d;
  d.name = "synthetic";
  d.images = avae::testing::uniform_tensor({n, 1, 4, 4}, rng, 0.0, 1.0);
  d.source_train = n - test;
  split_dataset(d, split_seed);
  return d;
}

// ----- IDX ------------------------------------------------------------------

TEST(Idx, PixelsAreScaledByOneOver255) {
  auto b = idx_header(0x803, {2, 2, 3});
  for (unsigned char v : {0, 1, 51, 128, 254, 255, 255, 0, 17, 34, 68, 102}) b.push_back(v);
  const Tensor t = parse_idx_images(b, "mem");
  ASSERT_EQ(t.shape(), (Shape{2, 1, 2, 3}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[2], 51 / 255.0);
  EXPECT_EQ(t[5], 1.0);
  EXPECT_EQ(t[11], 102 / 255.0);
}

TEST(Idx, AllZeroFileGivesZeroPixels) {
  auto b = idx_header(0x803, {3, 28, 28});
  b.resize(b.size() + 3 * 28 * 28, 0);
  const Tensor t = parse_idx_images(b, "mem");
  EXPECT_EQ(t.shape(), (Shape{3, 1, 28, 28}));
  EXPECT_TRUE(std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; }));
}

TEST(Idx, TruncatedFileNamesExpectedAndActualLength) {
  auto b = idx_header(0x803, {2, 4, 4});
  b.resize(b.size() + 20, 7);
  try {
    parse_idx_images(b, "short.idx");
    FAIL() << "no error";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("short.idx"), std::string::npos);
    EXPECT_NE(msg.find("expected 48 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("found 36"), std::string::npos) << msg;
    EXPECT_EQ(e.offset(), 36);
  }
}

TEST(Idx, TruncatedHeaderAndBadMagicCarryOffsets) {
  try {
    parse_idx_images({0, 0, 8}, "tiny");
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 3);
  }
  auto b = idx_header(0x801, {1, 1, 1});
  b.push_back(0);
  try {
    parse_idx_images(b, "labels-as-images");
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_EQ(e.offset(), 0);
    EXPECT_NE(std::string(e.what()).find("0x00000801"), std::string::npos);
  }
}

TEST(Idx, LabelFileMustMatchImageCount) {
  auto labels = idx_header(0x801, {3});
  labels.insert(labels.end(), {1, 2, 3});
  EXPECT_NO_THROW(check_idx_labels(labels, 3, "l"));
  EXPECT_THROW(check_idx_labels(labels, 4, "l"), DataError);
  labels.pop_back();
  EXPECT_THROW(check_idx_labels(labels, 3, "l"), DataError);
}

TEST(Mnist, BundledSubsetLoadsWithTwentyPercentValidation) {
  const Dataset d = load_mnist(std::string(AVAE_SOURCE_DIR) + "/data/mnist_subset", 1);
  EXPECT_EQ(d.count(), 1200u);
  EXPECT_EQ(d.channels(), 1u);
  EXPECT_EQ(d.height(), 28u);
  EXPECT_EQ(d.width(), 28u);
  EXPECT_EQ(d.train.size(), 800u);
  EXPECT_EQ(d.validation.size(), 200u);
  EXPECT_EQ(d.test.size(), 200u);
  EXPECT_NO_THROW(check_unit_range(d.images, "mnist"));
}

TEST(Mnist, MissingFileIsADataError) {
  EXPECT_THROW(load_mnist((fs::temp_directory_path() / "avae_no_such_dir").string(), 1), DataError);
}

// ----- splits ---------------------------------------------------------------

TEST(Split, DisjointCoveringAndDeterministic) {
  const Dataset a = synthetic(100, 20, 5), b = synthetic(100, 20, 5), c = synthetic(100, 20, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_NE(a.validation, c.validation);
  EXPECT_EQ(a.validation.size(), 16u);
  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.validation.begin(), a.validation.end());
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(100);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
}

TEST(Split, TooSmallTrainingSourceIsRejected) {
  EXPECT_THROW(synthetic(6, 2, 1), DataError);
}

// ----- raw tensors ----------------------------------------------------------

TEST(RawTensor, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  const Tensor images = avae::testing::uniform_tensor({10, 1, 8, 8}, rng, 0.0, 1.0);
  const auto path = temp_file("avae_raw_roundtrip.bin");
  write_raw_tensor(path.string(), images);
  const Dataset d = load_raw_tensor(path.string(), 4);
  ASSERT_EQ(d.images.shape(), images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    ASSERT_EQ(std::bit_cast<std::uint64_t>(d.images[i]), std::bit_cast<std::uint64_t>(images[i])) << i;
  }
  // without a test tensor the last fifth becomes the test source
  EXPECT_EQ(d.test, (std::vector<std::size_t>{8, 9}));
  EXPECT_EQ(d.train.size() + d.validation.size(), 8u);
  fs::remove(path);
}

TEST(RawTensor, SeparateTestImagesAreAppended) {
  std::mt19937_64 rng(3);
  const Tensor train = avae::testing::uniform_tensor({10, 3, 4, 4}, rng, 0.0, 1.0);
  const Tensor test = avae::testing::uniform_tensor({5, 3, 4, 4}, rng, 0.0, 1.0);
  const auto path = temp_file("avae_raw_test.bin");
  write_raw_tensor(path.string(), train, &test);
  const Dataset d = load_raw_tensor(path.string(), 4);
  EXPECT_EQ(d.count(), 15u);
  EXPECT_EQ(d.channels(), 3u);
  EXPECT_EQ(d.test.size(), 5u);
  EXPECT_EQ(d.validation.size(), 2u);
  fs::remove(path);
}

TEST(RawTensor, OutOfRangeAndWrongRankAreRejected) {
  const auto path = temp_file("avae_raw_bad.bin");
  Tensor images({10, 1, 2, 2});
  images[7] = 1.5;
  write_raw_tensor(path.string(), images);
  try {
    load_raw_tensor(path.string(), 1);
    FAIL() << "no error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("1.5"), std::string::npos) << e.what();
  }
  write_raw_tensor(path.string(), Tensor({10, 4}));
  EXPECT_THROW(load_raw_tensor(path.string(), 1), DataError);
  fs::remove(path);
}

// ----- evaluation pairs -----------------------------------------------------

TEST(Pairs, SameSeedSamePairs) {
  const Dataset d = synthetic(200, 60, 2);
  const EvaluationSet a = sample_evaluation_pairs(d, 11), b = sample_evaluation_pairs(d, 11);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.pairs.size(), 20u);
  EXPECT_EQ(sample_evaluation_pairs(d, 11, 5).pairs.size(), 5u);
}

TEST(Pairs, HundredSeedsGiveHundredDifferentSets) {
  const Dataset d = synthetic(200, 60, 2);
  std::set<std::vector<std::pair<std::size_t, std::size_t>>> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(sample_evaluation_pairs(d, s).pairs);
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Pairs, DrawnFromTestSplitWithoutReuse) {
  const Dataset d = load_mnist(std::string(AVAE_SOURCE_DIR) + "/data/mnist_subset", 3);
  const EvaluationSet ev = sample_evaluation_pairs(d, 9);
  std::set<std::size_t> used;
  const std::set<std::size_t> test(d.test.begin(), d.test.end());
  for (auto [o, t] : ev.pairs) {
    EXPECT_NE(o, t);
    EXPECT_TRUE(test.count(o) && test.count(t));
    used.insert(o);
    used.insert(t);
  }
  EXPECT_EQ(used.size(), 40u);
  for (std::size_t i : d.train) EXPECT_FALSE(used.count(i));
  for (std::size_t i : d.validation) EXPECT_FALSE(used.count(i));
}

TEST(Pairs, SmallTestSplitAndEmptyRequestAreErrors) {
  const Dataset d = synthetic(100, 30, 2);
  EXPECT_THROW(sample_evaluation_pairs(d, 1), DataError);
  EXPECT_NO_THROW(sample_evaluation_pairs(d, 1, 15));
  EXPECT_THROW(sample_evaluation_pairs(d, 1, 0), UsageError);
}

}  // namespace
}  // namespace avae
