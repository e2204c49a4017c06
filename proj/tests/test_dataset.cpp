#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "memcap/dataset.hpp"
#include "memcap/error.hpp"

using namespace memcap;
namespace fs = std::filesystem;

namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint8_t fill = 0,
                                     std::uint32_t magic = 0x803) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(fill ? fill : static_cast<std::uint8_t>(i % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t n, std::uint32_t magic = 0x801) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, n);
  for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
  return b;
}

std::vector<std::uint8_t> cifar_record(std::uint8_t label, std::array<std::uint8_t, 3> rgb) {
  std::vector<std::uint8_t> r{label};
  for (auto c : rgb) r.insert(r.end(), 1024, c);
  return r;
}

fs::path data_dir() { return MEMCAP_TEST_DATA_DIR; }

LabeledDataset pool_of(std::size_t n) {
  LabeledDataset ds;
  ds.images = Tensor<float>({n, 2, 2, 1});
  for (std::size_t i = 0; i < n; ++i) ds.images[i * 4] = static_cast<float>(i) / static_cast<float>(n);
  ds.labels.resize(n);
  // Uneven class sizes, like the real digits.
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>((i * 7 + i / 3) % 10);
  return ds;
}

}  // namespace

TEST(Mnist, ParsesHeaderAndScales) {
  const auto ds = parse_mnist(idx_images(3, 4, 5), idx_labels(3));
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.images.shape(), (Shape{3, 4, 5, 1}));
  EXPECT_EQ(ds.images[0], 0.0f);
  EXPECT_FLOAT_EQ(ds.images[7], 7.0f / 255.0f);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 2}));
  const auto white = parse_mnist(idx_images(1, 2, 2, 255), idx_labels(1));
  for (float v : white.images.vec()) EXPECT_EQ(v, 1.0f);
}

TEST(Mnist, RejectsBadMagic) {
  EXPECT_THROW(parse_mnist(idx_images(2, 4, 4, 0, 0x802), idx_labels(2)), DataError);
  EXPECT_THROW(parse_mnist(idx_images(2, 4, 4), idx_labels(2, 0x803)), DataError);
  // Swapped files.
  EXPECT_THROW(parse_mnist(idx_labels(2), idx_images(2, 4, 4)), DataError);
}

TEST(Mnist, RejectsTruncation) {
  auto img = idx_images(4, 3, 3);
  img.pop_back();
  EXPECT_THROW(parse_mnist(img, idx_labels(4)), DataError);
  auto lbl = idx_labels(4);
  lbl.pop_back();
  EXPECT_THROW(parse_mnist(idx_images(4, 3, 3), lbl), DataError);
  EXPECT_THROW(parse_mnist(std::vector<std::uint8_t>(10, 0), idx_labels(4)), DataError);
  auto extra = idx_images(4, 3, 3);
  extra.push_back(0);
  EXPECT_THROW(parse_mnist(extra, idx_labels(4)), DataError);
}

TEST(Mnist, RejectsCountMismatch) {
  EXPECT_THROW(parse_mnist(idx_images(5, 2, 2), idx_labels(4)), DataError);
}

TEST(Mnist, RejectsLabelOutOfRange) {
  auto lbl = idx_labels(3);
  lbl.back() = 10;
  EXPECT_THROW(parse_mnist(idx_images(3, 2, 2), lbl), DataError);
}

TEST(Mnist, MissingFile) {
  EXPECT_THROW(load_mnist("/nonexistent/a", "/nonexistent/b"), DataError);
}

TEST(Mnist, RoundTripThroughFiles) {
  const fs::path dir = fs::temp_directory_path() / "memcap_test_idx";
  fs::create_directories(dir);
  const auto img = idx_images(6, 28, 28);
  const auto lbl = idx_labels(6);
  std::ofstream(dir / "img", std::ios::binary).write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  std::ofstream(dir / "lbl", std::ios::binary).write(reinterpret_cast<const char*>(lbl.data()), static_cast<std::streamsize>(lbl.size()));
  const auto ds = load_mnist(dir / "img", dir / "lbl");
  EXPECT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds.images.size(), 6u * 28 * 28);
  fs::remove_all(dir);
}

TEST(Mnist, OfficialFilesMatchDeclaredCounts) {
  const auto dir = data_dir() / "mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "mnist files not present in " << dir;
  for (auto [img, lbl, n] : {std::tuple{"train-images-idx3-ubyte", "train-labels-idx1-ubyte", 60000u},
                             std::tuple{"t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 10000u}}) {
    const auto ds = load_mnist(dir / img, dir / lbl);
    EXPECT_EQ(ds.size(), n);
    EXPECT_EQ(ds.height(), 28u);
    EXPECT_EQ(ds.width(), 28u);
    // Oracle: the file length implied by the declared dims.
    EXPECT_EQ(fs::file_size(dir / img), 16u + static_cast<std::uintmax_t>(n) * 28 * 28);
    EXPECT_EQ(fs::file_size(dir / lbl), 8u + static_cast<std::uintmax_t>(n));
    const auto [lo, hi] = std::minmax_element(ds.images.vec().begin(), ds.images.vec().end());
    EXPECT_EQ(*lo, 0.0f);
    EXPECT_EQ(*hi, 1.0f);
  }
}

TEST(Cifar, ParsesPlanesIntoHwc) {
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t> rec{3};
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 1024; ++p) rec.push_back(static_cast<std::uint8_t>((p + c * 50) % 256));
  bytes.insert(bytes.end(), rec.begin(), rec.end());
  const auto more = cifar_record(9, {255, 0, 128});
  bytes.insert(bytes.end(), more.begin(), more.end());
  LabeledDataset ds;
  append_cifar10(bytes, ds, "mem");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(ds.images.shape(), (Shape{2, 32, 32, 3}));
  // Pixel (y=1, x=2) is plane offset 34.
  const std::size_t p = 1 * 32 + 2;
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_FLOAT_EQ(ds.images[p * 3 + c], static_cast<float>((34 + c * 50) % 256) / 255.0f);
  EXPECT_EQ(ds.images[3072 + 0], 1.0f);
  EXPECT_EQ(ds.images[3072 + 1], 0.0f);
}

TEST(Cifar, ConstantRecordIsConstantImage) {
  LabeledDataset ds;
  append_cifar10(cifar_record(1, {77, 77, 77}), ds, "mem");
  for (float v : ds.images.vec()) EXPECT_EQ(v, 77.0f / 255.0f);
}

TEST(Cifar, RejectsBadSizeAndLabel) {
  LabeledDataset ds;
  auto rec = cifar_record(2, {1, 2, 3});
  rec.pop_back();
  EXPECT_THROW(append_cifar10(rec, ds, "short"), DataError);
  EXPECT_THROW(append_cifar10(std::vector<std::uint8_t>{}, ds, "empty"), DataError);
  EXPECT_THROW(append_cifar10(cifar_record(17, {0, 0, 0}), ds, "label"), DataError);
  const std::vector<fs::path> none;
  EXPECT_THROW(load_cifar10(none), DataError);
}

TEST(Cifar, OfficialBatchMatchesFileSize) {
  const auto file = data_dir() / "cifar-10-batches-bin" / "data_batch_1.bin";
  if (!fs::exists(file)) GTEST_SKIP() << "cifar files not present";
  const std::vector<fs::path> files{file};
  const auto ds = load_cifar10(files);
  EXPECT_EQ(ds.size(), fs::file_size(file) / kCifarRecord);
  EXPECT_EQ(ds.size(), 10000u);
  std::array<int, 10> counts{};
  for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_GT(c, 900);
}

TEST(Resize, ConstantImageStaysConstant) {
  LabeledDataset ds;
  ds.images = Tensor<float>({2, 28, 28, 3}, 0.4f);
  ds.labels = {1, 2};
  const auto r = resize_bilinear(ds, 20, 20);
  EXPECT_EQ(r.images.shape(), (Shape{2, 20, 20, 3}));
  for (float v : r.images.vec()) EXPECT_EQ(v, 0.4f);
  EXPECT_EQ(r.labels, ds.labels);
}

TEST(Resize, IdentityIsBitwise) {
  LabeledDataset ds;
  ds.images = Tensor<float>({1, 28, 28, 1});
  for (std::size_t i = 0; i < 784; ++i) ds.images[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  ds.labels = {0};
  EXPECT_EQ(resize_bilinear(ds, 28, 28).images, ds.images);
}

TEST(Resize, HorizontalRamp) {
  LabeledDataset ds;
  ds.images = Tensor<float>({1, 28, 28, 1});
  for (std::size_t y = 0; y < 28; ++y)
    for (std::size_t x = 0; x < 28; ++x) ds.images[y * 28 + x] = static_cast<float>(x) / 27.0f;
  ds.labels = {0};
  const auto r = resize_bilinear(ds, 20, 20);
  for (std::size_t y = 0; y < 20; ++y) {
    EXPECT_EQ(r.images[y * 20], 0.0f);
    EXPECT_EQ(r.images[y * 20 + 19], 1.0f);
    // Corner-aligned: output x samples source x * 27 / 19, so the ramp value is x / 19.
    for (std::size_t x = 0; x < 20; ++x) EXPECT_NEAR(r.images[y * 20 + x], static_cast<double>(x) / 19.0, 1e-6);
  }
}

TEST(Resize, RangeAndDegenerateTargets) {
  LabeledDataset ds;
  ds.images = Tensor<float>({3, 28, 28, 1});
  for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = (i % 3 == 0) ? 1.0f : 0.0f;
  ds.labels = {0, 1, 2};
  const auto r = resize_bilinear(ds, 20, 20);
  for (float v : r.images.vec()) {
    ASSERT_FALSE(std::isnan(v));
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_THROW(resize_bilinear(ds, 1, 20), InvalidParameter);
  EXPECT_THROW(resize_bilinear(ds, 20, 0), InvalidParameter);
}

TEST(Split, SizesDisjointAndExhaustive) {
  const auto s = paper_split_indices(70000, 3);
  EXPECT_EQ(s.train.size(), 40000u);
  EXPECT_EQ(s.test.size(), 20000u);
  EXPECT_EQ(s.holdout.size(), 10000u);
  std::vector<std::size_t> all(s.train);
  all.insert(all.end(), s.test.begin(), s.test.end());
  all.insert(all.end(), s.holdout.begin(), s.holdout.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(70000);
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  EXPECT_EQ(all, expect);
}

TEST(Split, SeedDeterminesPartition) {
  const auto a = paper_split_indices(70000, 5);
  const auto b = paper_split_indices(70000, 5);
  const auto c = paper_split_indices(70000, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.holdout, b.holdout);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, InsufficientData) {
  EXPECT_THROW(paper_split_indices(59999, 0), DataError);
  EXPECT_THROW(split_paper(pool_of(100), 0), DataError);
}

TEST(Split, SubsetsCarryImagesWithLabels) {
  const auto pool = pool_of(70000);
  const auto s = split_paper(pool, 1);
  const auto idx = paper_split_indices(70000, 1);
  for (std::size_t i : {0u, 123u, 39999u}) {
    EXPECT_EQ(s.train.labels[i], pool.labels[idx.train[i]]);
    EXPECT_EQ(s.train.images[i * 4], pool.images[idx.train[i] * 4]);
  }
  EXPECT_EQ(s.holdout.meta.split, "holdout");
  EXPECT_EQ(s.test.meta.seed, 1u);
}

TEST(Split, LabelDistributionFollowsPool) {
  const auto pool = pool_of(70000);
  std::array<double, 10> p{};
  for (int y : pool.labels) p[static_cast<std::size_t>(y)] += 1.0 / 70000.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = split_paper(pool, seed);
    for (const auto* part : {&s.train, &s.test, &s.holdout}) {
      std::array<double, 10> q{};
      for (int y : part->labels) q[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(part->size());
      for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(q[c], p[c], 0.02) << "seed " << seed << " class " << c;
    }
  }
}

TEST(Split, RealMnistPool) {
  const auto dir = data_dir() / "mnist";
  if (!fs::exists(dir / "t10k-images-idx3-ubyte")) GTEST_SKIP() << "mnist files not present";
  const auto pool = concat(load_mnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                           load_mnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"));
  ASSERT_EQ(pool.size(), 70000u);
  const auto s = split_paper(pool, 0);
  EXPECT_EQ(s.train.size(), 40000u);
  EXPECT_EQ(s.test.size(), 20000u);
  EXPECT_EQ(s.holdout.size(), 10000u);
}

TEST(Dataset, TakeAndConcat) {
  const auto a = pool_of(10);
  const auto t = take(a, 4);
  EXPECT_EQ(t.size(), 4u);
  EXPECT_EQ(take(a, 100).size(), 10u);
  const auto c = concat(a, t);
  EXPECT_EQ(c.size(), 14u);
  EXPECT_EQ(c.labels[10], a.labels[0]);
  LabeledDataset other;
  other.images = Tensor<float>({1, 3, 3, 1});
  other.labels = {0};
  EXPECT_THROW(concat(a, other), ShapeMismatch);
}

TEST(Dataset, ShuffleIsAPermutation) {
  auto idx = shuffled_indices(1000, 9);
  EXPECT_EQ(idx, shuffled_indices(1000, 9));
  std::vector<std::size_t> sorted(idx);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(sorted[i], i);
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < 1000; ++i) fixed += idx[i] == i;
  EXPECT_LT(fixed, 10u);
}
