#pragma once

// MNIST IDX and CIFAR-10 binary readers, bilinear resize, and the
// 40k / 20k / remainder MNIST partition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memcap/error.hpp"
#include "memcap/rng.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

struct DatasetMeta {
  std::string source;
  std::string split;
  std::uint64_t seed = 0;
};

/// Images are count x H x W x C with values in [0, 1].
struct LabeledDataset {
  Tensor<float> images;
  std::vector<int> labels;
  DatasetMeta meta;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  [[nodiscard]] std::size_t height() const { return images.dim(1); }
  [[nodiscard]] std::size_t width() const { return images.dim(2); }
  [[nodiscard]] std::size_t channels() const { return images.dim(3); }
  [[nodiscard]] std::size_t image_size() const { return height() * width() * channels(); }
  [[nodiscard]] Shape image_shape() const { return {height(), width(), channels()}; }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(n);
  if (n && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
    throw DataError("read failed: " + path.string());
  return buf;
}

inline std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049

/// Parse an IDX image/label pair. Pixels are scaled by 1/255.
inline LabeledDataset parse_mnist(std::span<const std::uint8_t> img, std::span<const std::uint8_t> lbl,
                                  const std::string& source = "mnist") {
  if (img.size() < 16) throw DataError("mnist images: truncated header");
  if (lbl.size() < 8) throw DataError("mnist labels: truncated header");
  if (detail::be32(img, 0) != kIdxImageMagic)
    throw DataError("mnist images: bad magic " + std::to_string(detail::be32(img, 0)));
  if (detail::be32(lbl, 0) != kIdxLabelMagic)
    throw DataError("mnist labels: bad magic " + std::to_string(detail::be32(lbl, 0)));
  const std::size_t count = detail::be32(img, 4);
  const std::size_t rows = detail::be32(img, 8);
  const std::size_t cols = detail::be32(img, 12);
  const std::size_t nlabels = detail::be32(lbl, 4);
  if (count != nlabels)
    throw DataError("mnist: count mismatch, " + std::to_string(count) + " images vs " +
                    std::to_string(nlabels) + " labels");
  const std::size_t payload = count * rows * cols;
  if (img.size() - 16 != payload)
    throw DataError("mnist images: payload is " + std::to_string(img.size() - 16) + " bytes, header declares " +
                    std::to_string(payload) + (img.size() - 16 < payload ? " (truncated)" : ""));
  if (lbl.size() - 8 != nlabels)
    throw DataError("mnist labels: payload is " + std::to_string(lbl.size() - 8) + " bytes, header declares " +
                    std::to_string(nlabels) + (lbl.size() - 8 < nlabels ? " (truncated)" : ""));

  LabeledDataset ds;
  ds.meta.source = source;
  ds.images = Tensor<float>({count, rows, cols, 1});
  for (std::size_t i = 0; i < payload; ++i) ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int y = lbl[8 + i];
    if (y > 9) throw DataError("mnist labels: label " + std::to_string(y) + " out of range");
    ds.labels[i] = y;
  }
  return ds;
}

inline LabeledDataset load_mnist(const std::filesystem::path& image_path,
                                 const std::filesystem::path& label_path) {
  const auto img = detail::read_file(image_path);
  const auto lbl = detail::read_file(label_path);
  return parse_mnist(img, lbl, "mnist:" + image_path.filename().string());
}

inline constexpr std::size_t kCifarRecord = 3073;

/// Parse concatenated CIFAR-10 records: label byte, then 1024 R, 1024 G,
/// 1024 B bytes in row-major order. Output is 32 x 32 x 3.
inline void append_cifar10(std::span<const std::uint8_t> bytes, LabeledDataset& ds, const std::string& name) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw DataError("cifar10 " + name + ": size " + std::to_string(bytes.size()) +
                    " is not a whole number of 3073-byte records");
  const std::size_t n = bytes.size() / kCifarRecord;
  const std::size_t old = ds.size();
  std::vector<float> px = ds.images.empty() ? std::vector<float>{} : std::move(ds.images.vec());
  px.resize((old + n) * 3072);
  ds.labels.resize(old + n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("cifar10 " + name + ": record " + std::to_string(r) + " label " +
                      std::to_string(rec[0]) + " out of range");
    ds.labels[old + r] = rec[0];
    float* dst = px.data() + (old + r) * 3072;
    for (std::size_t p = 0; p < 1024; ++p)
      for (std::size_t c = 0; c < 3; ++c) dst[p * 3 + c] = static_cast<float>(rec[1 + c * 1024 + p]) / 255.0f;
  }
  ds.images = Tensor<float>({old + n, 32, 32, 3}, std::move(px));
}

inline LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths) {
  if (batch_paths.empty()) throw DataError("cifar10: no batch files given");
  LabeledDataset ds;
  ds.meta.source = "cifar10";
  for (const auto& p : batch_paths) {
    const auto bytes = detail::read_file(p);
    append_cifar10(bytes, ds, p.filename().string());
  }
  return ds;
}

/// Corner-aligned bilinear resize per channel: output pixel (y, x) samples
/// the source at (y (H-1)/(th-1), x (W-1)/(tw-1)).
inline LabeledDataset resize_bilinear(const LabeledDataset& ds, std::size_t target_h = 20,
                                      std::size_t target_w = 20) {
  if (target_h < 2 || target_w < 2) throw InvalidParameter("target", "resize target must be at least 2x2");
  const std::size_t n = ds.size();
  const std::size_t H = ds.height();
  const std::size_t W = ds.width();
  const std::size_t C = ds.channels();
  if (H < 2 || W < 2) throw InvalidParameter("source", "resize source must be at least 2x2");

  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> t(dst);
    for (std::size_t o = 0; o < dst; ++o) {
      const double pos = static_cast<double>(o * (src - 1)) / static_cast<double>(dst - 1);
      const auto i0 = std::min(static_cast<std::size_t>(pos), src - 1);
      t[o] = {i0, std::min(i0 + 1, src - 1), pos - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, target_h);
  const auto tx = taps(W, target_w);

  LabeledDataset out;
  out.labels = ds.labels;
  out.meta = ds.meta;
  out.images = Tensor<float>({n, target_h, target_w, C});
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = ds.images.data() + i * H * W * C;
    float* dst = out.images.data() + i * target_h * target_w * C;
    for (std::size_t y = 0; y < target_h; ++y)
      for (std::size_t x = 0; x < target_w; ++x)
        for (std::size_t c = 0; c < C; ++c) {
          const auto& a = ty[y];
          const auto& b = tx[x];
          const double p00 = src[(a.i0 * W + b.i0) * C + c];
          const double p01 = src[(a.i0 * W + b.i1) * C + c];
          const double p10 = src[(a.i1 * W + b.i0) * C + c];
          const double p11 = src[(a.i1 * W + b.i1) * C + c];
          const double top = p00 + b.f * (p01 - p00);
          const double bot = p10 + b.f * (p11 - p10);
          const double v = top + a.f * (bot - top);
          dst[(y * target_w + x) * C + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
  }
  return out;
}

/// Samples at the given indices, in that order.
inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> idx,
                             const std::string& split = {}) {
  const std::size_t stride = ds.image_size();
  LabeledDataset out;
  out.meta = ds.meta;
  if (!split.empty()) out.meta.split = split;
  Shape s = ds.images.shape();
  s[0] = idx.size();
  std::vector<float> px(idx.size() * stride);
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size()) throw InvalidParameter("index", "subset index out of range");
    std::copy_n(ds.images.data() + idx[i] * stride, stride, px.data() + i * stride);
    out.labels[i] = ds.labels[idx[i]];
  }
  out.images = Tensor<float>(std::move(s), std::move(px));
  return out;
}

/// First min(n, size) samples.
inline LabeledDataset take(const LabeledDataset& ds, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, ds.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(ds, idx);
}

inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.image_shape() != b.image_shape()) throw ShapeMismatch("concat: image shapes differ");
  LabeledDataset out;
  out.meta = a.meta;
  std::vector<float> px(a.images.vec());
  px.insert(px.end(), b.images.vec().begin(), b.images.vec().end());
  Shape s = a.images.shape();
  s[0] = a.size() + b.size();
  out.images = Tensor<float>(std::move(s), std::move(px));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

/// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> holdout;
};

inline constexpr std::size_t kPaperTrain = 40000;
inline constexpr std::size_t kPaperTest = 20000;

/// Index partition behind split_paper: seeded shuffle, then 40000 train,
/// 20000 test, the rest holdout.
inline SplitIndices paper_split_indices(std::size_t n, std::uint64_t seed) {
  if (n < kPaperTrain + kPaperTest)
    throw DataError("split_paper: need at least 60000 samples, have " + std::to_string(n));
  const auto idx = shuffled_indices(n, derive_seed(seed, 0x5917));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + kPaperTrain);
  s.test.assign(idx.begin() + kPaperTrain, idx.begin() + kPaperTrain + kPaperTest);
  s.holdout.assign(idx.begin() + kPaperTrain + kPaperTest, idx.end());
  return s;
}

struct PaperSplit {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset holdout;
};

inline PaperSplit split_paper(const LabeledDataset& ds, std::uint64_t seed) {
  const auto s = paper_split_indices(ds.size(), seed);
  PaperSplit out{subset(ds, s.train, "train"), subset(ds, s.test, "test"), subset(ds, s.holdout, "holdout")};
  out.train.meta.seed = out.test.meta.seed = out.holdout.meta.seed = seed;
  return out;
}

}  // namespace memcap
