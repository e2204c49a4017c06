#pragma once

// Differential memcapacitive crossbar: signed weights stored as capacitance
// pairs, charge-summation vector-matrix multiply, and the four injectable
// non-idealities (programming error, read noise, quantization, stuck cells).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "memcap/device.hpp"
#include "memcap/error.hpp"
#include "memcap/rng.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

/// Linear map between a signed weight and a (c+, c-) pair:
/// c+- = c_mid +- w c_ref / 2, with c_ref = (c_max - c_min) / w_max.
struct WeightMapping {
  double c_min = 0.0;  // F
  double c_max = 0.0;  // F
  double w_max = 1.0;

  /// Capacitance window reachable by a device with `params`.
  static WeightMapping from_device(const MemcapParams& params, double w_max = 1.0) {
    const auto [lo, hi] = Device(params).capacitance_range();
    return {lo, hi, w_max};
  }

  void validate() const {
    if (!std::isfinite(c_min) || c_min <= 0.0) throw InvalidParameter("c_min", "must be finite and > 0");
    if (!std::isfinite(c_max) || c_max <= c_min) throw InvalidParameter("c_max", "must exceed c_min");
    if (!std::isfinite(w_max) || w_max <= 0.0) throw InvalidParameter("w_max", "must be finite and > 0");
  }

  [[nodiscard]] double c_mid() const noexcept { return 0.5 * (c_min + c_max); }
  [[nodiscard]] double c_ref() const noexcept { return (c_max - c_min) / w_max; }

  [[nodiscard]] std::pair<double, double> encode(double w) const noexcept {
    const double half = 0.5 * w * c_ref();
    return {c_mid() + half, c_mid() - half};
  }

  [[nodiscard]] double decode(double c_plus, double c_minus) const noexcept {
    return (c_plus - c_minus) / c_ref();
  }
};

struct NonidealityConfig {
  double program_sigma = 0.0;     // relative std of the programmed capacitance
  double read_sigma = 0.0;        // output noise std relative to full scale
  std::optional<int> bits;        // levels = 2^bits; unset = continuous
  double stuck_fraction = 0.0;    // per-cell probability of being stuck
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(program_sigma) || program_sigma < 0.0)
      throw InvalidParameter("program_sigma", "must be finite and >= 0");
    if (!std::isfinite(read_sigma) || read_sigma < 0.0)
      throw InvalidParameter("read_sigma", "must be finite and >= 0");
    if (bits && (*bits < 1 || *bits > 48)) throw InvalidParameter("bits", "must be in [1, 48]");
    if (!(stuck_fraction >= 0.0 && stuck_fraction <= 1.0))
      throw InvalidParameter("stuck_fraction", "must be in [0, 1]");
  }

  [[nodiscard]] bool ideal() const noexcept {
    return program_sigma == 0.0 && read_sigma == 0.0 && !bits && stuck_fraction == 0.0;
  }
};

enum class CellState : std::uint8_t { free = 0, stuck_low = 1, stuck_high = 2 };

/// m x n array of differential capacitance pairs. Row k is driven by input
/// x_k; column i sums charge into output y_i.
///
/// Not thread-safe: programming and the noisy multiply paths advance the
/// seeded noise streams. The `ideal_*` multiply paths are const.
class CrossbarArray {
 public:
  CrossbarArray(std::size_t rows, std::size_t cols, WeightMapping mapping,
                NonidealityConfig nonideality = {})
      : rows_(rows), cols_(cols), mapping_(mapping), nonideality_(nonideality) {
    if (rows == 0) throw InvalidParameter("rows", "must be >= 1");
    if (cols == 0) throw InvalidParameter("cols", "must be >= 1");
    mapping_.validate();
    nonideality_.validate();
    program_rng_ = CounterRng(derive_seed(nonideality_.seed, 1));
    read_rng_ = CounterRng(derive_seed(nonideality_.seed, 2));

    const std::size_t n = rows * cols;
    c_plus_.assign(n, mapping_.c_mid());
    c_minus_.assign(n, mapping_.c_mid());
    mask_.assign(n, CellState::free);
    if (nonideality_.stuck_fraction > 0.0) {
      CounterRng mask_rng(derive_seed(nonideality_.seed, 0));
      for (std::size_t i = 0; i < n; ++i) {
        const double u = mask_rng.uniform();
        const double side = mask_rng.uniform();
        if (u <= nonideality_.stuck_fraction) {
          mask_[i] = side <= 0.5 ? CellState::stuck_low : CellState::stuck_high;
          const bool high = mask_[i] == CellState::stuck_high;
          c_plus_[i] = high ? mapping_.c_max : mapping_.c_min;
          c_minus_[i] = high ? mapping_.c_min : mapping_.c_max;
        }
      }
    }
    target_plus_ = c_plus_;
    target_minus_ = c_minus_;
    refresh_cache();
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] const WeightMapping& mapping() const noexcept { return mapping_; }
  [[nodiscard]] const NonidealityConfig& nonideality() const noexcept { return nonideality_; }
  [[nodiscard]] std::span<const double> c_plus() const noexcept { return c_plus_; }
  [[nodiscard]] std::span<const double> c_minus() const noexcept { return c_minus_; }
  [[nodiscard]] std::span<const CellState> stuck_mask() const noexcept { return mask_; }
  [[nodiscard]] std::uint64_t program_counter() const noexcept { return program_rng_.counter(); }
  [[nodiscard]] std::uint64_t read_counter() const noexcept { return read_rng_.counter(); }

  /// Level the capacitance snaps to; identity when continuous.
  [[nodiscard]] double quantize(double c) const noexcept {
    if (!nonideality_.bits) return c;
    const double levels = std::ldexp(1.0, *nonideality_.bits) - 1.0;
    const double step = (mapping_.c_max - mapping_.c_min) / levels;
    const double idx = std::clamp(std::nearbyint((c - mapping_.c_min) / step), 0.0, levels);
    return idx == levels ? mapping_.c_max : mapping_.c_min + idx * step;
  }

  /// Program row-major weights w (rows x cols). Each weight is clipped to
  /// [-w_max, w_max], encoded, quantized, scaled by (1 + N(0, program_sigma))
  /// and clipped into [c_min, c_max]. Stuck cells are left alone.
  void program_weights(std::span<const double> w) {
    check_matrix(w.size(), "program_weights");
    write_cells(w, {});
  }

  void program_weights(const Tensor<double>& w) {
    check_shape(w.shape(), "program_weights");
    program_weights(w.span());
  }

  /// Decoded weights (c+ - c-) / c_ref, without read noise.
  [[nodiscard]] Tensor<double> read_weights() const {
    return Tensor<double>({rows_, cols_}, w_);
  }

  /// Decoded weights cached in the requested precision.
  template <typename T>
  [[nodiscard]] std::span<const T> weights() const noexcept {
    if constexpr (std::is_same_v<T, float>) {
      return wf_;
    } else {
      static_assert(std::is_same_v<T, double>);
      return w_;
    }
  }

  /// Add delta_w to the weights and rewrite under programming semantics.
  ///
  /// The update starts from the last programmed (pre-noise) target rather
  /// than a noisy read, and only cells whose quantized target moves are
  /// rewritten; a zero delta leaves its cell untouched. On the noise-free
  /// path this is identical to reprogramming read_weights() + delta_w.
  void apply_update(std::span<const double> delta_w) {
    check_matrix(delta_w.size(), "apply_update");
    std::vector<double> w(rows_ * cols_);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(delta_w[i])) throw NonFinite("apply_update: non-finite delta");
      w[i] = mapping_.decode(target_plus_[i], target_minus_[i]) + delta_w[i];
    }
    write_cells(w, delta_w);
  }

  void apply_update(const Tensor<double>& delta_w) {
    check_shape(delta_w.shape(), "apply_update");
    apply_update(delta_w.span());
  }

  /// y_i = sum_k x_k (c+_ki - c-_ki) / c_ref, plus read noise.
  template <typename T>
  std::vector<T> vmm(std::span<const T> x) {
    if (x.size() != rows_)
      throw ShapeMismatch("vmm: input length " + std::to_string(x.size()) + " != rows " +
                          std::to_string(rows_));
    std::vector<T> y(cols_);
    vmm_rows<T>(x, 1, y);
    return y;
  }

  /// Row-wise vmm of X (batch x rows) into batch x cols. Read noise is drawn
  /// batch-row-major over the outputs.
  template <typename T>
  Tensor<T> vmm_batch(const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != rows_)
      throw ShapeMismatch("vmm_batch: expected batch x " + std::to_string(rows_) + ", got " +
                          shape_string(x.shape()));
    Tensor<T> y({x.dim(0), cols_});
    vmm_rows<T>(x.span(), x.dim(0), y.span());
    return y;
  }

  /// Row-major batch multiply into a caller buffer.
  template <typename T>
  void vmm_rows(std::span<const T> x, std::size_t batch, std::span<T> y) {
    ideal_rows<T>(x, batch, y);
    if (nonideality_.read_sigma > 0.0) {
      const std::uint64_t base = read_rng_.reserve(batch * cols_);
      for (std::size_t b = 0; b < batch; ++b) {
        const double fs = full_scale(x.subspan(b * rows_, rows_), 1);
        for (std::size_t j = 0; j < cols_; ++j) {
          const double z = read_rng_.normal_at(base + b * cols_ + j);
          y[b * cols_ + j] += static_cast<T>(nonideality_.read_sigma * fs * z);
        }
      }
    }
  }

  /// Same multiply with column-major operands: xt is rows x batch and yt is
  /// cols x batch. Noise order matches vmm_rows on the transposed input.
  template <typename T>
  void vmm_columns(std::span<const T> xt, std::size_t batch, std::span<T> yt) {
    ideal_columns<T>(xt, batch, yt);
    if (nonideality_.read_sigma > 0.0) {
      const std::uint64_t base = read_rng_.reserve(batch * cols_);
      std::vector<double> fs(batch, 0.0);
      for (std::size_t k = 0; k < rows_; ++k) {
        const T* xr = xt.data() + k * batch;
        for (std::size_t b = 0; b < batch; ++b) fs[b] += std::abs(static_cast<double>(xr[b]));
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const double scale = nonideality_.read_sigma * mapping_.w_max * fs[b];
        for (std::size_t j = 0; j < cols_; ++j) {
          const double z = read_rng_.normal_at(base + b * cols_ + j);
          yt[j * batch + b] += static_cast<T>(scale * z);
        }
      }
    }
  }

  /// Noise-free row-major multiply.
  template <typename T>
  void ideal_rows(std::span<const T> x, std::size_t batch, std::span<T> y) const {
    const auto w = weights<T>();
    std::fill(y.begin(), y.begin() + batch * cols_, T{0});
    for (std::size_t k = 0; k < rows_; ++k) {
      const T* wr = w.data() + k * cols_;
      for (std::size_t b = 0; b < batch; ++b) {
        const T xk = x[b * rows_ + k];
        if (xk == T{0}) continue;
        T* yr = y.data() + b * cols_;
        for (std::size_t j = 0; j < cols_; ++j) yr[j] += xk * wr[j];
      }
    }
  }

  /// Noise-free column-major multiply.
  template <typename T>
  void ideal_columns(std::span<const T> xt, std::size_t batch, std::span<T> yt) const {
    const auto w = weights<T>();
    std::fill(yt.begin(), yt.begin() + cols_ * batch, T{0});
    for (std::size_t j = 0; j < cols_; ++j) {
      T* yr = yt.data() + j * batch;
      for (std::size_t k = 0; k < rows_; ++k) {
        const T wkj = w[k * cols_ + j];
        if (wkj == T{0}) continue;
        const T* xr = xt.data() + k * batch;
        for (std::size_t b = 0; b < batch; ++b) yr[b] += wkj * xr[b];
      }
    }
  }

  /// Full-scale output for one input row: w_max * sum |x_k|.
  template <typename T>
  [[nodiscard]] double full_scale(std::span<const T> x, std::size_t stride) const {
    double s = 0.0;
    for (std::size_t k = 0; k < rows_; ++k) s += std::abs(static_cast<double>(x[k * stride]));
    return mapping_.w_max * s;
  }

  /// Raw state for checkpoint restore. Spans must be rows*cols long.
  void restore(std::span<const double> c_plus, std::span<const double> c_minus,
               std::span<const double> target_plus, std::span<const double> target_minus,
               std::span<const CellState> mask, std::uint64_t program_counter,
               std::uint64_t read_counter) {
    const std::size_t n = rows_ * cols_;
    if (c_plus.size() != n || c_minus.size() != n || target_plus.size() != n ||
        target_minus.size() != n || mask.size() != n)
      throw ShapeMismatch("crossbar restore: state size mismatch");
    c_plus_.assign(c_plus.begin(), c_plus.end());
    c_minus_.assign(c_minus.begin(), c_minus.end());
    target_plus_.assign(target_plus.begin(), target_plus.end());
    target_minus_.assign(target_minus.begin(), target_minus.end());
    mask_.assign(mask.begin(), mask.end());
    program_rng_.set_counter(program_counter);
    read_rng_.set_counter(read_counter);
    refresh_cache();
  }

  [[nodiscard]] std::span<const double> target_plus() const noexcept { return target_plus_; }
  [[nodiscard]] std::span<const double> target_minus() const noexcept { return target_minus_; }

 private:
  void check_matrix(std::size_t n, const char* op) const {
    if (n != rows_ * cols_)
      throw ShapeMismatch(std::string(op) + ": expected " + std::to_string(rows_) + "x" +
                          std::to_string(cols_) + " values, got " + std::to_string(n));
  }

  void check_shape(const Shape& s, const char* op) const {
    if (s != Shape{rows_, cols_})
      throw ShapeMismatch(std::string(op) + ": expected " + std::to_string(rows_) + "x" +
                          std::to_string(cols_) + ", got " + shape_string(s));
  }

  // With a non-empty delta, cells whose delta is zero or whose quantized
  // target does not move are skipped.
  void write_cells(std::span<const double> w, std::span<const double> delta) {
    const bool only_changed = !delta.empty();
    for (double v : w)
      if (!std::isfinite(v)) throw NonFinite("program_weights: non-finite weight");
    const double wm = mapping_.w_max;
    const bool noisy = nonideality_.program_sigma > 0.0;
    const std::uint64_t base = noisy ? program_rng_.reserve(2 * w.size()) : 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (mask_[i] != CellState::free) continue;
      if (only_changed && delta[i] == 0.0) continue;
      const auto [ep, em] = mapping_.encode(std::clamp(w[i], -wm, wm));
      const double tp = quantize(ep);
      const double tm = quantize(em);
      if (only_changed && tp == target_plus_[i] && tm == target_minus_[i]) continue;
      target_plus_[i] = tp;
      target_minus_[i] = tm;
      double cp = tp;
      double cm = tm;
      if (noisy) {
        cp *= 1.0 + nonideality_.program_sigma * program_rng_.normal_at(base + 2 * i);
        cm *= 1.0 + nonideality_.program_sigma * program_rng_.normal_at(base + 2 * i + 1);
      }
      c_plus_[i] = std::clamp(cp, mapping_.c_min, mapping_.c_max);
      c_minus_[i] = std::clamp(cm, mapping_.c_min, mapping_.c_max);
    }
    refresh_cache();
  }

  void refresh_cache() {
    const std::size_t n = rows_ * cols_;
    w_.resize(n);
    wf_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      w_[i] = mapping_.decode(c_plus_[i], c_minus_[i]);
      wf_[i] = static_cast<float>(w_[i]);
    }
  }

  std::size_t rows_;
  std::size_t cols_;
  WeightMapping mapping_;
  NonidealityConfig nonideality_;
  CounterRng program_rng_;
  CounterRng read_rng_;
  std::vector<double> c_plus_;
  std::vector<double> c_minus_;
  std::vector<double> target_plus_;
  std::vector<double> target_minus_;
  std::vector<CellState> mask_;
  std::vector<double> w_;
  std::vector<float> wf_;
};

}  // namespace memcap
