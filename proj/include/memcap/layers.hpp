#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "memcap/crossbar.hpp"
#include "memcap/error.hpp"
#include "memcap/rng.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

/// Weight matrix (in x out, row-major) held either as plain numbers or on a
/// crossbar. Backprop always uses the decoded ideal weights.
template <typename T>
class WeightMatrix {
 public:
  WeightMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols) {}
  WeightMatrix(std::size_t rows, std::size_t cols, CrossbarArray crossbar)
      : rows_(rows), cols_(cols), crossbar_(std::move(crossbar)) {}

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return rows_ * cols_; }
  [[nodiscard]] bool on_crossbar() const noexcept { return crossbar_.has_value(); }
  [[nodiscard]] CrossbarArray* crossbar() noexcept { return crossbar_ ? &*crossbar_ : nullptr; }
  [[nodiscard]] const CrossbarArray* crossbar() const noexcept {
    return crossbar_ ? &*crossbar_ : nullptr;
  }

  [[nodiscard]] std::span<const T> values() const noexcept {
    if (crossbar_) return crossbar_->template weights<T>();
    return values_;
  }

  void assign(std::span<const double> w) {
    if (crossbar_) {
      crossbar_->program_weights(w);
    } else {
      for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = static_cast<T>(w[i]);
    }
  }

  [[nodiscard]] std::vector<double> to_double() const {
    const auto v = values();
    return {v.begin(), v.end()};
  }

  void set(std::size_t i, double v) {
    if (crossbar_) {
      auto w = to_double();
      w[i] = v;
      crossbar_->program_weights(w);
    } else {
      values_[i] = static_cast<T>(v);
    }
  }

  void apply_delta(std::span<const T> delta) {
    if (crossbar_) {
      std::vector<double> d(delta.begin(), delta.end());
      crossbar_->apply_update(d);
    } else {
      for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += delta[i];
    }
  }

  /// y (batch x cols) = x (batch x rows) W, through the crossbar when present.
  void multiply_rows(std::span<const T> x, std::size_t batch, std::span<T> y) {
    if (crossbar_) {
      crossbar_->vmm_rows<T>(x, batch, y);
      return;
    }
    std::fill(y.begin(), y.begin() + batch * cols_, T{0});
    for (std::size_t k = 0; k < rows_; ++k) {
      const T* wr = values_.data() + k * cols_;
      for (std::size_t b = 0; b < batch; ++b) {
        const T xk = x[b * rows_ + k];
        if (xk == T{0}) continue;
        T* yr = y.data() + b * cols_;
        for (std::size_t j = 0; j < cols_; ++j) yr[j] += xk * wr[j];
      }
    }
  }

  /// yt (cols x batch) = W^T xt (rows x batch).
  void multiply_columns(std::span<const T> xt, std::size_t batch, std::span<T> yt) {
    if (crossbar_) {
      crossbar_->vmm_columns<T>(xt, batch, yt);
      return;
    }
    std::fill(yt.begin(), yt.begin() + cols_ * batch, T{0});
    for (std::size_t j = 0; j < cols_; ++j) {
      T* yr = yt.data() + j * batch;
      for (std::size_t k = 0; k < rows_; ++k) {
        const T w = values_[k * cols_ + j];
        const T* xr = xt.data() + k * batch;
        for (std::size_t b = 0; b < batch; ++b) yr[b] += w * xr[b];
      }
    }
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<T> values_;
  std::optional<CrossbarArray> crossbar_;
};

/// Trainable tensor exposed to optimizers and gradient checks.
template <typename T>
struct ParamView {
  std::string name;
  std::size_t size = 0;
  std::span<T> grad;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  /// Per-sample output shape.
  [[nodiscard]] virtual Shape output_shape() const = 0;

  /// Forward a batch, caching what backward needs.
  virtual void forward(const Tensor<T>& in, Tensor<T>& out) = 0;

  /// Accumulate parameter gradients from grad_out and, when grad_in is
  /// non-null, write the gradient with respect to the input.
  virtual void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) = 0;

  [[nodiscard]] virtual std::vector<ParamView<T>> params() { return {}; }
  [[nodiscard]] virtual double param_value(std::size_t /*p*/, std::size_t /*i*/) const { return 0.0; }
  virtual void set_param_value(std::size_t /*p*/, std::size_t /*i*/, double /*v*/) {}
  virtual void apply_delta(std::size_t /*p*/, std::span<const T> /*delta*/) {}
  virtual void zero_grad() {}

  /// Weight storage for parameter p, or null when p is a plain vector.
  [[nodiscard]] virtual WeightMatrix<T>* weight_matrix(std::size_t /*p*/) { return nullptr; }
  [[nodiscard]] virtual std::vector<T>* plain_param(std::size_t /*p*/) { return nullptr; }
};

/// Valid-padding 2-D convolution on a crossbar of (kh*kw*in_channels) x filters.
/// Inputs and outputs are NHWC. Patch row order is (ky, kx, c).
template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(Shape in_shape, std::size_t filters, std::size_t kh, std::size_t kw, std::size_t stride,
         CrossbarArray crossbar)
      : in_(std::move(in_shape)), filters_(filters), kh_(kh), kw_(kw), stride_(stride),
        weights_(kh * kw * in_[2], filters, std::move(crossbar)),
        bias_(filters, T{0}), grad_w_(weights_.size()), grad_b_(filters) {
    out_h_ = (in_[0] - kh_) / stride_ + 1;
    out_w_ = (in_[1] - kw_) / stride_ + 1;
  }

  [[nodiscard]] std::string name() const override { return "conv2d"; }
  [[nodiscard]] Shape output_shape() const override { return {out_h_, out_w_, filters_}; }
  [[nodiscard]] std::size_t patch_size() const noexcept { return kh_ * kw_ * in_[2]; }
  [[nodiscard]] std::size_t patches() const noexcept { return out_h_ * out_w_; }

  void forward(const Tensor<T>& in, Tensor<T>& out) override {
    const std::size_t batch = in.dim(0);
    const std::size_t K = patch_size();
    const std::size_t P = patches();
    cols_.resize(batch * K * P);
    out = Tensor<T>({batch, out_h_, out_w_, filters_});
    std::vector<T> yt(filters_ * P);
    const std::size_t in_stride = in_[0] * in_[1] * in_[2];
    for (std::size_t b = 0; b < batch; ++b) {
      T* cols = cols_.data() + b * K * P;
      im2col(in.data() + b * in_stride, cols);
      weights_.multiply_columns(std::span<const T>(cols, K * P), P, yt);
      T* o = out.data() + b * P * filters_;
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t f = 0; f < filters_; ++f) o[p * filters_ + f] = yt[f * P + p] + bias_[f];
    }
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) override {
    const std::size_t batch = grad_out.dim(0);
    const std::size_t K = patch_size();
    const std::size_t P = patches();
    const auto w = weights_.values();
    std::vector<T> dyt(filters_ * P);
    std::vector<T> dcols(grad_in ? K * P : 0);
    const std::size_t in_stride = in_[0] * in_[1] * in_[2];
    if (grad_in) *grad_in = Tensor<T>({batch, in_[0], in_[1], in_[2]});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* g = grad_out.data() + b * P * filters_;
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t f = 0; f < filters_; ++f) dyt[f * P + p] = g[p * filters_ + f];
      const T* cols = cols_.data() + b * K * P;
      for (std::size_t f = 0; f < filters_; ++f) {
        const T* d = dyt.data() + f * P;
        T sb = 0;
        for (std::size_t p = 0; p < P; ++p) sb += d[p];
        grad_b_[f] += sb;
      }
      for (std::size_t k = 0; k < K; ++k) {
        const T* c = cols + k * P;
        for (std::size_t f = 0; f < filters_; ++f) {
          grad_w_[k * filters_ + f] += dot(c, dyt.data() + f * P, P);
        }
      }
      if (grad_in) {
        std::fill(dcols.begin(), dcols.end(), T{0});
        for (std::size_t k = 0; k < K; ++k) {
          T* dc = dcols.data() + k * P;
          for (std::size_t f = 0; f < filters_; ++f) {
            const T wkf = w[k * filters_ + f];
            const T* d = dyt.data() + f * P;
            for (std::size_t p = 0; p < P; ++p) dc[p] += wkf * d[p];
          }
        }
        col2im(dcols.data(), grad_in->data() + b * in_stride);
      }
    }
  }

  [[nodiscard]] std::vector<ParamView<T>> params() override {
    return {{"weight", weights_.size(), grad_w_}, {"bias", bias_.size(), grad_b_}};
  }
  [[nodiscard]] double param_value(std::size_t p, std::size_t i) const override {
    return p == 0 ? static_cast<double>(weights_.values()[i]) : static_cast<double>(bias_[i]);
  }
  void set_param_value(std::size_t p, std::size_t i, double v) override {
    if (p == 0) weights_.set(i, v);
    else bias_[i] = static_cast<T>(v);
  }
  void apply_delta(std::size_t p, std::span<const T> delta) override {
    if (p == 0) {
      weights_.apply_delta(delta);
    } else {
      for (std::size_t i = 0; i < bias_.size(); ++i) bias_[i] += delta[i];
    }
  }
  void zero_grad() override {
    std::fill(grad_w_.begin(), grad_w_.end(), T{0});
    std::fill(grad_b_.begin(), grad_b_.end(), T{0});
  }
  [[nodiscard]] WeightMatrix<T>* weight_matrix(std::size_t p) override { return p == 0 ? &weights_ : nullptr; }
  [[nodiscard]] std::vector<T>* plain_param(std::size_t p) override { return p == 1 ? &bias_ : nullptr; }

  [[nodiscard]] const WeightMatrix<T>& weights() const noexcept { return weights_; }

 private:
  void im2col(const T* img, T* cols) const {
    const std::size_t C = in_[2];
    const std::size_t W = in_[1];
    const std::size_t P = patches();
    for (std::size_t ky = 0; ky < kh_; ++ky)
      for (std::size_t kx = 0; kx < kw_; ++kx)
        for (std::size_t c = 0; c < C; ++c) {
          T* row = cols + ((ky * kw_ + kx) * C + c) * P;
          for (std::size_t oy = 0; oy < out_h_; ++oy) {
            const T* src = img + ((oy * stride_ + ky) * W + kx) * C + c;
            T* dst = row + oy * out_w_;
            for (std::size_t ox = 0; ox < out_w_; ++ox) dst[ox] = src[ox * stride_ * C];
          }
        }
  }

  void col2im(const T* dcols, T* dimg) const {
    const std::size_t C = in_[2];
    const std::size_t W = in_[1];
    const std::size_t P = patches();
    for (std::size_t ky = 0; ky < kh_; ++ky)
      for (std::size_t kx = 0; kx < kw_; ++kx)
        for (std::size_t c = 0; c < C; ++c) {
          const T* row = dcols + ((ky * kw_ + kx) * C + c) * P;
          for (std::size_t oy = 0; oy < out_h_; ++oy) {
            T* dst = dimg + ((oy * stride_ + ky) * W + kx) * C + c;
            const T* src = row + oy * out_w_;
            for (std::size_t ox = 0; ox < out_w_; ++ox) dst[ox * stride_ * C] += src[ox];
          }
        }
  }

  Shape in_;
  std::size_t filters_;
  std::size_t kh_;
  std::size_t kw_;
  std::size_t stride_;
  std::size_t out_h_ = 0;
  std::size_t out_w_ = 0;
  WeightMatrix<T> weights_;
  std::vector<T> bias_;
  std::vector<T> grad_w_;
  std::vector<T> grad_b_;
  std::vector<T> cols_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in, std::size_t units, std::optional<CrossbarArray> crossbar)
      : in_(in), units_(units),
        weights_(crossbar ? WeightMatrix<T>(in, units, std::move(*crossbar)) : WeightMatrix<T>(in, units)),
        bias_(units, T{0}), grad_w_(in * units), grad_b_(units) {}

  [[nodiscard]] std::string name() const override { return "dense"; }
  [[nodiscard]] Shape output_shape() const override { return {units_}; }

  void forward(const Tensor<T>& in, Tensor<T>& out) override {
    const std::size_t batch = in.dim(0);
    input_ = in;
    out = Tensor<T>({batch, units_});
    weights_.multiply_rows(in.span(), batch, out.span());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < units_; ++j) out[b * units_ + j] += bias_[j];
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) override {
    const std::size_t batch = grad_out.dim(0);
    const auto w = weights_.values();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* g = grad_out.data() + b * units_;
      for (std::size_t j = 0; j < units_; ++j) grad_b_[j] += g[j];
    }
    // k outer keeps one weight row in cache across the batch.
    for (std::size_t k = 0; k < in_; ++k) {
      T* gw = grad_w_.data() + k * units_;
      for (std::size_t b = 0; b < batch; ++b) {
        const T xk = input_[b * in_ + k];
        if (xk == T{0}) continue;
        const T* g = grad_out.data() + b * units_;
        for (std::size_t j = 0; j < units_; ++j) gw[j] += xk * g[j];
      }
    }
    if (grad_in) {
      *grad_in = Tensor<T>({batch, in_});
      for (std::size_t k = 0; k < in_; ++k) {
        const T* wr = w.data() + k * units_;
        for (std::size_t b = 0; b < batch; ++b)
          (*grad_in)[b * in_ + k] = dot(wr, grad_out.data() + b * units_, units_);
      }
    }
  }

  [[nodiscard]] std::vector<ParamView<T>> params() override {
    return {{"weight", weights_.size(), grad_w_}, {"bias", bias_.size(), grad_b_}};
  }
  [[nodiscard]] double param_value(std::size_t p, std::size_t i) const override {
    return p == 0 ? static_cast<double>(weights_.values()[i]) : static_cast<double>(bias_[i]);
  }
  void set_param_value(std::size_t p, std::size_t i, double v) override {
    if (p == 0) weights_.set(i, v);
    else bias_[i] = static_cast<T>(v);
  }
  void apply_delta(std::size_t p, std::span<const T> delta) override {
    if (p == 0) {
      weights_.apply_delta(delta);
    } else {
      for (std::size_t i = 0; i < bias_.size(); ++i) bias_[i] += delta[i];
    }
  }
  void zero_grad() override {
    std::fill(grad_w_.begin(), grad_w_.end(), T{0});
    std::fill(grad_b_.begin(), grad_b_.end(), T{0});
  }
  [[nodiscard]] WeightMatrix<T>* weight_matrix(std::size_t p) override { return p == 0 ? &weights_ : nullptr; }
  [[nodiscard]] std::vector<T>* plain_param(std::size_t p) override { return p == 1 ? &bias_ : nullptr; }

  [[nodiscard]] const WeightMatrix<T>& weights() const noexcept { return weights_; }

 private:
  std::size_t in_;
  std::size_t units_;
  WeightMatrix<T> weights_;
  std::vector<T> bias_;
  std::vector<T> grad_w_;
  std::vector<T> grad_b_;
  Tensor<T> input_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  explicit ReLU(Shape shape) : shape_(std::move(shape)) {}
  [[nodiscard]] std::string name() const override { return "relu"; }
  [[nodiscard]] Shape output_shape() const override { return shape_; }

  void forward(const Tensor<T>& in, Tensor<T>& out) override {
    out = in;
    for (auto& v : out.vec()) v = v > T{0} ? v : T{0};
    output_ = out;
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) override {
    if (!grad_in) return;
    *grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in->size(); ++i)
      if (!(output_[i] > T{0})) (*grad_in)[i] = T{0};
  }

 private:
  Shape shape_;
  Tensor<T> output_;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  explicit Flatten(Shape in) : in_(std::move(in)) {}
  [[nodiscard]] std::string name() const override { return "flatten"; }
  [[nodiscard]] Shape output_shape() const override { return {shape_size(in_)}; }

  void forward(const Tensor<T>& in, Tensor<T>& out) override {
    out = in;
    out.reshape({in.dim(0), shape_size(in_)});
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) override {
    if (!grad_in) return;
    *grad_in = grad_out;
    Shape s{grad_out.dim(0)};
    s.insert(s.end(), in_.begin(), in_.end());
    grad_in->reshape(std::move(s));
  }

 private:
  Shape in_;
};

/// Row-wise softmax (max-shifted). Keeps its input logits for the loss.
template <typename T>
class Softmax final : public Layer<T> {
 public:
  explicit Softmax(std::size_t classes) : classes_(classes) {}
  [[nodiscard]] std::string name() const override { return "softmax"; }
  [[nodiscard]] Shape output_shape() const override { return {classes_}; }

  void forward(const Tensor<T>& in, Tensor<T>& out) override {
    logits_ = in;
    out = in;
    const std::size_t batch = in.dim(0);
    for (std::size_t b = 0; b < batch; ++b) {
      T* row = out.data() + b * classes_;
      const T mx = *std::max_element(row, row + classes_);
      T sum = 0;
      for (std::size_t j = 0; j < classes_; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < classes_; ++j) row[j] /= sum;
    }
    output_ = out;
  }

  /// Vector-Jacobian product p * (g - <g, p>).
  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) override {
    if (!grad_in) return;
    *grad_in = grad_out;
    const std::size_t batch = grad_out.dim(0);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* p = output_.data() + b * classes_;
      const T* g = grad_out.data() + b * classes_;
      T dot = 0;
      for (std::size_t j = 0; j < classes_; ++j) dot += g[j] * p[j];
      T* gi = grad_in->data() + b * classes_;
      for (std::size_t j = 0; j < classes_; ++j) gi[j] = p[j] * (g[j] - dot);
    }
  }

  [[nodiscard]] const Tensor<T>& logits() const noexcept { return logits_; }
  [[nodiscard]] const Tensor<T>& probabilities() const noexcept { return output_; }

 private:
  std::size_t classes_;
  Tensor<T> logits_;
  Tensor<T> output_;
};

}  // namespace memcap
