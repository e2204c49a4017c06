#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memcap/crossbar.hpp"
#include "memcap/device.hpp"
#include "memcap/error.hpp"
#include "memcap/layers.hpp"
#include "memcap/rng.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

/// Mapping and non-idealities shared by every crossbar in a network. Each
/// crossbar gets its own seed derived from the network seed and its layer
/// index.
struct CrossbarConfig {
  WeightMapping mapping = WeightMapping::from_device(MemcapParams{});
  NonidealityConfig nonideality;
};

enum class LayerKind { conv2d, relu, flatten, dense, softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;  // conv2d
  std::size_t kernel_h = 5;
  std::size_t kernel_w = 5;
  std::size_t stride = 1;
  std::size_t units = 0;          // dense
  bool crossbar_backed = false;   // dense only; conv2d always runs on a crossbar

  static LayerSpec conv(std::size_t filters) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.filters = filters;
    return s;
  }
  static LayerSpec dense(std::size_t units, bool on_crossbar = false) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    s.crossbar_backed = on_crossbar;
    return s;
  }
  static LayerSpec of(LayerKind k) {
    LayerSpec s;
    s.kind = k;
    return s;
  }
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "relu") return LayerKind::relu;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "dense") return LayerKind::dense;
  if (s == "softmax") return LayerKind::softmax;
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct NetworkSpec {
  std::string name;
  Shape input;  // H x W x C
  std::vector<LayerSpec> layers;
  CrossbarConfig crossbar;

  /// Per-sample output shape of every layer. Throws ShapeMismatch naming
  /// the first layer whose input does not fit.
  [[nodiscard]] std::vector<Shape> output_shapes() const {
    if (input.size() != 3 || shape_size(input) == 0)
      throw ShapeMismatch("network input must be H x W x C with non-zero extents");
    std::vector<Shape> out;
    Shape cur = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
      switch (l.kind) {
        case LayerKind::conv2d:
          if (cur.size() != 3) throw ShapeMismatch(where + ": expects H x W x C input, got " + shape_string(cur));
          if (l.filters == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0)
            throw ShapeMismatch(where + ": filters, kernel and stride must be positive");
          if (cur[0] < l.kernel_h || cur[1] < l.kernel_w)
            throw ShapeMismatch(where + ": kernel larger than input " + shape_string(cur));
          cur = {(cur[0] - l.kernel_h) / l.stride + 1, (cur[1] - l.kernel_w) / l.stride + 1, l.filters};
          break;
        case LayerKind::relu:
          break;
        case LayerKind::flatten:
          cur = {shape_size(cur)};
          break;
        case LayerKind::dense:
          if (cur.size() != 1) throw ShapeMismatch(where + ": expects flat input, got " + shape_string(cur));
          if (l.units == 0) throw ShapeMismatch(where + ": units must be positive");
          cur = {l.units};
          break;
        case LayerKind::softmax:
          if (cur.size() != 1) throw ShapeMismatch(where + ": expects flat input, got " + shape_string(cur));
          if (i + 1 != layers.size()) throw ShapeMismatch(where + ": softmax must be the last layer");
          break;
      }
      out.push_back(cur);
    }
    if (layers.empty() || layers.back().kind != LayerKind::softmax)
      throw ShapeMismatch("network must end with a softmax layer");
    return out;
  }

  [[nodiscard]] std::size_t classes() const { return output_shapes().back()[0]; }

  /// 20x20x1 -> conv 5@5x5 -> relu -> flatten 1280 -> dense 64 -> relu -> dense 10 -> softmax.
  static NetworkSpec mnist(CrossbarConfig xbar = {}, bool dense_on_crossbar = false) {
    NetworkSpec s;
    s.name = "mnist";
    s.input = {20, 20, 1};
    s.crossbar = xbar;
    s.layers = {LayerSpec::conv(5),
                LayerSpec::of(LayerKind::relu),
                LayerSpec::of(LayerKind::flatten),
                LayerSpec::dense(64, dense_on_crossbar),
                LayerSpec::of(LayerKind::relu),
                LayerSpec::dense(10, dense_on_crossbar),
                LayerSpec::of(LayerKind::softmax)};
    return s;
  }

  /// 32x32x3 -> conv 5@5x5 -> relu -> conv 15@5x5 -> relu -> flatten 8640
  /// -> dense 128 -> relu -> dense 10 -> softmax.
  static NetworkSpec cifar10(CrossbarConfig xbar = {}, bool dense_on_crossbar = false) {
    NetworkSpec s;
    s.name = "cifar10";
    s.input = {32, 32, 3};
    s.crossbar = xbar;
    s.layers = {LayerSpec::conv(5),
                LayerSpec::of(LayerKind::relu),
                LayerSpec::conv(15),
                LayerSpec::of(LayerKind::relu),
                LayerSpec::of(LayerKind::flatten),
                LayerSpec::dense(128, dense_on_crossbar),
                LayerSpec::of(LayerKind::relu),
                LayerSpec::dense(10, dense_on_crossbar),
                LayerSpec::of(LayerKind::softmax)};
    return s;
  }

  static NetworkSpec preset(const std::string& name, CrossbarConfig xbar = {},
                            bool dense_on_crossbar = false) {
    if (name == "mnist") return mnist(xbar, dense_on_crossbar);
    if (name == "cifar10") return cifar10(xbar, dense_on_crossbar);
    throw ConfigError("unknown preset '" + name + "' (expected mnist or cifar10)");
  }
};

/// Identifies one trainable tensor: layer index and parameter slot.
struct ParamId {
  std::size_t layer = 0;
  std::size_t slot = 0;
};

/// Instantiated network. T is the activation/gradient precision.
template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    const auto shapes = spec_.output_shapes();
    Shape cur = spec_.input;
    CounterRng init(derive_seed(seed, 0x1417));
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      switch (l.kind) {
        case LayerKind::conv2d: {
          const std::size_t fan_in = l.kernel_h * l.kernel_w * cur[2];
          auto layer = std::make_unique<Conv2D<T>>(cur, l.filters, l.kernel_h, l.kernel_w, l.stride,
                                                   make_crossbar(i, fan_in, l.filters));
          layer->weight_matrix(0)->assign(he_uniform(init, fan_in, l.filters));
          layers_.push_back(std::move(layer));
          break;
        }
        case LayerKind::dense: {
          const std::size_t fan_in = cur[0];
          std::optional<CrossbarArray> xbar;
          if (l.crossbar_backed) xbar.emplace(make_crossbar(i, fan_in, l.units));
          auto layer = std::make_unique<Dense<T>>(fan_in, l.units, std::move(xbar));
          layer->weight_matrix(0)->assign(he_uniform(init, fan_in, l.units));
          layers_.push_back(std::move(layer));
          break;
        }
        case LayerKind::relu:
          layers_.push_back(std::make_unique<ReLU<T>>(cur));
          break;
        case LayerKind::flatten:
          layers_.push_back(std::make_unique<Flatten<T>>(cur));
          break;
        case LayerKind::softmax:
          layers_.push_back(std::make_unique<Softmax<T>>(cur[0]));
          break;
      }
      cur = shapes[i];
    }
    activations_.resize(layers_.size());
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  [[nodiscard]] const NetworkSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::size_t depth() const noexcept { return layers_.size(); }
  [[nodiscard]] Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  [[nodiscard]] const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  [[nodiscard]] std::size_t classes() const { return spec_.classes(); }

  /// Every (layer, slot) that carries trainable values, in layer order.
  [[nodiscard]] std::vector<ParamId> param_ids() {
    std::vector<ParamId> ids;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto ps = layers_[i]->params();
      for (std::size_t s = 0; s < ps.size(); ++s) ids.push_back({i, s});
    }
    return ids;
  }

  /// Crossbars owned by the network, in layer order.
  [[nodiscard]] std::vector<CrossbarArray*> crossbars() {
    std::vector<CrossbarArray*> out;
    for (auto& l : layers_)
      for (std::size_t s = 0; s < l->params().size(); ++s)
        if (auto* wm = l->weight_matrix(s); wm && wm->crossbar()) out.push_back(wm->crossbar());
    return out;
  }

  /// Class probabilities for a batch (batch x H x W x C).
  Tensor<T> forward(const Tensor<T>& batch) {
    Shape expect{batch.rank() ? batch.dim(0) : 0};
    expect.insert(expect.end(), spec_.input.begin(), spec_.input.end());
    if (batch.shape() != expect)
      throw ShapeMismatch("forward: expected batch x " + shape_string(spec_.input) + ", got " +
                          shape_string(batch.shape()));
    const Tensor<T>* cur = &batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->forward(*cur, activations_[i]);
      cur = &activations_[i];
    }
    if (!cur->all_finite()) throw NonFinite("forward: non-finite activation");
    return *cur;
  }

  /// Mean categorical cross-entropy of the cached forward pass, computed
  /// from the pre-softmax logits.
  [[nodiscard]] double cross_entropy(std::span<const int> labels) const {
    const auto& sm = static_cast<const Softmax<T>&>(*layers_.back());
    const auto& z = sm.logits();
    const std::size_t batch = z.dim(0);
    const std::size_t k = z.dim(1);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = z.data() + b * k;
      const double mx = static_cast<double>(*std::max_element(row, row + k));
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
      total += mx + std::log(s) - static_cast<double>(row[labels[b]]);
    }
    return total / static_cast<double>(batch);
  }

  /// Forward + backward. Parameter gradients are left in each layer's grad
  /// buffers (zeroed first). Returns the mean loss.
  double loss_and_grads(const Tensor<T>& batch, std::span<const int> labels) {
    const std::size_t n = batch.rank() ? batch.dim(0) : 0;
    if (labels.size() != n) throw ShapeMismatch("loss_and_grads: label count != batch size");
    const std::size_t k = classes();
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= k)
        throw InvalidParameter("label", "value " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    forward(batch);
    const double loss = cross_entropy(labels);

    // Softmax + cross-entropy: dL/dz = (p - onehot) / batch.
    const auto& probs = activations_.back();
    Tensor<T> grad(probs.shape());
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < k; ++j)
        grad[b * k + j] = (probs[b * k + j] - (static_cast<std::size_t>(labels[b]) == j ? T{1} : T{0})) * inv;

    for (auto& l : layers_) l->zero_grad();
    Tensor<T> next;
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      const bool need_input_grad = i > 0;
      layers_[i]->backward(grad, need_input_grad ? &next : nullptr);
      if (need_input_grad) std::swap(grad, next);
    }
    return loss;
  }

  [[nodiscard]] std::span<T> grad(ParamId id) { return layers_[id.layer]->params()[id.slot].grad; }
  [[nodiscard]] std::size_t param_size(ParamId id) { return layers_[id.layer]->params()[id.slot].size; }
  [[nodiscard]] double param_value(ParamId id, std::size_t i) const {
    return layers_[id.layer]->param_value(id.slot, i);
  }
  void set_param_value(ParamId id, std::size_t i, double v) { layers_[id.layer]->set_param_value(id.slot, i, v); }
  void apply_delta(ParamId id, std::span<const T> delta) { layers_[id.layer]->apply_delta(id.slot, delta); }

 private:
  CrossbarArray make_crossbar(std::size_t layer_index, std::size_t rows, std::size_t cols) const {
    NonidealityConfig ni = spec_.crossbar.nonideality;
    ni.seed = derive_seed(derive_seed(seed_, layer_index), ni.seed);
    return CrossbarArray(rows, cols, spec_.crossbar.mapping, ni);
  }

  // He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  static std::vector<double> he_uniform(CounterRng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
    return w;
  }

  NetworkSpec spec_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> activations_;
};

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  return Network<T>(spec, seed);
}

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t num_params = 20;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compare backprop gradients against central differences on a random
/// subset of parameters. Meant for float64 networks with ideal crossbars;
/// every layer with parameters contributes at least one sampled entry.
inline GradCheckResult gradient_check(Network<double>& net, const Tensor<double>& sample,
                                      std::span<const int> labels, const GradCheckOptions& opt = {}) {
  net.loss_and_grads(sample, labels);
  const auto ids = net.param_ids();
  std::vector<std::vector<double>> analytic;
  for (auto id : ids) {
    const auto g = net.grad(id);
    analytic.emplace_back(g.begin(), g.end());
  }

  CounterRng rng(derive_seed(opt.seed, 0x6C));
  std::vector<std::pair<std::size_t, std::size_t>> picks;  // (param index, element)
  for (std::size_t p = 0; p < ids.size() && picks.size() < opt.num_params; ++p)
    picks.emplace_back(p, static_cast<std::size_t>(rng.below(net.param_size(ids[p]))));
  while (picks.size() < opt.num_params) {
    const auto p = static_cast<std::size_t>(rng.below(ids.size()));
    picks.emplace_back(p, static_cast<std::size_t>(rng.below(net.param_size(ids[p]))));
  }

  GradCheckResult res;
  for (auto [p, i] : picks) {
    const ParamId id = ids[p];
    const double orig = net.param_value(id, i);
    net.set_param_value(id, i, orig + opt.h);
    net.forward(sample);
    const double lp = net.cross_entropy(labels);
    net.set_param_value(id, i, orig - opt.h);
    net.forward(sample);
    const double lm = net.cross_entropy(labels);
    net.set_param_value(id, i, orig);
    const double numeric = (lp - lm) / (2.0 * opt.h);
    const double a = analytic[p][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(a - numeric) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace memcap
