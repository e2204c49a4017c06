#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memcap/dataset.hpp"
#include "memcap/error.hpp"
#include "memcap/network.hpp"
#include "memcap/rng.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const {
    if (batch_size == 0) throw InvalidParameter("batch_size", "must be >= 1");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
      throw InvalidParameter("learning_rate", "must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidParameter("momentum", "must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InvalidParameter("beta1", "must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidParameter("beta2", "must be in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidParameter("epsilon", "must be > 0");
  }
};

/// SGD with momentum or Adam. Produces a delta per parameter tensor which
/// the owning layer applies (crossbar layers reprogram their cells).
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainConfig& cfg, Network<T>& net) : cfg_(cfg), ids_(net.param_ids()) {
    for (auto id : ids_) {
      first_.emplace_back(net.param_size(id), T{0});
      if (cfg_.optimizer == OptimizerKind::adam) second_.emplace_back(net.param_size(id), T{0});
    }
  }

  void step(Network<T>& net) {
    ++steps_;
    std::vector<T> delta;
    const T lr = static_cast<T>(cfg_.learning_rate);
    for (std::size_t p = 0; p < ids_.size(); ++p) {
      const auto g = net.grad(ids_[p]);
      delta.resize(g.size());
      auto& m = first_[p];
      if (cfg_.optimizer == OptimizerKind::sgd) {
        const T mu = static_cast<T>(cfg_.momentum);
        for (std::size_t i = 0; i < g.size(); ++i) {
          m[i] = mu * m[i] - lr * g[i];
          delta[i] = m[i];
        }
      } else {
        auto& v = second_[p];
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T eps = static_cast<T>(cfg_.epsilon);
        const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
        const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
        for (std::size_t i = 0; i < g.size(); ++i) {
          m[i] = b1 * m[i] + (T{1} - b1) * g[i];
          v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
          const T mhat = m[i] / c1;
          const T vhat = v[i] / c2;
          delta[i] = -lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
      net.apply_delta(ids_[p], delta);
    }
  }

  [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }
  [[nodiscard]] std::vector<std::vector<T>>& first_moments() noexcept { return first_; }
  [[nodiscard]] std::vector<std::vector<T>>& second_moments() noexcept { return second_; }
  [[nodiscard]] const TrainConfig& config() const noexcept { return cfg_; }
  /// The epoch budget is not part of the update rule, so a resumed run may extend it.
  void set_epochs(std::size_t epochs) noexcept { cfg_.epochs = epochs; }

 private:
  TrainConfig cfg_;
  std::vector<ParamId> ids_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::uint64_t steps_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

/// Copy the samples at idx into a batch tensor.
template <typename T>
Tensor<T> gather_batch(const LabeledDataset& ds, std::span<const std::size_t> idx, std::vector<int>& labels) {
  const std::size_t stride = ds.image_size();
  Shape s{idx.size()};
  const auto img = ds.image_shape();
  s.insert(s.end(), img.begin(), img.end());
  Tensor<T> batch(std::move(s));
  labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = ds.images.data() + idx[i] * stride;
    std::copy_n(src, stride, batch.data() + i * stride);
    labels[i] = ds.labels[idx[i]];
  }
  return batch;
}

/// One pass over the shuffled dataset. The shuffle depends only on
/// (cfg.seed, epoch), so resuming at an epoch boundary replays exactly.
template <typename T>
EpochMetrics train_epoch(Network<T>& net, Optimizer<T>& opt, const LabeledDataset& ds,
                         const TrainConfig& cfg, std::size_t epoch) {
  cfg.validate();
  if (ds.size() == 0) throw DataError("train_epoch: empty dataset");
  const auto order = shuffled_indices(ds.size(), derive_seed(cfg.seed, 0xE90C0000ULL + epoch));
  const std::size_t k = net.classes();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<int> labels;
  for (std::size_t first = 0; first < ds.size(); first += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, ds.size() - first);
    const auto idx = std::span<const std::size_t>(order).subspan(first, n);
    const auto batch = gather_batch<T>(ds, idx, labels);
    const double loss = net.loss_and_grads(batch, labels);
    if (!std::isfinite(loss)) throw NonFinite("train_epoch: loss is not finite");
    loss_sum += loss * static_cast<double>(n);
    // Accuracy from the probabilities of this forward pass (pre-update).
    const auto& sm = static_cast<const Softmax<T>&>(net.layer(net.depth() - 1));
    const auto& p = sm.probabilities();
    for (std::size_t b = 0; b < n; ++b) {
      const T* row = p.data() + b * k;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      if (pred == static_cast<std::size_t>(labels[b])) ++correct;
    }
    opt.step(net);
  }
  EpochMetrics m;
  m.epoch = epoch + 1;
  m.train_loss = loss_sum / static_cast<double>(ds.size());
  m.train_accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return m;
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

template <typename T>
EvalResult evaluate(Network<T>& net, const LabeledDataset& ds, std::size_t batch_size = 256) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  const std::size_t k = net.classes();
  EvalResult r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (std::size_t first = 0; first < ds.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - first);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), first);
    const auto batch = gather_batch<T>(ds, idx, labels);
    const auto p = net.forward(batch);
    loss_sum += net.cross_entropy(labels) * static_cast<double>(n);
    for (std::size_t b = 0; b < n; ++b) {
      const T* row = p.data() + b * k;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      ++r.confusion[static_cast<std::size_t>(labels[b])][pred];
    }
  }
  std::size_t trace = 0;
  for (std::size_t i = 0; i < k; ++i) trace += r.confusion[i][i];
  r.accuracy = static_cast<double>(trace) / static_cast<double>(ds.size());
  r.loss = loss_sum / static_cast<double>(ds.size());
  return r;
}

}  // namespace memcap
