#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "brcsgan/rng.hpp"
#include "brcsgan/tensor.hpp"

namespace brcsgan {

struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
  // BN running statistics live in the store but are neither optimized nor
  // clipped; only weights are.
  bool trainable = true;
};

// Ordered name -> (value, grad) map. Insertion order is the serialization
// and iteration order, so two stores built by the same code are identical.
class ParamStore {
 public:
  ParamEntry& add(const std::string& name, Tensor value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    index_[name] = entries_.size();
    ParamEntry e;
    e.name = name;
    e.grad = Tensor::zeros(value.shape());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ParamEntry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no entry " + name);
    return entries_[it->second];
  }
  const ParamEntry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no entry " + name);
    return entries_[it->second];
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0);
    grads_populated_ = false;
  }

  void mark_grads_populated() { grads_populated_ = true; }
  bool grads_populated() const { return grads_populated_; }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.numel();
    return n;
  }

  // Flattened trainable values / grads, in entry order. Used by oracles.
  std::vector<double> flat_values() const {
    std::vector<double> out;
    for (const auto& e : entries_)
      if (e.trainable) out.insert(out.end(), e.value.vec().begin(), e.value.vec().end());
    return out;
  }
  std::vector<double> flat_grads() const {
    std::vector<double> out;
    for (const auto& e : entries_)
      if (e.trainable) out.insert(out.end(), e.grad.vec().begin(), e.grad.vec().end());
    return out;
  }
  void set_flat_values(const std::vector<double>& flat) {
    std::size_t i = 0;
    for (auto& e : entries_) {
      if (!e.trainable) continue;
      for (double& v : e.value.vec()) v = flat.at(i++);
    }
    if (i != flat.size()) throw std::invalid_argument("ParamStore: flat size mismatch");
  }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  bool grads_populated_ = false;
};

// Clamp every trainable weight into [-epsilon, epsilon].
inline void clip_to_box(ParamStore& store, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("clip_to_box: epsilon must be > 0");
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (double& v : e.value.vec()) {
      if (v > epsilon) v = epsilon;
      else if (v < -epsilon) v = -epsilon;
    }
  }
}

struct OptimizerConfig {
  enum class Rule { Sgd, Adam };
  Rule rule = Rule::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain SGD or Adam over the trainable entries of one store. Moment slots
// are keyed by entry name so they survive checkpoint round trips.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(ParamStore& store) {
    if (!store.grads_populated())
      throw std::runtime_error("Optimizer::step: gradients absent (run backward first)");
    if (cfg_.rule == OptimizerConfig::Rule::Sgd) {
      for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < e.value.numel(); ++i) e.value[i] -= cfg_.lr * e.grad[i];
      }
    } else {
      ++t_;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        auto& slot = slots_[e.name];
        if (slot.m.numel() == 0) {
          slot.m = Tensor::zeros(e.value.shape());
          slot.v = Tensor::zeros(e.value.shape());
        }
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
          const double g = e.grad[i];
          slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
          slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
          e.value[i] -= cfg_.lr * (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + cfg_.eps);
        }
      }
    }
    store.zero_grads();
  }

  std::int64_t steps_taken() const { return t_; }

  // State access for checkpointing.
  struct Slot {
    Tensor m, v;
  };
  std::unordered_map<std::string, Slot>& slots() { return slots_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  OptimizerConfig cfg_;
  std::unordered_map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

// Glorot-uniform matrix init; embeddings and vectors get a flat +-scale.
inline Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  const double scale = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (double& v : t.vec()) v = rng.uniform(-scale, scale);
  return t;
}

inline Tensor init_uniform(Rng& rng, std::vector<std::size_t> shape, double scale) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace brcsgan
