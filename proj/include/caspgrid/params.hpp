#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "caspgrid/tape.hpp"
#include "caspgrid/tensor.hpp"

namespace caspgrid {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> moment1, moment2;  // optimizer state, trainable entries only
  bool trainable = true;
};

/// Named parameter tensors with paired gradient and optimizer-state storage.
/// Entries keep stable addresses and a fixed, insertion-defined order.
template <typename T>
class ParamStore {
 public:
  ParamEntry<T>& add(const std::string& name, std::vector<int64_t> dims,
                     bool trainable = true) {
    if (index_.count(name))
      throw_error(ErrorKind::Config, "duplicate parameter name: " + name);
    ParamEntry<T> e;
    e.name = name;
    e.value = Tensor<T>(dims);
    e.grad = Tensor<T>(dims);
    if (trainable) {
      e.moment1 = Tensor<T>(dims);
      e.moment2 = Tensor<T>(dims);
    }
    e.trainable = trainable;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw_error(ErrorKind::Config, "unknown parameter: " + name);
    return entries_[it->second];
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    return const_cast<ParamStore*>(this)->entry(name);
  }

  /// Raw tensor of a non-trainable buffer (e.g. batchnorm running stats).
  Tensor<T>* buffer(const std::string& name) { return &entry(name).value; }

  std::deque<ParamEntry<T>>& entries() { return entries_; }
  const std::deque<ParamEntry<T>>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  int64_t num_trainable_scalars() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.numel();
    return n;
  }

  /// Flattened view of all trainable values, in entry order (gradient-check
  /// plumbing).
  std::vector<double> trainable_to_vector() const {
    std::vector<double> v;
    v.reserve(static_cast<size_t>(num_trainable_scalars()));
    for (const auto& e : entries_)
      if (e.trainable)
        for (int64_t i = 0; i < e.value.numel(); ++i)
          v.push_back(static_cast<double>(e.value[i]));
    return v;
  }

  void trainable_from_vector(const std::vector<double>& v) {
    size_t k = 0;
    for (auto& e : entries_)
      if (e.trainable)
        for (int64_t i = 0; i < e.value.numel(); ++i)
          e.value[i] = static_cast<T>(v.at(k++));
    if (k != v.size())
      throw_error(ErrorKind::Shape, "parameter vector length mismatch");
  }

  std::vector<double> grads_to_vector() const {
    std::vector<double> v;
    v.reserve(static_cast<size_t>(num_trainable_scalars()));
    for (const auto& e : entries_)
      if (e.trainable)
        for (int64_t i = 0; i < e.grad.numel(); ++i)
          v.push_back(static_cast<double>(e.grad[i]));
    return v;
  }

  /// Index of the trainable scalar at flat position i, as "name[j]".
  std::string describe_trainable(int64_t flat) const {
    for (const auto& e : entries_) {
      if (!e.trainable) continue;
      if (flat < e.value.numel()) return e.name + "[" + std::to_string(flat) + "]";
      flat -= e.value.numel();
    }
    return "<out of range>";
  }

 private:
  std::deque<ParamEntry<T>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// Creates tape leaves for parameters on demand and accumulates their
/// gradients back into the store after backward. Binding the same name twice
/// returns the same node, so weight sharing accumulates naturally.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, ParamStore<T>& store) : tape_(tape), store_(store) {}

  Var<T> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    ParamEntry<T>& e = store_.entry(name);
    Var<T> v = tape_.leaf(e.value, e.trainable);
    cache_.emplace(name, v);
    bound_.push_back({v, &e});
    return v;
  }

  /// Mutable access to a non-trainable buffer (batchnorm running stats).
  Tensor<T>* buffer(const std::string& name) { return &store_.entry(name).value; }

  /// entry.grad += node.grad for every bound parameter that received one.
  void flush_gradients() {
    for (auto& [var, entry] : bound_) {
      if (!var->has_grad()) continue;
      for (int64_t i = 0; i < entry->grad.numel(); ++i)
        entry->grad[i] += var->grad[i];
    }
  }

 private:
  Tape<T>& tape_;
  ParamStore<T>& store_;
  std::unordered_map<std::string, Var<T>> cache_;
  std::vector<std::pair<Var<T>, ParamEntry<T>*>> bound_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam update over all trainable entries, in entry
/// order. step_index is 1-based. Gradients are zeroed afterwards.
template <typename T>
void adamw_step(ParamStore<T>& params, const AdamWConfig& cfg, int64_t step_index);

// ---- checkpoint archive ----
struct CheckpointMeta {
  uint64_t train_step = 0;
  uint64_t adam_step = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const CheckpointMeta& meta);
/// Loads into an existing store; names, shapes and order must match exactly.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& params);

// ---- initialization ----
/// Fan-in-scaled uniform U[-1/sqrt(fan_in), 1/sqrt(fan_in)] for a conv or
/// linear weight; fan_in inferred from the extents (all but the last).
template <typename T>
void init_fan_in_uniform(Tensor<T>& w, std::mt19937& rng);

}  // namespace caspgrid
