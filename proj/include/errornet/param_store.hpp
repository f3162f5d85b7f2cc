#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "errornet/error.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

// One named tensor in a store. Buffers (running statistics) are entries with
// trainable=false; they are checkpointed but never touched by the optimizer.
struct ParamEntry {
  std::string name;
  Tensor<float> tensor;
  bool trainable = true;
  bool frozen = false;
  std::vector<float> m, v;  // Adam moments, allocated on first step
};

// Ordered collection of named parameters; the unit of checkpointing.
class ParamStore {
 public:
  Tensor<float>& add(const std::string& name, Tensor<float> t,
                     bool trainable = true) {
    if (index_.count(name))
      throw UsageError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(ParamEntry{name, std::move(t), trainable, false, {}, {}});
    ParamEntry& e = entries_.back();
    e.tensor.set_requires_grad(trainable);
    return e.tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  ParamEntry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }
  const ParamEntry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }

  Tensor<float>& get(const std::string& name) { return entry(name).tensor; }

  size_t size() const { return entries_.size(); }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  void set_frozen(const std::string& name, bool frozen) {
    ParamEntry& e = entry(name);
    e.frozen = frozen;
    e.tensor.set_requires_grad(e.trainable && !frozen);
  }

  void set_all_frozen(bool frozen) {
    for (ParamEntry& e : entries_) {
      e.frozen = frozen;
      e.tensor.set_requires_grad(e.trainable && !frozen);
    }
  }

  void zero_grads() {
    for (ParamEntry& e : entries_) e.tensor.zero_grad();
  }

  size_t num_trainable_scalars() const {
    size_t n = 0;
    for (const ParamEntry& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  uint64_t adam_steps() const { return adam_steps_; }
  void set_adam_steps(uint64_t t) { adam_steps_ = t; }

  // FNV-1a over the raw value bytes of every entry; used to assert bitwise
  // freeze contracts in tests.
  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, size_t bytes) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < bytes; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const ParamEntry& e : entries_)
      feed(e.tensor.data().data(), e.tensor.numel() * sizeof(float));
    return h;
  }

 private:
  friend void adam_step(ParamStore&, float, float, float, float);
  std::vector<ParamEntry> entries_;
  std::map<std::string, size_t> index_;
  uint64_t adam_steps_ = 0;
};

// Standard Adam with bias correction. Applies to every unfrozen trainable
// parameter; moment buffers persist in the store; grads are zeroed afterward.
inline void adam_step(ParamStore& store, float lr, float beta1 = 0.9f,
                      float beta2 = 0.999f, float eps = 1e-8f) {
  const uint64_t t = ++store.adam_steps_;
  const float bc1 =
      static_cast<float>(1.0 - std::pow(static_cast<double>(beta1),
                                        static_cast<double>(t)));
  const float bc2 =
      static_cast<float>(1.0 - std::pow(static_cast<double>(beta2),
                                        static_cast<double>(t)));
  for (ParamEntry& e : store.entries_) {
    if (!e.trainable) continue;
    if (e.frozen) {
      e.tensor.zero_grad();
      continue;
    }
    if (!e.tensor.has_grad())
      throw UsageError("adam_step: missing gradient for parameter " + e.name);
    const size_t n = e.tensor.numel();
    if (e.m.empty()) {
      e.m.assign(n, 0.0f);
      e.v.assign(n, 0.0f);
    }
    auto g = e.tensor.grad();
    auto w = e.tensor.data_mut();
    for (size_t i = 0; i < n; ++i) {
      e.m[i] = beta1 * e.m[i] + (1.0f - beta1) * g[i];
      e.v[i] = beta2 * e.v[i] + (1.0f - beta2) * g[i] * g[i];
      const float mhat = e.m[i] / bc1;
      const float vhat = e.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    e.tensor.zero_grad();
  }
}

}  // namespace errornet
