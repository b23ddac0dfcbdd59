#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rpt/core/tensor.hpp"

namespace rpt {

/// A trainable array with its gradient slot and Adam moments.
template <std::floating_point T>
struct Parameter {
  explicit Parameter(Tensor<T> init)
      : value(std::move(init)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }

  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::uint64_t step_count = 0;
};

/// Named parameters, iterated in lexicographic name order. References stay
/// valid for the lifetime of the store.
template <std::floating_point T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    auto [it, inserted] = params_.try_emplace(name, std::move(init));
    if (!inserted) throw ValidationError("duplicate parameter name: " + name);
    return it->second;
  }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& [name, p] : params_) out.push_back(&p);
    return out;
  }

  std::vector<Parameter<T>*> with_prefix(const std::string& prefix) {
    std::vector<Parameter<T>*> out;
    for (auto& [name, p] : params_) {
      if (name.starts_with(prefix)) out.push_back(&p);
    }
    return out;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  /// FNV-1a over names and raw value bytes of parameters matching `prefix`.
  std::uint64_t checksum(const std::string& prefix = "") const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* bytes, std::size_t n) {
      const auto* p = static_cast<const unsigned char*>(bytes);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& [name, p] : params_) {
      if (!name.starts_with(prefix)) continue;
      mix(name.data(), name.size());
      mix(p.value.data(), p.value.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

// Initializers.

template <std::floating_point T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Glorot/Xavier uniform for a fan_in x fan_out matrix, scaled by `gain`.
template <std::floating_point T>
Tensor<T> xavier_tensor(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                        double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t({fan_in, fan_out});
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace rpt
