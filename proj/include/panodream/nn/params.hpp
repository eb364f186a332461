#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "panodream/nn/tensor.hpp"

namespace panodream::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Adam moments and per-parameter step count.
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

// Named parameters kept in creation order, which fixes iteration and
// serialization order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  const Tensor& value(const std::string& name) const { return get(name).value; }
  Tensor& grad(const std::string& name) { return get(name).grad; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  void zero_grad();
  // FNV-1a over the raw bytes of every value tensor.
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update from the gradients held in the store. Throws
// NumericError naming the first parameter with a non-finite gradient.
void adam_step(ParamStore& store, const AdamOptions& options);

// He-normal initialization for a [out, in, k, k] kernel (fan-in from in*k*k).
Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng, double gain = 1.0);

}  // namespace panodream::nn
