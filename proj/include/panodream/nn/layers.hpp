#pragma once

#include <random>
#include <string>

#include "panodream/nn/ops.hpp"
#include "panodream/nn/params.hpp"

namespace panodream::nn {

// Convolution whose kernel and bias live in a ParamStore under
// "<name>.w" / "<name>.b".
struct Conv {
  std::string name;
  int in = 0;
  int out = 0;
  int k = 3;
  int stride = 1;
  bool transpose = false;

  void init(ParamStore& store, std::mt19937_64& rng, double gain = 1.0) const;
  std::string weight() const { return name + ".w"; }
  std::string bias() const { return name + ".b"; }
  Tensor forward(const ParamStore& store, const Tensor& x) const;
  // Accumulates parameter gradients and returns the input gradient (empty
  // when need_input is false).
  Tensor backward(ParamStore& store, const Tensor& x, const Tensor& grad_out,
                  bool need_input = true) const;
};

// Spatially-adaptive modulation: instance-normalize the features, then apply
// out = norm * (1 + gamma(cond)) + beta(cond). gamma and beta are 3x3 convs
// over a shared hidden map relu(conv(cond)). With mask_aware the shared conv
// is a partial convolution over the cond validity mask.
struct Spade {
  std::string name;
  int features = 0;
  int cond = 0;
  int hidden = 16;
  bool mask_aware = false;

  struct Cache {
    Tensor cond;
    Tensor mask;
    PartialConvResult partial;
    Tensor shared_pre;
    Tensor shared;
    Tensor gamma;
    Tensor beta;
    InstanceNormCache norm;
  };

  Conv shared_conv() const { return {name + ".shared", cond, hidden, 3, 1, false}; }
  Conv gamma_conv() const { return {name + ".gamma", hidden, features, 3, 1, false}; }
  Conv beta_conv() const { return {name + ".beta", hidden, features, 3, 1, false}; }

  // gamma/beta maps start at zero so the layer begins as plain normalization.
  void init(ParamStore& store, std::mt19937_64& rng) const;
  // cond (and mask) are resized to the feature size by nearest neighbor.
  Tensor forward(const ParamStore& store, const Tensor& x, const Tensor& cond,
                 const Tensor* mask, Cache* cache) const;
  Tensor backward(ParamStore& store, const Cache& cache, const Tensor& grad_out) const;
};

// Functional form of Spade::forward.
Tensor spade_modulate(const Tensor& features, const Tensor& cond, const ParamStore& params,
                      const Spade& layer, const Tensor* mask = nullptr);

}  // namespace panodream::nn
