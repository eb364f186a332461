#include "panodream/nn/layers.hpp"

namespace panodream::nn {

void Conv::init(ParamStore& store, std::mt19937_64& rng, double gain) const {
  const Shape ks = transpose ? Shape{in, out, k, k} : Shape{out, in, k, k};
  store.add(weight(), he_normal(ks, in * k * k, rng, gain));
  store.add(bias(), Tensor(1, out, 1, 1));
}

Tensor Conv::forward(const ParamStore& store, const Tensor& x) const {
  const Tensor& w = store.value(weight());
  const Tensor& b = store.value(bias());
  return transpose ? conv_transpose2d_circx(x, w, b, stride) : conv2d_circx(x, w, b, stride);
}

Tensor Conv::backward(ParamStore& store, const Tensor& x, const Tensor& grad_out,
                      bool need_input) const {
  const Tensor& w = store.value(weight());
  ConvGrads g = transpose ? conv_transpose2d_circx_backward(x, w, stride, grad_out, need_input)
                          : conv2d_circx_backward(x, w, stride, grad_out, need_input);
  store.grad(weight()) += g.kernel;
  store.grad(bias()) += g.bias;
  return std::move(g.input);
}

void Spade::init(ParamStore& store, std::mt19937_64& rng) const {
  shared_conv().init(store, rng);
  gamma_conv().init(store, rng, 0.0);
  beta_conv().init(store, rng, 0.0);
}

Tensor Spade::forward(const ParamStore& store, const Tensor& x, const Tensor& cond_in,
                      const Tensor* mask, Cache* cache) const {
  if (cond_in.n() != x.n() || cond_in.c() != cond) {
    throw ShapeError("spade " + name + ": cond " + cond_in.shape().str() +
                     " incompatible with features " + x.shape().str());
  }
  if (x.c() != features) {
    throw ShapeError("spade " + name + ": expected " + std::to_string(features) +
                     " feature channels, got " + std::to_string(x.c()));
  }
  if (mask_aware && mask == nullptr) throw ShapeError("spade " + name + ": mask required");
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.cond = nearest_resize(cond_in, x.h(), x.w());
  if (mask_aware) {
    c.mask = nearest_resize(*mask, x.h(), x.w());
    const Conv sc = shared_conv();
    c.partial = partial_conv2d(c.cond, c.mask, store.value(sc.weight()), store.value(sc.bias()));
    c.shared_pre = c.partial.output;
  } else {
    c.shared_pre = shared_conv().forward(store, c.cond);
  }
  c.shared = relu(c.shared_pre);
  c.gamma = gamma_conv().forward(store, c.shared);
  c.beta = beta_conv().forward(store, c.shared);
  const Tensor norm = instance_norm(x, &c.norm);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm[i] * (1.0 + c.gamma[i]) + c.beta[i];
  return out;
}

Tensor Spade::backward(ParamStore& store, const Cache& c, const Tensor& grad_out) const {
  const Tensor& norm = c.norm.normalized;
  Tensor dnorm(norm.shape()), dgamma(norm.shape());
  for (std::size_t i = 0; i < norm.size(); ++i) {
    dnorm[i] = grad_out[i] * (1.0 + c.gamma[i]);
    dgamma[i] = grad_out[i] * norm[i];
  }
  Tensor dshared = gamma_conv().backward(store, c.shared, dgamma);
  dshared += beta_conv().backward(store, c.shared, grad_out);
  const Tensor dpre = relu_backward(c.shared_pre, dshared);
  const Conv sc = shared_conv();
  if (mask_aware) {
    ConvGrads g = partial_conv2d_backward(c.cond, c.mask, store.value(sc.weight()), c.partial,
                                          dpre, false);
    store.grad(sc.weight()) += g.kernel;
    store.grad(sc.bias()) += g.bias;
  } else {
    sc.backward(store, c.cond, dpre, false);
  }
  return instance_norm_backward(c.norm, dnorm);
}

Tensor spade_modulate(const Tensor& features, const Tensor& cond, const ParamStore& params,
                      const Spade& layer, const Tensor* mask) {
  return layer.forward(params, features, cond, mask, nullptr);
}

}  // namespace panodream::nn
