#include "panodream/nn/params.hpp"

#include <cmath>
#include <cstring>

namespace panodream::nn {

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name) > 0) throw DomainError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = Tensor(init.shape());
  p.m = Tensor(init.shape());
  p.v = Tensor(init.shape());
  p.value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, p.value.data() + i, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void adam_step(ParamStore& store, const AdamOptions& o) {
  for (auto& p : store.params()) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(p.grad[i])) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  for (auto& p : store.params()) {
    ++p.step;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = o.beta1 * p.m[i] + (1.0 - o.beta1) * g;
      p.v[i] = o.beta2 * p.v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = p.m[i] / c1;
      const double vhat = p.v[i] / c2;
      p.value[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng, double gain) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / std::max(1, fan_in)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace panodream::nn
