#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "panodream/nn/tensor.hpp"

namespace panodream::nn {

// All convolutions use "same" padding with circular wrap along x (width)
// and zero padding along y (height). Kernels are square and odd-sized.
// Kernel layout for conv2d: [out, in, k, k].

Tensor conv2d_circx(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

// Gradients of conv2d_circx given the upstream gradient. The input
// gradient is skipped when need_input is false.
ConvGrads conv2d_circx_backward(const Tensor& input, const Tensor& kernel, int stride,
                                const Tensor& grad_out, bool need_input = true);

// Adjoint of conv2d_circx. Kernel layout [in, out, k, k], i.e. the same
// tensor a forward convolution from `out` to `in` channels would use.
// Output spatial dims are input dims times stride.
Tensor conv_transpose2d_circx(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                              int stride = 1);
ConvGrads conv_transpose2d_circx_backward(const Tensor& input, const Tensor& kernel, int stride,
                                          const Tensor& grad_out, bool need_input = true);

// Partial convolution over a single-channel {0,1} mask of shape
// (N, 1, H, W). Stride 1.
struct PartialConvResult {
  Tensor output;
  Tensor mask;
  Tensor ratio;  // in-image window area / coverage, zero where coverage is zero
};

PartialConvResult partial_conv2d(const Tensor& input, const Tensor& mask, const Tensor& kernel,
                                 const Tensor& bias);
ConvGrads partial_conv2d_backward(const Tensor& input, const Tensor& mask, const Tensor& kernel,
                                  const PartialConvResult& forward, const Tensor& grad_out,
                                  bool need_input = true);

// Number of valid mask pixels under each k x k window.
Tensor mask_coverage(const Tensor& mask, int k);

// Per-sample, per-channel normalization over H x W.
struct InstanceNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};

inline constexpr double kInstanceNormEps = 1e-5;

Tensor instance_norm(const Tensor& input, InstanceNormCache* cache = nullptr);
Tensor instance_norm_backward(const InstanceNormCache& cache, const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor sigmoid(const Tensor& x);
// Takes the forward output y = sigmoid(x).
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

Tensor softmax_channels(const Tensor& logits);
// Takes the forward output s = softmax(x).
Tensor softmax_channels_backward(const Tensor& s, const Tensor& grad_out);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
// Splits a gradient for a concatenation back into its parts.
std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channels);

Tensor nearest_upsample(const Tensor& x, int factor);
Tensor nearest_upsample_backward(const Tensor& grad_out, int factor);

// Nearest-neighbor resampling to an arbitrary size (no gradient).
Tensor nearest_resize(const Tensor& x, int h, int w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& x, double lo, double hi);
// Passes gradient only where lo < x < hi.
Tensor clamp_backward(const Tensor& x, double lo, double hi, const Tensor& grad_out);

// Channel slice [begin, begin + count).
Tensor slice_channels(const Tensor& t, int begin, int count);

// --- losses -------------------------------------------------------------

struct LossGrad {
  double value = 0.0;
  Tensor grad;
};

// Mean over pixels of -log softmax at the label; labels are N*H*W ids.
LossGrad softmax_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels);

// mean |a - b|; gradient with respect to a.
LossGrad l1_mean(const Tensor& a, const Tensor& b);

// mean over elements of t; gradient is constant.
LossGrad mean(const Tensor& t);

}  // namespace panodream::nn
