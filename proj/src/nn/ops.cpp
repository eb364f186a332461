#include "panodream/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

namespace panodream::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int channels;  // channels of the full-resolution side
  int h, w;      // full-resolution side
  int k;
  int stride;
  int ho, wo;  // strided side
};

int wrap(int v, int w) {
  v %= w;
  return v < 0 ? v + w : v;
}

// Copies a row shifted circularly by `shift` (dst[i] = src[(i + shift) mod w]).
void copy_shifted(const double* src, double* dst, int w, int shift) {
  shift = wrap(shift, w);
  std::copy(src + shift, src + w, dst);
  std::copy(src, src + shift, dst + (w - shift));
}

// Adjoint of copy_shifted.
void add_shifted(const double* src, double* dst, int w, int shift) {
  shift = wrap(shift, w);
  const int head = w - shift;
  for (int i = 0; i < head; ++i) dst[shift + i] += src[i];
  for (int i = 0; i < shift; ++i) dst[i] += src[head + i];
}

// Lowers the full-resolution tensor plane set into a (channels*k*k) x
// (ho*wo) matrix under circular-x / zero-y padding.
void im2col(const double* x, const ConvGeometry& g, RowMat& cols) {
  const int pad = g.k / 2;
  const int p = g.ho * g.wo;
  cols.resize(static_cast<Eigen::Index>(g.channels) * g.k * g.k, p);
  std::vector<int> xs(static_cast<std::size_t>(g.wo));
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int ox = 0; ox < g.wo; ++ox) xs[ox] = wrap(ox * g.stride + kx - pad, g.w);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          double* row = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            copy_shifted(src, row, g.w, kx - pad);
          } else {
            for (int ox = 0; ox < g.wo; ++ox) row[ox] = src[xs[ox]];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the matrix back into the planes.
void col2im(const RowMat& cols, const ConvGeometry& g, double* x) {
  const int pad = g.k / 2;
  std::vector<int> xs(static_cast<std::size_t>(g.wo));
  for (int c = 0; c < g.channels; ++c) {
    double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = cols.row((c * g.k + ky) * g.k + kx).data();
        for (int ox = 0; ox < g.wo; ++ox) xs[ox] = wrap(ox * g.stride + kx - pad, g.w);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - pad;
          if (iy < 0 || iy >= g.h) continue;
          const double* row = src + static_cast<std::size_t>(oy) * g.wo;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            add_shifted(row, dst, g.w, kx - pad);
          } else {
            for (int ox = 0; ox < g.wo; ++ox) dst[xs[ox]] += row[ox];
          }
        }
      }
    }
  }
}

void check_kernel(const Tensor& kernel, const char* what) {
  if (kernel.h() != kernel.w() || kernel.h() % 2 == 0) {
    throw ShapeError(std::string(what) + ": kernel must be square and odd-sized, got " +
                     kernel.shape().str());
  }
}

void check_stride(int h, int w, int stride, const char* what) {
  if (stride < 1 || h % stride != 0 || w % stride != 0) {
    throw ShapeError(std::string(what) + ": spatial dims " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by stride " + std::to_string(stride));
  }
}

void check_bias(const Tensor& bias, int channels, const char* what) {
  require_shape(bias, Shape{1, channels, 1, 1}, what);
}

void add_bias(Tensor& out, const Tensor& bias) {
  for (int n = 0; n < out.n(); ++n) {
    for (int c = 0; c < out.c(); ++c) {
      double* p = out.plane_ptr(n, c);
      const double b = bias[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < out.plane(); ++i) p[i] += b;
    }
  }
}

Tensor bias_grad(const Tensor& grad_out) {
  Tensor db(1, grad_out.c(), 1, 1);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const double* p = grad_out.plane_ptr(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < grad_out.plane(); ++i) s += p[i];
      db[static_cast<std::size_t>(c)] += s;
    }
  }
  return db;
}

}  // namespace

Tensor conv2d_circx(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride) {
  check_kernel(kernel, "conv2d_circx");
  if (kernel.c() != input.c()) {
    throw ShapeError("conv2d_circx: kernel expects " + std::to_string(kernel.c()) +
                     " input channels, got " + std::to_string(input.c()));
  }
  check_stride(input.h(), input.w(), stride, "conv2d_circx");
  check_bias(bias, kernel.n(), "conv2d_circx bias");
  const ConvGeometry g{input.c(), input.h(), input.w(), kernel.h(), stride,
                       input.h() / stride, input.w() / stride};
  Tensor out(input.n(), kernel.n(), g.ho, g.wo);
  const ConstMapMat wm(kernel.data(), kernel.n(), static_cast<Eigen::Index>(kernel.c()) * g.k * g.k);
  RowMat cols;
  for (int n = 0; n < input.n(); ++n) {
    im2col(input.plane_ptr(n, 0), g, cols);
    MapMat y(out.plane_ptr(n, 0), kernel.n(), static_cast<Eigen::Index>(g.ho) * g.wo);
    y.noalias() = wm * cols;
  }
  add_bias(out, bias);
  return out;
}

ConvGrads conv2d_circx_backward(const Tensor& input, const Tensor& kernel, int stride,
                                const Tensor& grad_out, bool need_input) {
  check_kernel(kernel, "conv2d_circx_backward");
  const ConvGeometry g{input.c(), input.h(), input.w(), kernel.h(), stride,
                       input.h() / stride, input.w() / stride};
  require_shape(grad_out, Shape{input.n(), kernel.n(), g.ho, g.wo}, "conv2d_circx_backward grad");
  ConvGrads grads;
  grads.kernel = Tensor(kernel.shape());
  grads.bias = bias_grad(grad_out);
  if (need_input) grads.input = Tensor(input.shape());
  const Eigen::Index kk = static_cast<Eigen::Index>(kernel.c()) * g.k * g.k;
  const ConstMapMat wm(kernel.data(), kernel.n(), kk);
  MapMat dw(grads.kernel.data(), kernel.n(), kk);
  RowMat cols, dcols;
  for (int n = 0; n < input.n(); ++n) {
    im2col(input.plane_ptr(n, 0), g, cols);
    const ConstMapMat gy(grad_out.plane_ptr(n, 0), kernel.n(), static_cast<Eigen::Index>(g.ho) * g.wo);
    dw.noalias() += gy * cols.transpose();
    if (need_input) {
      dcols.noalias() = wm.transpose() * gy;
      col2im(dcols, g, grads.input.plane_ptr(n, 0));
    }
  }
  return grads;
}

Tensor conv_transpose2d_circx(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                              int stride) {
  check_kernel(kernel, "conv_transpose2d_circx");
  if (kernel.n() != input.c()) {
    throw ShapeError("conv_transpose2d_circx: kernel expects " + std::to_string(kernel.n()) +
                     " input channels, got " + std::to_string(input.c()));
  }
  if (stride < 1) throw ShapeError("conv_transpose2d_circx: stride must be >= 1");
  check_bias(bias, kernel.c(), "conv_transpose2d_circx bias");
  const ConvGeometry g{kernel.c(), input.h() * stride, input.w() * stride, kernel.h(), stride,
                       input.h(), input.w()};
  Tensor out(input.n(), kernel.c(), g.h, g.w);
  const ConstMapMat wm(kernel.data(), kernel.n(), static_cast<Eigen::Index>(kernel.c()) * g.k * g.k);
  RowMat cols;
  for (int n = 0; n < input.n(); ++n) {
    const ConstMapMat y(input.plane_ptr(n, 0), input.c(), static_cast<Eigen::Index>(g.ho) * g.wo);
    cols.noalias() = wm.transpose() * y;
    col2im(cols, g, out.plane_ptr(n, 0));
  }
  add_bias(out, bias);
  return out;
}

ConvGrads conv_transpose2d_circx_backward(const Tensor& input, const Tensor& kernel, int stride,
                                          const Tensor& grad_out, bool need_input) {
  check_kernel(kernel, "conv_transpose2d_circx_backward");
  const ConvGeometry g{kernel.c(), input.h() * stride, input.w() * stride, kernel.h(), stride,
                       input.h(), input.w()};
  require_shape(grad_out, Shape{input.n(), kernel.c(), g.h, g.w},
                "conv_transpose2d_circx_backward grad");
  ConvGrads grads;
  grads.kernel = Tensor(kernel.shape());
  grads.bias = bias_grad(grad_out);
  if (need_input) grads.input = Tensor(input.shape());
  const Eigen::Index kk = static_cast<Eigen::Index>(kernel.c()) * g.k * g.k;
  const ConstMapMat wm(kernel.data(), kernel.n(), kk);
  MapMat dw(grads.kernel.data(), kernel.n(), kk);
  RowMat gcols;
  const Eigen::Index p = static_cast<Eigen::Index>(g.ho) * g.wo;
  for (int n = 0; n < input.n(); ++n) {
    im2col(grad_out.plane_ptr(n, 0), g, gcols);
    const ConstMapMat y(input.plane_ptr(n, 0), input.c(), p);
    dw.noalias() += y * gcols.transpose();
    if (need_input) {
      MapMat dy(grads.input.plane_ptr(n, 0), input.c(), p);
      dy.noalias() = wm * gcols;
    }
  }
  return grads;
}

Tensor mask_coverage(const Tensor& mask, int k) {
  const int pad = k / 2;
  Tensor cov(mask.shape());
  for (int n = 0; n < mask.n(); ++n) {
    for (int y = 0; y < mask.h(); ++y) {
      for (int x = 0; x < mask.w(); ++x) {
        double s = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= mask.h()) continue;
          for (int kx = 0; kx < k; ++kx) s += mask(n, 0, iy, wrap(x + kx - pad, mask.w()));
        }
        cov(n, 0, y, x) = s;
      }
    }
  }
  return cov;
}

namespace {

void check_mask(const Tensor& input, const Tensor& mask, const char* what) {
  if (mask.c() != 1 || mask.n() != input.n() || mask.h() != input.h() || mask.w() != input.w()) {
    throw ShapeError(std::string(what) + ": mask " + mask.shape().str() +
                     " does not match input " + input.shape().str());
  }
}

Tensor apply_mask(const Tensor& input, const Tensor& mask) {
  Tensor out(input.shape());
  for (int n = 0; n < input.n(); ++n) {
    const double* m = mask.plane_ptr(n, 0);
    for (int c = 0; c < input.c(); ++c) {
      const double* src = input.plane_ptr(n, c);
      double* dst = out.plane_ptr(n, c);
      for (std::size_t i = 0; i < input.plane(); ++i) dst[i] = src[i] * m[i];
    }
  }
  return out;
}

}  // namespace

PartialConvResult partial_conv2d(const Tensor& input, const Tensor& mask, const Tensor& kernel,
                                 const Tensor& bias) {
  check_kernel(kernel, "partial_conv2d");
  check_mask(input, mask, "partial_conv2d");
  const int k = kernel.h();
  const Tensor zero_bias(1, kernel.n(), 1, 1);
  PartialConvResult r;
  r.output = conv2d_circx(apply_mask(input, mask), kernel, zero_bias, 1);
  const Tensor cov = mask_coverage(mask, k);
  r.mask = Tensor(mask.shape());
  r.ratio = Tensor(mask.shape());
  // Window area counts in-image rows only, so an all-valid mask reproduces
  // the plain convolution at the top and bottom borders too.
  const int pad = k / 2;
  for (int n = 0; n < mask.n(); ++n) {
    for (int y = 0; y < mask.h(); ++y) {
      const int rows = std::min(mask.h() - 1, y + pad) - std::max(0, y - pad) + 1;
      const double area = static_cast<double>(rows) * k;
      for (int x = 0; x < mask.w(); ++x) {
        const double c = cov(n, 0, y, x);
        if (c > 0.0) {
          r.ratio(n, 0, y, x) = area / c;
          r.mask(n, 0, y, x) = 1.0;
        }
      }
    }
  }
  for (int n = 0; n < r.output.n(); ++n) {
    const double* ratio = r.ratio.plane_ptr(n, 0);
    for (int c = 0; c < r.output.c(); ++c) {
      double* p = r.output.plane_ptr(n, c);
      const double b = bias[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < r.output.plane(); ++i) p[i] = p[i] * ratio[i] + b;
    }
  }
  return r;
}

ConvGrads partial_conv2d_backward(const Tensor& input, const Tensor& mask, const Tensor& kernel,
                                  const PartialConvResult& forward, const Tensor& grad_out,
                                  bool need_input) {
  require_same_shape(grad_out, forward.output, "partial_conv2d_backward grad");
  Tensor graw(grad_out.shape());
  for (int n = 0; n < grad_out.n(); ++n) {
    const double* ratio = forward.ratio.plane_ptr(n, 0);
    for (int c = 0; c < grad_out.c(); ++c) {
      const double* g = grad_out.plane_ptr(n, c);
      double* d = graw.plane_ptr(n, c);
      for (std::size_t i = 0; i < grad_out.plane(); ++i) d[i] = g[i] * ratio[i];
    }
  }
  ConvGrads grads = conv2d_circx_backward(apply_mask(input, mask), kernel, 1, graw, need_input);
  grads.bias = bias_grad(grad_out);
  if (need_input) grads.input = apply_mask(grads.input, mask);
  return grads;
}

Tensor instance_norm(const Tensor& input, InstanceNormCache* cache) {
  Tensor out(input.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(input.n()) * input.c());
  const double count = static_cast<double>(input.plane());
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const double* p = input.plane_ptr(n, c);
      double mu = 0.0;
      for (std::size_t i = 0; i < input.plane(); ++i) mu += p[i];
      mu /= count;
      double var = 0.0;
      for (std::size_t i = 0; i < input.plane(); ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= count;
      const double is = 1.0 / std::sqrt(var + kInstanceNormEps);
      inv_std[static_cast<std::size_t>(n) * input.c() + c] = is;
      double* o = out.plane_ptr(n, c);
      for (std::size_t i = 0; i < input.plane(); ++i) o[i] = (p[i] - mu) * is;
    }
  }
  if (cache != nullptr) {
    cache->normalized = out;
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor instance_norm_backward(const InstanceNormCache& cache, const Tensor& grad_out) {
  const Tensor& xhat = cache.normalized;
  require_same_shape(xhat, grad_out, "instance_norm_backward");
  Tensor dx(xhat.shape());
  const double count = static_cast<double>(xhat.plane());
  for (int n = 0; n < xhat.n(); ++n) {
    for (int c = 0; c < xhat.c(); ++c) {
      const double* g = grad_out.plane_ptr(n, c);
      const double* xh = xhat.plane_ptr(n, c);
      double mg = 0.0, mgx = 0.0;
      for (std::size_t i = 0; i < xhat.plane(); ++i) {
        mg += g[i];
        mgx += g[i] * xh[i];
      }
      mg /= count;
      mgx /= count;
      const double is = cache.inv_std[static_cast<std::size_t>(n) * xhat.c() + c];
      double* d = dx.plane_ptr(n, c);
      for (std::size_t i = 0; i < xhat.plane(); ++i) d[i] = is * (g[i] - mg - xh[i] * mgx);
    }
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor d(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return d;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    // Stable in both tails.
    y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor d(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return d;
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor s(logits.shape());
  const std::size_t plane = logits.plane();
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < logits.c(); ++c) m = std::max(m, logits.plane_ptr(n, c)[i]);
      double z = 0.0;
      for (int c = 0; c < logits.c(); ++c) {
        const double e = std::exp(logits.plane_ptr(n, c)[i] - m);
        s.plane_ptr(n, c)[i] = e;
        z += e;
      }
      for (int c = 0; c < logits.c(); ++c) s.plane_ptr(n, c)[i] /= z;
    }
  }
  return s;
}

Tensor softmax_channels_backward(const Tensor& s, const Tensor& grad_out) {
  require_same_shape(s, grad_out, "softmax_channels_backward");
  Tensor d(s.shape());
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double dotp = 0.0;
      for (int c = 0; c < s.c(); ++c) dotp += s.plane_ptr(n, c)[i] * grad_out.plane_ptr(n, c)[i];
      for (int c = 0; c < s.c(); ++c) {
        d.plane_ptr(n, c)[i] = s.plane_ptr(n, c)[i] * (grad_out.plane_ptr(n, c)[i] - dotp);
      }
    }
  }
  return d;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front()->shape();
  int channels = 0;
  for (const Tensor* t : parts) {
    if (t->n() != s0.n || t->h() != s0.h || t->w() != s0.w) {
      throw ShapeError("concat_channels: mismatched " + t->shape().str() + " vs " + s0.str());
    }
    channels += t->c();
  }
  Tensor out(s0.n, channels, s0.h, s0.w);
  for (int n = 0; n < s0.n; ++n) {
    int offset = 0;
    for (const Tensor* t : parts) {
      std::copy_n(t->plane_ptr(n, 0), static_cast<std::size_t>(t->c()) * t->plane(),
                  out.plane_ptr(n, offset));
      offset += t->c();
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != t.c()) throw ShapeError("split_channels: channel counts do not sum to input");
  std::vector<Tensor> out;
  int offset = 0;
  for (int c : channels) {
    out.push_back(slice_channels(t, offset, c));
    offset += c;
  }
  return out;
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > t.c()) {
    throw ShapeError("slice_channels: range out of bounds for " + t.shape().str());
  }
  Tensor out(t.n(), count, t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) {
    std::copy_n(t.plane_ptr(n, begin), static_cast<std::size_t>(count) * t.plane(),
                out.plane_ptr(n, 0));
  }
  return out;
}

Tensor nearest_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw ShapeError("nearest_upsample: factor must be >= 1");
  Tensor y(x.n(), x.c(), x.h() * factor, x.w() * factor);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int yy = 0; yy < y.h(); ++yy) {
        for (int xx = 0; xx < y.w(); ++xx) y(n, c, yy, xx) = x(n, c, yy / factor, xx / factor);
      }
    }
  }
  return y;
}

Tensor nearest_upsample_backward(const Tensor& grad_out, int factor) {
  if (factor < 1 || grad_out.h() % factor != 0 || grad_out.w() % factor != 0) {
    throw ShapeError("nearest_upsample_backward: gradient not divisible by factor");
  }
  Tensor d(grad_out.n(), grad_out.c(), grad_out.h() / factor, grad_out.w() / factor);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      for (int yy = 0; yy < grad_out.h(); ++yy) {
        for (int xx = 0; xx < grad_out.w(); ++xx) {
          d(n, c, yy / factor, xx / factor) += grad_out(n, c, yy, xx);
        }
      }
    }
  }
  return d;
}

Tensor nearest_resize(const Tensor& x, int h, int w) {
  if (h == x.h() && w == x.w()) return x;
  Tensor y(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int yy = 0; yy < h; ++yy) {
        const int sy = static_cast<int>(static_cast<long>(yy) * x.h() / h);
        for (int xx = 0; xx < w; ++xx) {
          const int sx = static_cast<int>(static_cast<long>(xx) * x.w() / w);
          y(n, c, yy, xx) = x(n, c, sy, sx);
        }
      }
    }
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
  return y;
}

Tensor clamp_backward(const Tensor& x, double lo, double hi, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "clamp_backward");
  Tensor d(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = (x[i] > lo && x[i] < hi) ? grad_out[i] : 0.0;
  return d;
}

LossGrad softmax_cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& labels) {
  const std::size_t plane = logits.plane();
  const std::size_t count = static_cast<std::size_t>(logits.n()) * plane;
  if (labels.size() != count) throw ShapeError("softmax_cross_entropy: label count mismatch");
  LossGrad r;
  r.grad = softmax_channels(logits);
  const double scale = 1.0 / static_cast<double>(count);
  long double total = 0.0L;
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::int32_t label = labels[static_cast<std::size_t>(n) * plane + i];
      if (label < 0 || label >= logits.c()) {
        throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                        " outside [0, " + std::to_string(logits.c()) + ")");
      }
      double m = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < logits.c(); ++c) m = std::max(m, logits.plane_ptr(n, c)[i]);
      double z = 0.0;
      for (int c = 0; c < logits.c(); ++c) z += std::exp(logits.plane_ptr(n, c)[i] - m);
      total += -(logits.plane_ptr(n, label)[i] - m - std::log(z));
      r.grad.plane_ptr(n, label)[i] -= 1.0;
    }
  }
  r.grad *= scale;
  r.value = static_cast<double>(total) * scale;
  return r;
}

LossGrad l1_mean(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_mean");
  LossGrad r;
  r.grad = Tensor(a.shape());
  const double scale = 1.0 / static_cast<double>(a.size());
  long double total = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += std::abs(d);
    r.grad[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
  }
  r.value = static_cast<double>(total) * scale;
  return r;
}

LossGrad mean(const Tensor& t) {
  LossGrad r;
  r.value = sum(t) / static_cast<double>(t.size());
  r.grad = Tensor(t.shape(), 1.0 / static_cast<double>(t.size()));
  return r;
}

}  // namespace panodream::nn
