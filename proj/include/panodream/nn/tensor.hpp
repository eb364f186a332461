#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "panodream/errors.hpp"

namespace panodream::nn {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense NCHW tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(int n, int c, int h, int w, double fill = 0.0) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape_.h) * shape_.w; }

  double& operator()(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  double operator()(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  // Pointer to the H*W plane of (n, c).
  double* plane_ptr(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const double* plane_ptr(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(double v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);

}  // namespace panodream::nn
