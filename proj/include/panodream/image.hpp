#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "panodream/errors.hpp"

namespace panodream {

struct Rgb8 {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

// Row-major 2D image. x is the column (longitude), y the row (latitude).
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ShapeError("negative image dimensions");
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  T& operator()(int x, int y) { return pixels_[index(x, y)]; }
  const T& operator()(int x, int y) const { return pixels_[index(x, y)]; }

  std::vector<T>& pixels() { return pixels_; }
  const std::vector<T>& pixels() const { return pixels_; }

  bool same_size(int width, int height) const { return width_ == width && height_ == height; }
  template <typename U>
  bool same_size(const Image<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> pixels_;
};

inline constexpr std::int32_t kInvalidClass = -1;

using ClassMap = Image<std::int32_t>;
using DepthMap = Image<double>;
using RgbImage = Image<Rgb8>;
using Mask = Image<std::uint8_t>;

}  // namespace panodream
