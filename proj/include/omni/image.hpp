#pragma once

#include <cstdint>
#include <vector>

#include "omni/common.hpp"

namespace omni {

// Row-major single-channel double image. Depth images store meters with 0 as
// the invalid sentinel; color planes store values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  bool inside(int y, int x) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_size(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Planar RGB image.
struct ColorImage {
  Image r, g, b;

  ColorImage() = default;
  ColorImage(int width, int height, double fill = 0.0)
      : r(width, height, fill), g(width, height, fill), b(width, height, fill) {}

  int width() const { return r.width(); }
  int height() const { return r.height(); }
  bool empty() const { return r.empty(); }

  Image& channel(int c) { return c == 0 ? r : (c == 1 ? g : b); }
  const Image& channel(int c) const { return c == 0 ? r : (c == 1 ? g : b); }

  bool same_size(const ColorImage& o) const { return r.same_size(o.r); }
};

// Integer label image (0 = no label).
class LabelImage {
 public:
  LabelImage() = default;
  LabelImage(int width, int height, std::uint32_t fill = 0)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint32_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint32_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<std::uint32_t>& data() { return data_; }
  const std::vector<std::uint32_t>& data() const { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint32_t> data_;
};

// Boolean mask, stored as bytes so bit tricks never bite.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, bool fill = false)
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  void set(int y, int x, bool v) {
    data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  bool get(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  bool same_size(const Mask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  std::vector<std::uint8_t>& data() { return data_; }
  const std::vector<std::uint8_t>& data() const { return data_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

}  // namespace omni
