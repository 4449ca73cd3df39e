#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vpseg {

// H x W raster, row-major. GrayImage carries intensities, LabelMap class ids.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  T& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  T at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  template <typename U>
  bool same_size(const Image<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }
  bool operator==(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && data_ == other.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using GrayImage = Image<std::uint8_t>;
using LabelMap = Image<std::uint16_t>;

// Reserved "not a class" value for LabelMap pixels.
inline constexpr std::uint16_t kIgnoreLabel = 0xFFFF;

// Binary PGM (P5). 8-bit for maxval <= 255, 16-bit big-endian otherwise.
void write_pgm(const GrayImage& img, const std::string& path);
void write_pgm16(const LabelMap& img, const std::string& path);
GrayImage read_pgm(const std::string& path);
// Reads either width: 8-bit values widen, 16-bit pass through.
LabelMap read_pgm_labels(const std::string& path);

// Bilinear resize with the tensor module's align-corners-false convention,
// rounded to the nearest intensity.
GrayImage resize_gray(const GrayImage& img, int out_h, int out_w);

}  // namespace vpseg
