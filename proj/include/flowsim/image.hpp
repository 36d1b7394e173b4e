#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flowsim {

/// Single-channel H×W float raster, row-major.
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const Plane& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// RGB image, channel-last, values in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<float> data() noexcept { return pixels_; }
  std::span<const float> data() const noexcept { return pixels_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  /// Luminance with (0.299, 0.587, 0.114) weights.
  Plane luminance() const;

  /// Bilinear sample with edge replication; (x, y) in pixel coordinates.
  void sample(float x, float y, float out[kChannels]) const;

  /// True when every value is finite and within [0,1].
  bool in_unit_range() const noexcept;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// Bilinear sample of a plane with edge replication.
float sample_bilinear(const Plane& plane, float x, float y);

/// Saliency prediction or ground truth, values in [0,1].
struct SaliencyMap {
  Plane values;
  bool is_binary = false;

  int height() const noexcept { return values.height(); }
  int width() const noexcept { return values.width(); }

  /// Thresholds in place: v >= threshold -> 1, else 0.
  void binarize(float threshold);
  double foreground_fraction() const;
};

}  // namespace flowsim
