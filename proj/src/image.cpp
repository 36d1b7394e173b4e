#include "flowsim/image.hpp"

#include <algorithm>
#include <cmath>

#include "flowsim/error.hpp"

namespace flowsim {

namespace {

void check_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::kInvalidDimensions,
                "raster dimensions must be positive, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
}

struct BilinearTap {
  int x0, x1, y0, y1;
  float fx, fy;
};

BilinearTap make_tap(float x, float y, int width, int height) {
  x = std::clamp(x, 0.0f, static_cast<float>(width - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(height - 1));
  BilinearTap t;
  t.x0 = static_cast<int>(std::floor(x));
  t.y0 = static_cast<int>(std::floor(y));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.fx = x - static_cast<float>(t.x0);
  t.fy = y - static_cast<float>(t.y0);
  return t;
}

}  // namespace

Plane::Plane(int height, int width, float fill) : height_(height), width_(width) {
  check_dims(height, width);
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

Image::Image(int height, int width, float fill) : height_(height), width_(width) {
  check_dims(height, width);
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Plane Image::luminance() const {
  Plane out(height_, width_);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const float* p = &pixels_[i * kChannels];
    dst[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  }
  return out;
}

void Image::sample(float x, float y, float out[kChannels]) const {
  const BilinearTap t = make_tap(x, y, width_, height_);
  for (int c = 0; c < kChannels; ++c) {
    const float top = (1 - t.fx) * at(t.y0, t.x0, c) + t.fx * at(t.y0, t.x1, c);
    const float bottom = (1 - t.fx) * at(t.y1, t.x0, c) + t.fx * at(t.y1, t.x1, c);
    out[c] = (1 - t.fy) * top + t.fy * bottom;
  }
}

bool Image::in_unit_range() const noexcept {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

float sample_bilinear(const Plane& plane, float x, float y) {
  const BilinearTap t = make_tap(x, y, plane.width(), plane.height());
  const float top = (1 - t.fx) * plane(t.y0, t.x0) + t.fx * plane(t.y0, t.x1);
  const float bottom = (1 - t.fx) * plane(t.y1, t.x0) + t.fx * plane(t.y1, t.x1);
  return (1 - t.fy) * top + t.fy * bottom;
}

void SaliencyMap::binarize(float threshold) {
  for (float& v : values.data()) v = v >= threshold ? 1.0f : 0.0f;
  is_binary = true;
}

double SaliencyMap::foreground_fraction() const {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (float v : values.data()) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace flowsim
