#include "flowsim/media_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_interop.hpp"
#include "flowsim/error.hpp"

namespace fs = std::filesystem;

namespace flowsim {

namespace {

cv::Mat read_raster(const fs::path& path, int flags) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kMissingFile, path.string());
  }
  cv::Mat raw = cv::imread(path.string(), flags);
  if (raw.empty()) {
    throw Error(ErrorCode::kUndecodableImage, path.string());
  }
  if (raw.depth() != CV_8U) {
    throw Error(ErrorCode::kUndecodableImage, "expected 8-bit raster: " + path.string());
  }
  return raw;
}

void write_raster(const cv::Mat& mat, const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kIoFailure, path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorCode::kIoFailure, path.string());
}

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

int interpolation(ResizeMode mode) {
  return mode == ResizeMode::kNearest ? cv::INTER_NEAREST_EXACT : cv::INTER_LINEAR;
}

void check_target(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::kInvalidDimensions,
                "resize target " + std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

Image load_image(const fs::path& path) {
  const cv::Mat bgr = read_raster(path, cv::IMREAD_COLOR);
  Image out(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = row[x][2 - c] / 255.0f;
    }
  }
  return out;
}

SaliencyMap load_mask(const fs::path& path, std::optional<float> binarize_threshold) {
  const cv::Mat raw = read_raster(path, cv::IMREAD_UNCHANGED);
  SaliencyMap mask{Plane(raw.rows, raw.cols), false};
  const int channels = raw.channels();
  for (int y = 0; y < raw.rows; ++y) {
    const unsigned char* row = raw.ptr<unsigned char>(y);
    for (int x = 0; x < raw.cols; ++x) {
      const unsigned char* px = row + static_cast<std::ptrdiff_t>(x) * channels;
      float value;
      if (channels == 1 || channels == 2) {
        value = px[0] / 255.0f;
      } else {
        // OpenCV order is BGR(A).
        value = (0.299f * px[2] + 0.587f * px[1] + 0.114f * px[0]) / 255.0f;
      }
      mask.values(y, x) = value;
    }
  }
  if (binarize_threshold) mask.binarize(*binarize_threshold);
  return mask;
}

void store_image(const Image& image, const fs::path& path) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(image.at(y, x, c));
    }
  }
  write_raster(bgr, path);
}

void store_mask(const SaliencyMap& mask, const fs::path& path) {
  cv::Mat gray(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = gray.ptr<unsigned char>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = to_byte(mask.values(y, x));
  }
  write_raster(gray, path);
}

Image resize(const Image& image, int height, int width, ResizeMode mode) {
  check_target(height, width);
  if (image.height() == height && image.width() == width) return image;
  Image out(height, width);
  cv::Mat dst = detail::view(out);
  cv::resize(detail::view(image), dst, dst.size(), 0, 0, interpolation(mode));
  return out;
}

Plane resize(const Plane& plane, int height, int width, ResizeMode mode) {
  check_target(height, width);
  if (plane.height() == height && plane.width() == width) return plane;
  Plane out(height, width);
  cv::Mat dst = detail::view(out);
  cv::resize(detail::view(plane), dst, dst.size(), 0, 0, interpolation(mode));
  return out;
}

SaliencyMap resize(const SaliencyMap& mask, int height, int width) {
  return SaliencyMap{resize(mask.values, height, width, ResizeMode::kNearest), mask.is_binary};
}

Image hflip(const Image& image) {
  Image out(image.height(), image.width());
  cv::Mat dst = detail::view(out);
  cv::flip(detail::view(image), dst, 1);
  return out;
}

Plane hflip(const Plane& plane) {
  Plane out(plane.height(), plane.width());
  cv::Mat dst = detail::view(out);
  cv::flip(detail::view(plane), dst, 1);
  return out;
}

}  // namespace flowsim
