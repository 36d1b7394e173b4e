#pragma once

// Zero-copy views of toolkit rasters as cv::Mat. Internal to the library.

#include <opencv2/core.hpp>

#include "flowsim/image.hpp"

namespace flowsim::detail {

inline cv::Mat view(Plane& plane) {
  return cv::Mat(plane.height(), plane.width(), CV_32FC1, plane.data().data());
}

inline cv::Mat view(const Plane& plane) {
  return cv::Mat(plane.height(), plane.width(), CV_32FC1,
                 const_cast<float*>(plane.data().data()));
}

inline cv::Mat view(Image& image) {
  return cv::Mat(image.height(), image.width(), CV_32FC3, image.data().data());
}

inline cv::Mat view(const Image& image) {
  return cv::Mat(image.height(), image.width(), CV_32FC3,
                 const_cast<float*>(image.data().data()));
}

}  // namespace flowsim::detail
