#pragma once

#include <filesystem>
#include <optional>

#include "flowsim/image.hpp"

namespace flowsim {

enum class ResizeMode { kBilinear, kNearest };

/// Default mask binarization threshold.
inline constexpr float kDefaultMaskThreshold = 0.5f;

/// Loads an 8-bit raster as RGB scaled into [0,1].
Image load_image(const std::filesystem::path& path);

/// Loads a mask; RGB inputs are collapsed to luminance. Passing std::nullopt keeps
/// the soft values.
SaliencyMap load_mask(const std::filesystem::path& path,
                      std::optional<float> binarize_threshold = kDefaultMaskThreshold);

/// Writes an 8-bit PNG (or any extension OpenCV understands). Values are rounded.
void store_image(const Image& image, const std::filesystem::path& path);
void store_mask(const SaliencyMap& mask, const std::filesystem::path& path);

Image resize(const Image& image, int height, int width, ResizeMode mode = ResizeMode::kBilinear);
Plane resize(const Plane& plane, int height, int width, ResizeMode mode = ResizeMode::kBilinear);
SaliencyMap resize(const SaliencyMap& mask, int height, int width);

Image hflip(const Image& image);
Plane hflip(const Plane& plane);

}  // namespace flowsim
