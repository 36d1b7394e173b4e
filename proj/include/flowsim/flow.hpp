#pragma once

#include <filesystem>
#include <optional>

#include "flowsim/image.hpp"

namespace flowsim {

/// Dense forward displacement field in pixels, anchored on the source grid:
/// pixel p of frame A moves to p + (u, v) in frame B.
struct FlowField {
  Plane u;
  Plane v;

  FlowField() = default;
  FlowField(int height, int width, float u0 = 0.0f, float v0 = 0.0f)
      : u(height, width, u0), v(height, width, v0) {}

  int height() const noexcept { return u.height(); }
  int width() const noexcept { return u.width(); }
  bool empty() const noexcept { return u.empty(); }

  /// Finite everywhere, no unknown-flow sentinels, matching u/v shapes.
  bool is_valid() const noexcept;

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Values above this magnitude are the Middlebury "unknown flow" sentinel.
inline constexpr float kUnknownFlowThreshold = 1e9f;

/// Sanity float stored in the first four bytes of a `.flo` file.
inline constexpr float kFloMagic = 202021.25f;

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& flow, const std::filesystem::path& path);

/// Middlebury color-wheel rendering. Zero flow is white; the normalized
/// magnitude is clamped at 1.
Image colorize(const FlowField& flow, std::optional<float> max_magnitude = std::nullopt);

struct FlowStats {
  double mean_mag = 0.0;
  double median_mag = 0.0;
  double max_mag = 0.0;
};

FlowStats flow_stats(const FlowField& flow);

/// Horizontal mirror; the u component changes sign.
FlowField hflip(const FlowField& flow);

/// Resamples to a new grid and rescales the displacements to match.
FlowField resize(const FlowField& flow, int height, int width);

/// Negates both components.
FlowField negate(const FlowField& flow);

}  // namespace flowsim
