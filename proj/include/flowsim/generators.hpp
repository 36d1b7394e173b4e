#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "flowsim/flow.hpp"
#include "flowsim/image.hpp"

namespace flowsim {

/// Sampling parameters forwarded to an image-to-video backend. Defaults follow
/// the stock Stable Video Diffusion image-to-video setup.
struct GenerationConfig {
  int num_frames = 14;
  int height = 576;
  int width = 1024;
  int sampler_steps = 25;
  double guidance_first = 3.0;
  double guidance_last = 1.0;
  int frame_rate = 7;
  int decode_chunk = 8;
  std::uint64_t seed = 0;

  /// Throws Error(kInvalidConfig) on violated invariants.
  void validate() const;

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

struct FrameSequence {
  Image source;
  std::vector<Image> frames;  // I_1 .. I_T
  std::string generator_id;
  GenerationConfig config;

  int length() const noexcept { return static_cast<int>(frames.size()); }
};

/// A generated sequence together with the exact displacement of every frame
/// relative to the source (available for generators whose motion is known).
struct AnalyticSequence {
  FrameSequence sequence;
  std::vector<FlowField> flows;
};

/// Similarity + thin-plate-spline warp, applied once per frame.
struct WarpParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;  // fraction of width
  double translate_y = 0.0;  // fraction of height
  int tps_grid = 5;
  double tps_jitter = 0.0;   // fraction of the image dimensions
  std::uint64_t seed = 0;

  void validate() const;

  /// Draws a warp from the usual augmentation ranges: rotation in [-10, 10] deg,
  /// scale in [0.95, 1.05], translation in [-5%, 5%], 5x5 TPS grid with 2% jitter.
  static WarpParams sample(std::uint64_t seed);
};

FrameSequence generate_identity(const Image& source, int num_frames);

AnalyticSequence generate_spatial_warp(const Image& source, const WarpParams& params, int num_frames);

struct Velocity {
  double dx = 0.0;
  double dy = 0.0;
};

/// Foreground (mask support) and background translate independently at constant
/// velocity. Disoccluded background is filled by row-wise edge replication.
AnalyticSequence generate_synthetic_scene(const SaliencyMap& mask, const Image& source,
                                          Velocity foreground, Velocity background, int num_frames);

struct ExchangeOptions {
  std::filesystem::path root;
  std::string request_id;  // empty: derived from the request content
  std::chrono::milliseconds timeout{std::chrono::minutes(10)};
  std::chrono::milliseconds poll_interval{20};
};

/// Hands the source to an out-of-process image-to-video model through the exchange
/// directory and collects the frames it produces.
FrameSequence generate_external(const Image& source, const GenerationConfig& config,
                                const ExchangeOptions& exchange);

/// Deterministic procedural texture with broadband gradients, used for
/// synthetic scenes and tests.
Image make_textured_image(int height, int width, std::uint64_t seed);

/// Smooth star-shaped blob centered near the middle of the frame.
SaliencyMap make_blob_mask(int height, int width, std::uint64_t seed, double radius_fraction = 0.25);

/// Pastes the texture of `foreground` into `background` on the mask support.
Image composite(const Image& background, const Image& foreground, const SaliencyMap& mask);

/// Translates a mask by an arbitrary displacement (nearest sampling, zero fill).
SaliencyMap translate_mask(const SaliencyMap& mask, Velocity displacement);

}  // namespace flowsim
