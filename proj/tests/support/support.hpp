#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowsim/flow.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/image.hpp"

namespace flowsim::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::string& bytes);

/// True when both trees hold the same relative paths with identical bytes.
bool trees_identical(const std::filesystem::path& a, const std::filesystem::path& b);

/// Textured object composited on a textured background with independent motion.
struct Scene {
  Image source;
  SaliencyMap mask;
  Velocity fg;
  Velocity bg;
};

/// Foreground speed in [1, 3] px/frame, background components in [-1, 1].
Scene make_scene(int height, int width, std::uint64_t seed);

/// Writes `frames` consecutive frames of the scene (frame 0 is the source) and
/// their moved masks as `<dir>/frames/NNN.png`, `<dir>/masks/NNN.png`.
void write_clip(const Scene& scene, int frames, const std::filesystem::path& dir);

/// Writes `n` still images with masks as `<dir>/images/srcNN.png`, `<dir>/masks/srcNN.png`.
void write_stills(int n, int height, int width, std::uint64_t seed, const std::filesystem::path& dir);

/// Euclidean distance (capped at `cap`) from every pixel to the nearest pixel
/// of the other label.
Plane boundary_distance(const SaliencyMap& mask, int cap);

/// Mask-aligned discontinuity. Around every third boundary pixel, fits
/// flow = affine + step * inside over a (2*radius+1)^2 window, ignoring pixels
/// closer than `exclude` to the boundary; returns the norm of the mean step.
/// Smooth fields give ~0, piecewise motion gives the jump between the pieces.
/// The default window suits objects of a few tens of pixels (128x128 scenes).
double boundary_contrast(const FlowField& flow, const SaliencyMap& mask, int radius = 12, double exclude = 5.0);

/// Endpoint-error medians inside / outside the mask, excluding a band of
/// `band` pixels around the boundary.
struct EpeSplit {
  double inside = 0.0;
  double outside = 0.0;
};
EpeSplit median_epe(const FlowField& estimate, const FlowField& truth, const SaliencyMap& mask, double band = 3.0);

namespace oracle {

// Deliberately naive reference metrics: direct loops over every threshold and
// explicit sub-matrix copies, written independently of flowsim::metrics.
double mae(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt);
double f_max(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt);
double f_mean(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt);
double s_measure(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt);

std::vector<std::vector<double>> to_rows(const SaliencyMap& map);

}  // namespace oracle

}  // namespace flowsim::testing
