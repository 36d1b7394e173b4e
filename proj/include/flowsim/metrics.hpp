#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "flowsim/image.hpp"

namespace flowsim::metrics {

inline constexpr double kBetaSquared = 0.3;
inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kEpsilon = 1e-8;
inline constexpr int kNumThresholds = 255;

/// Mean absolute per-pixel difference.
double mae(const SaliencyMap& pred, const SaliencyMap& gt);

enum class FMode { kMax, kMean, kFixed };

struct FOptions {
  FMode mode = FMode::kMax;
  double threshold = 0.5;  // used by kFixed
};

/// Weighted F-measure with beta^2 = 0.3. Predictions are binarized with
/// `pred >= k/255` for k = 1..255 (or at the fixed threshold).
/// Throws Error(kEmptyGroundTruth) when gt has no foreground.
double f_measure(const SaliencyMap& pred, const SaliencyMap& gt, FOptions options = {});

/// F from precision/recall; 0 when both vanish.
double f_from_precision_recall(double precision, double recall);

/// Object-aware term S_o.
double s_object(const SaliencyMap& pred, const SaliencyMap& gt);
/// Region-aware term S_r.
double s_region(const SaliencyMap& pred, const SaliencyMap& gt);

/// Structure measure alpha*S_o + (1-alpha)*S_r, clamped to [0,1], with the
/// usual all-background / all-foreground edge rules.
double s_measure(const SaliencyMap& pred, const SaliencyMap& gt, double alpha = kDefaultAlpha);

struct FrameScore {
  std::string name;
  double s = 0.0;
  std::optional<double> f_max;   // absent when the frame has no foreground
  std::optional<double> f_mean;
  double mae = 0.0;
  bool missing = false;
};

struct MetricReport {
  std::string dataset;
  double s_measure = 0.0;
  double f_measure = 0.0;       // max-F headline
  double f_measure_mean = 0.0;
  double mae = 0.0;
  std::vector<FrameScore> per_frame;
  std::vector<std::string> missing;
};

FrameScore score_frame(const std::string& name, const SaliencyMap& pred, const SaliencyMap& gt);

/// The score charged to a frame without a prediction.
FrameScore worst_case_frame(const std::string& name);

/// Uniform average over frames.
MetricReport summarize(const std::string& dataset, std::vector<FrameScore> frames);

/// Matches predictions to ground truth by filename stem. Ground truth drives the
/// frame list; missing predictions are flagged and scored worst-case.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              const std::string& dataset = "dataset");

/// Mean of the per-dataset means ("Average" column semantics).
MetricReport aggregate(const std::vector<MetricReport>& reports, const std::string& name = "Average");

/// Aligned table with scores x100 at one decimal.
void write_table(std::ostream& out, const std::vector<MetricReport>& reports);

/// One JSON record per frame followed by one summary record per dataset.
void write_jsonl(std::ostream& out, const std::vector<MetricReport>& reports);

}  // namespace flowsim::metrics
