#include "flowsim/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "flowsim/error.hpp"
#include "flowsim/media_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace flowsim::metrics {

namespace {

void require_aligned(const SaliencyMap& pred, const SaliencyMap& gt, const char* what) {
  if (!pred.values.same_shape(gt.values) || pred.values.empty()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": prediction " + std::to_string(pred.height()) + "x" +
                    std::to_string(pred.width()) + " vs ground truth " + std::to_string(gt.height()) + "x" +
                    std::to_string(gt.width()));
  }
}

bool is_fg(float v) { return v >= 0.5f; }

// Number of thresholds k/255 (k = 1..255) that `value` reaches.
int thresholds_reached(double value) {
  int k = std::clamp(static_cast<int>(std::floor(value * kNumThresholds)), 0, kNumThresholds);
  while (k < kNumThresholds && value >= static_cast<double>(k + 1) / kNumThresholds) ++k;
  while (k > 0 && value < static_cast<double>(k) / kNumThresholds) --k;
  return k;
}

// Mean / variance helpers over a rectangular block.
struct Block {
  int y0, y1, x0, x1;
  int area() const { return std::max(0, y1 - y0) * std::max(0, x1 - x0); }
};

double block_ssim(const Plane& pred, const Plane& gt, Block b) {
  const int n = b.area();
  if (n == 0) return 0.0;
  double sx = 0.0, sy = 0.0;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) {
      sx += pred(y, x);
      sy += is_fg(gt(y, x)) ? 1.0 : 0.0;
    }
  const double mx = sx / n, my = sy / n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) {
      const double dx = pred(y, x) - mx;
      const double dy = (is_fg(gt(y, x)) ? 1.0 : 0.0) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  const double denom_n = n - 1 + kEpsilon;
  vx /= denom_n;
  vy /= denom_n;
  cxy /= denom_n;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0.0) return alpha / (beta + kEpsilon);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

// O(x) = 2 mean / (mean^2 + 1 + std + eps) over the selected region.
double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEpsilon);
}

}  // namespace

double mae(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_aligned(pred, gt, "mae");
  const auto p = pred.values.data();
  const auto g = gt.values.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::fabs(static_cast<double>(p[i]) - g[i]);
  return sum / static_cast<double>(p.size());
}

double f_from_precision_recall(double precision, double recall) {
  const double denom = kBetaSquared * precision + recall;
  if (denom <= 0.0) return 0.0;
  return (1.0 + kBetaSquared) * precision * recall / denom;
}

double f_measure(const SaliencyMap& pred, const SaliencyMap& gt, FOptions options) {
  require_aligned(pred, gt, "f_measure");
  const auto p = pred.values.data();
  const auto g = gt.values.data();
  std::size_t positives = 0;
  for (float v : g) positives += is_fg(v) ? 1 : 0;
  if (positives == 0) throw Error(ErrorCode::kEmptyGroundTruth, "f_measure needs foreground in the ground truth");

  if (options.mode == FMode::kFixed) {
    std::size_t tp = 0, predicted = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] >= options.threshold) {
        ++predicted;
        tp += is_fg(g[i]) ? 1 : 0;
      }
    }
    const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = static_cast<double>(tp) / positives;
    return f_from_precision_recall(precision, recall);
  }

  // Histogram by the number of thresholds each pixel reaches, then accumulate
  // from the top so that bin k holds counts for pred >= k/255.
  std::array<std::size_t, kNumThresholds + 2> hist_fg{};
  std::array<std::size_t, kNumThresholds + 2> hist_all{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int k = thresholds_reached(p[i]);
    ++hist_all[static_cast<std::size_t>(k)];
    if (is_fg(g[i])) ++hist_fg[static_cast<std::size_t>(k)];
  }
  std::size_t tp = 0, predicted = 0;
  double best = 0.0, total = 0.0;
  for (int k = kNumThresholds; k >= 1; --k) {
    tp += hist_fg[static_cast<std::size_t>(k)];
    predicted += hist_all[static_cast<std::size_t>(k)];
    const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = static_cast<double>(tp) / positives;
    const double f = f_from_precision_recall(precision, recall);
    best = std::max(best, f);
    total += f;
  }
  return options.mode == FMode::kMax ? best : total / kNumThresholds;
}

double s_object(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_aligned(pred, gt, "s_object");
  const auto p = pred.values.data();
  const auto g = gt.values.data();
  std::vector<double> fg_values, bg_values;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (is_fg(g[i])) fg_values.push_back(p[i]);
    else bg_values.push_back(1.0 - p[i]);
  }
  const double u = static_cast<double>(fg_values.size()) / static_cast<double>(p.size());
  return u * object_score(fg_values) + (1.0 - u) * object_score(bg_values);
}

double s_region(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_aligned(pred, gt, "s_region");
  const int h = gt.height(), w = gt.width();
  double count = 0.0, sum_x = 0.0, sum_y = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (is_fg(gt.values(y, x))) {
        count += 1.0;
        sum_x += x + 1;  // 1-based centroid as in the reference code
        sum_y += y + 1;
      }
  int cx, cy;
  if (count == 0.0) {
    cx = static_cast<int>(std::round(w / 2.0));
    cy = static_cast<int>(std::round(h / 2.0));
  } else {
    cx = static_cast<int>(std::round(sum_x / count));
    cy = static_cast<int>(std::round(sum_y / count));
  }
  const double area = static_cast<double>(h) * w;
  const std::array<Block, 4> blocks{{{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}}};
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(w - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (h - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const std::array<double, 4> weights{w1, w2, w3, w4};
  double score = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (blocks[i].area() == 0) continue;
    score += weights[i] * block_ssim(pred.values, gt.values, blocks[i]);
  }
  return score;
}

double s_measure(const SaliencyMap& pred, const SaliencyMap& gt, double alpha) {
  require_aligned(pred, gt, "s_measure");
  const auto p = pred.values.data();
  const auto g = gt.values.data();
  double fg = 0.0, pred_mean = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    fg += is_fg(g[i]) ? 1.0 : 0.0;
    pred_mean += p[i];
  }
  fg /= static_cast<double>(p.size());
  pred_mean /= static_cast<double>(p.size());
  double q;
  if (fg == 0.0) {
    q = 1.0 - pred_mean;
  } else if (fg == 1.0) {
    q = pred_mean;
  } else {
    q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
  }
  return std::clamp(q, 0.0, 1.0);
}

FrameScore score_frame(const std::string& name, const SaliencyMap& pred, const SaliencyMap& gt) {
  FrameScore score;
  score.name = name;
  score.s = s_measure(pred, gt);
  score.mae = mae(pred, gt);
  try {
    score.f_max = f_measure(pred, gt, {FMode::kMax});
    score.f_mean = f_measure(pred, gt, {FMode::kMean});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyGroundTruth) throw;
  }
  return score;
}

FrameScore worst_case_frame(const std::string& name) {
  FrameScore score;
  score.name = name;
  score.s = 0.0;
  score.f_max = 0.0;
  score.f_mean = 0.0;
  score.mae = 1.0;
  score.missing = true;
  return score;
}

MetricReport summarize(const std::string& dataset, std::vector<FrameScore> frames) {
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  MetricReport report;
  report.dataset = dataset;
  double s = 0.0, m = 0.0, fmax = 0.0, fmean = 0.0;
  int f_count = 0;
  for (const auto& f : frames) {
    s += f.s;
    m += f.mae;
    if (f.f_max) {
      fmax += *f.f_max;
      fmean += f.f_mean.value_or(0.0);
      ++f_count;
    }
    if (f.missing) report.missing.push_back(f.name);
  }
  if (!frames.empty()) {
    report.s_measure = s / static_cast<double>(frames.size());
    report.mae = m / static_cast<double>(frames.size());
  }
  if (f_count > 0) {
    report.f_measure = fmax / f_count;
    report.f_measure_mean = fmean / f_count;
  }
  report.per_frame = std::move(frames);
  return report;
}

MetricReport evaluate_dataset(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& dataset) {
  if (!fs::is_directory(gt_dir)) throw Error(ErrorCode::kMissingFile, gt_dir.string());
  if (!fs::is_directory(pred_dir)) throw Error(ErrorCode::kMissingFile, pred_dir.string());
  std::map<std::string, fs::path> predictions;
  for (const auto& entry : fs::directory_iterator(pred_dir)) {
    if (entry.is_regular_file()) predictions[entry.path().stem().string()] = entry.path();
  }
  std::vector<fs::path> gts;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    if (entry.is_regular_file()) gts.push_back(entry.path());
  }
  std::sort(gts.begin(), gts.end());

  std::vector<FrameScore> frames;
  for (const auto& gt_path : gts) {
    const std::string stem = gt_path.stem().string();
    const auto it = predictions.find(stem);
    if (it == predictions.end()) {
      frames.push_back(worst_case_frame(stem));
      continue;
    }
    const SaliencyMap gt = load_mask(gt_path, 0.5f);
    SaliencyMap pred = load_mask(it->second, std::nullopt);
    if (!pred.values.same_shape(gt.values)) pred = SaliencyMap{resize(pred.values, gt.height(), gt.width()), false};
    frames.push_back(score_frame(stem, pred, gt));
  }
  return summarize(dataset, std::move(frames));
}

MetricReport aggregate(const std::vector<MetricReport>& reports, const std::string& name) {
  MetricReport out;
  out.dataset = name;
  if (reports.empty()) return out;
  for (const auto& r : reports) {
    out.s_measure += r.s_measure;
    out.f_measure += r.f_measure;
    out.f_measure_mean += r.f_measure_mean;
    out.mae += r.mae;
  }
  const double n = static_cast<double>(reports.size());
  out.s_measure /= n;
  out.f_measure /= n;
  out.f_measure_mean /= n;
  out.mae /= n;
  return out;
}

void write_table(std::ostream& out, const std::vector<MetricReport>& reports) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %7s %7s %7s %7s\n", "Dataset", "S", "F(max)", "F(mean)", "M");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-16s %7.1f %7.1f %7.1f %7.1f\n", r.dataset.c_str(), 100.0 * r.s_measure,
                  100.0 * r.f_measure, 100.0 * r.f_measure_mean, 100.0 * r.mae);
    out << line;
  }
}

void write_jsonl(std::ostream& out, const std::vector<MetricReport>& reports) {
  for (const auto& r : reports) {
    for (const auto& f : r.per_frame) {
      nlohmann::ordered_json rec;
      rec["dataset"] = r.dataset;
      rec["frame"] = f.name;
      rec["s_measure"] = f.s;
      rec["f_max"] = f.f_max ? nlohmann::ordered_json(*f.f_max) : nlohmann::ordered_json(nullptr);
      rec["f_mean"] = f.f_mean ? nlohmann::ordered_json(*f.f_mean) : nlohmann::ordered_json(nullptr);
      rec["mae"] = f.mae;
      rec["missing"] = f.missing;
      out << rec.dump() << '\n';
    }
    nlohmann::ordered_json summary;
    summary["dataset"] = r.dataset;
    summary["summary"] = true;
    summary["frames"] = r.per_frame.size();
    summary["s_measure"] = r.s_measure;
    summary["f_measure"] = r.f_measure;
    summary["f_measure_mean"] = r.f_measure_mean;
    summary["mae"] = r.mae;
    summary["missing"] = r.missing;
    out << summary.dump() << '\n';
  }
}

}  // namespace flowsim::metrics
