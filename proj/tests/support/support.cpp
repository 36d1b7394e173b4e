#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "flowsim/media_io.hpp"
#include "flowsim/random.hpp"

namespace fs = std::filesystem;

namespace flowsim::testing {

TempDir::TempDir(const std::string& tag) {
  static std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    char name[64];
    std::snprintf(name, sizeof(name), "flowsim_%s_%08x", tag.c_str(), rd());
    fs::path candidate = fs::temp_directory_path() / name;
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

bool trees_identical(const fs::path& a, const fs::path& b) {
  auto collect = [](const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_bytes(e.path());
    }
    return files;
  };
  return collect(a) == collect(b);
}

Scene make_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  const Image bg = make_textured_image(height, width, derive_seed(seed, 1));
  const Image fg = make_textured_image(height, width, derive_seed(seed, 2));
  const SaliencyMap mask = make_blob_mask(height, width, derive_seed(seed, 3), 0.18 + 0.1 * rng.uniform());
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double speed = rng.uniform(1.0, 3.0);
  Scene s{composite(bg, fg, mask), mask, {speed * std::cos(angle), speed * std::sin(angle)},
          {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}};
  return s;
}

void write_clip(const Scene& scene, int frames, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  const auto seq = frames > 1 ? generate_synthetic_scene(scene.mask, scene.source, scene.fg, scene.bg, frames - 1)
                              : AnalyticSequence{};
  for (int t = 0; t < frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03d.png", t);
    store_image(t == 0 ? scene.source : seq.sequence.frames[t - 1], dir / "frames" / name);
    store_mask(translate_mask(scene.mask, {scene.fg.dx * t, scene.fg.dy * t}), dir / "masks" / name);
  }
}

void write_stills(int n, int height, int width, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (int i = 0; i < n; ++i) {
    const Scene s = make_scene(height, width, derive_seed(seed, i));
    char name[32];
    std::snprintf(name, sizeof(name), "src%02d.png", i);
    store_image(s.source, dir / "images" / name);
    store_mask(s.mask, dir / "masks" / name);
  }
}

Plane boundary_distance(const SaliencyMap& mask, int cap) {
  const int h = mask.height(), w = mask.width();
  Plane dist(h, w, static_cast<float>(cap));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool inside = mask.values(y, x) >= 0.5f;
      float best = static_cast<float>(cap);
      for (int dy = -cap; dy <= cap; ++dy) {
        for (int dx = -cap; dx <= cap; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if ((mask.values(yy, xx) >= 0.5f) == inside) continue;
          best = std::min(best, std::sqrt(static_cast<float>(dx * dx + dy * dy)));
        }
      }
      dist(y, x) = best;
    }
  }
  return dist;
}

double boundary_contrast(const FlowField& flow, const SaliencyMap& mask, int radius, double exclude) {
  const int h = mask.height(), w = mask.width();
  const Plane dist = boundary_distance(mask, radius + 2);
  double sum_u = 0.0, sum_v = 0.0;
  int points = 0;
  for (int y = radius; y < h - radius; y += 3) {
    for (int x = radius; x < w - radius; x += 3) {
      if (mask.values(y, x) < 0.5f || dist(y, x) > 1.0f) continue;
      // flow ~ a + b*dx + c*dy + step*inside over the window, boundary strip left out.
      Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
      Eigen::Vector4d rhs_u = Eigen::Vector4d::Zero(), rhs_v = Eigen::Vector4d::Zero();
      for (int yy = y - radius; yy <= y + radius; ++yy) {
        for (int xx = x - radius; xx <= x + radius; ++xx) {
          if (dist(yy, xx) < exclude) continue;
          const Eigen::Vector4d basis(1.0, xx - x, yy - y, mask.values(yy, xx) >= 0.5f ? 1.0 : 0.0);
          normal += basis * basis.transpose();
          rhs_u += basis * flow.u(yy, xx);
          rhs_v += basis * flow.v(yy, xx);
        }
      }
      const Eigen::FullPivLU<Eigen::Matrix4d> lu(normal);
      if (lu.rank() < 4) continue;
      sum_u += lu.solve(rhs_u)(3);
      sum_v += lu.solve(rhs_v)(3);
      ++points;
    }
  }
  return points ? std::hypot(sum_u / points, sum_v / points) : 0.0;
}

EpeSplit median_epe(const FlowField& estimate, const FlowField& truth, const SaliencyMap& mask, double band) {
  const Plane dist = boundary_distance(mask, static_cast<int>(std::ceil(band)) + 1);
  std::vector<double> inside, outside;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (dist(y, x) <= band) continue;
      const double e = std::hypot(estimate.u(y, x) - truth.u(y, x), estimate.v(y, x) - truth.v(y, x));
      (mask.values(y, x) >= 0.5f ? inside : outside).push_back(e);
    }
  }
  auto median = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  return {median(inside), median(outside)};
}

namespace oracle {

using Grid = std::vector<std::vector<double>>;

namespace {

constexpr double kEps = 1e-8;

double mean_of(const Grid& g) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& row : g)
    for (double v : row) {
      s += v;
      ++n;
    }
  return n ? s / n : 0.0;
}

Grid sub(const Grid& g, int r0, int r1, int c0, int c1) {
  Grid out;
  for (int r = r0; r < r1; ++r) out.emplace_back(g[r].begin() + c0, g[r].begin() + c1);
  return out;
}

double object(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= x.size();
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = x.size() > 1 ? std::sqrt(ss / (x.size() - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double ssim(const Grid& p, const Grid& g) {
  const double n = static_cast<double>(p.size() * (p.empty() ? 0 : p[0].size()));
  if (n == 0) return 0.0;
  const double x = mean_of(p), y = mean_of(g);
  double sx = 0, sy = 0, sxy = 0;
  for (std::size_t r = 0; r < p.size(); ++r)
    for (std::size_t c = 0; c < p[r].size(); ++c) {
      sx += (p[r][c] - x) * (p[r][c] - x);
      sy += (g[r][c] - y) * (g[r][c] - y);
      sxy += (p[r][c] - x) * (g[r][c] - y);
    }
  sx /= (n - 1 + kEps);
  sy /= (n - 1 + kEps);
  sxy /= (n - 1 + kEps);
  const double a = 4 * x * y * sxy;
  const double b = (x * x + y * y) * (sx + sy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1.0 : 0.0;
}

Grid binary(const Grid& gt) {
  Grid out = gt;
  for (auto& row : out)
    for (double& v : row) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

// MATLAB-style round: halves away from zero.
int mround(double v) { return static_cast<int>(v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5)); }

}  // namespace

std::vector<std::vector<double>> to_rows(const SaliencyMap& map) {
  Grid g(map.height(), std::vector<double>(map.width()));
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) g[y][x] = map.values(y, x);
  return g;
}

double mae(const Grid& pred, const Grid& gt) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < pred.size(); ++r)
    for (std::size_t c = 0; c < pred[r].size(); ++c) {
      s += std::fabs(pred[r][c] - gt[r][c]);
      ++n;
    }
  return s / n;
}

namespace {

std::vector<double> f_curve(const Grid& pred, const Grid& gt) {
  const Grid g = binary(gt);
  std::vector<double> curve;
  for (int k = 1; k <= 255; ++k) {
    const double tau = k / 255.0;
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t r = 0; r < pred.size(); ++r)
      for (std::size_t c = 0; c < pred[r].size(); ++c) {
        const bool p = pred[r][c] >= tau;
        const bool t = g[r][c] == 1.0;
        if (p && t) tp += 1;
        if (p && !t) fp += 1;
        if (!p && t) fn += 1;
      }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp / (tp + fn);
    const double d = 0.3 * precision + recall;
    curve.push_back(d > 0 ? 1.3 * precision * recall / d : 0.0);
  }
  return curve;
}

}  // namespace

double f_max(const Grid& pred, const Grid& gt) {
  const auto c = f_curve(pred, gt);
  return *std::max_element(c.begin(), c.end());
}

double f_mean(const Grid& pred, const Grid& gt) {
  const auto c = f_curve(pred, gt);
  double s = 0;
  for (double v : c) s += v;
  return s / c.size();
}

double s_measure(const Grid& pred, const Grid& gt_in) {
  const Grid gt = binary(gt_in);
  const double y = mean_of(gt);
  if (y == 0) return std::clamp(1.0 - mean_of(pred), 0.0, 1.0);
  if (y == 1) return std::clamp(mean_of(pred), 0.0, 1.0);
  const int rows = static_cast<int>(gt.size()), cols = static_cast<int>(gt[0].size());

  // Object term.
  std::vector<double> fg, bg;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (gt[r][c] == 1.0) fg.push_back(pred[r][c]);
      else bg.push_back(1.0 - pred[r][c]);
    }
  const double so = y * object(fg) + (1 - y) * object(bg);

  // Region term: split at the 1-based centroid.
  double total = 0, sx = 0, sy = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      total += gt[r][c];
      sx += gt[r][c] * (c + 1);
      sy += gt[r][c] * (r + 1);
    }
  const int X = mround(sx / total), Y = mround(sy / total);
  const double area = static_cast<double>(rows) * cols;
  const double w1 = X * Y / area, w2 = (cols - X) * Y / area, w3 = X * (rows - Y) / area, w4 = 1 - w1 - w2 - w3;
  const double sr = w1 * ssim(sub(pred, 0, Y, 0, X), sub(gt, 0, Y, 0, X)) +
                    w2 * ssim(sub(pred, 0, Y, X, cols), sub(gt, 0, Y, X, cols)) +
                    w3 * ssim(sub(pred, Y, rows, 0, X), sub(gt, Y, rows, 0, X)) +
                    w4 * ssim(sub(pred, Y, rows, X, cols), sub(gt, Y, rows, X, cols));
  return std::clamp(0.5 * so + 0.5 * sr, 0.0, 1.0);
}

}  // namespace oracle

}  // namespace flowsim::testing
