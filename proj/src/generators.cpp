#include "flowsim/generators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <Eigen/Dense>

#include "flowsim/error.hpp"
#include "flowsim/exchange.hpp"
#include "flowsim/media_io.hpp"
#include "flowsim/random.hpp"

namespace fs = std::filesystem;

namespace flowsim {

namespace {

void require_frames(int num_frames) {
  if (num_frames < 1) {
    throw Error(ErrorCode::kInvalidConfig, "num_frames must be >= 1, got " + std::to_string(num_frames));
  }
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Thin-plate spline interpolating control-point displacements.
class ThinPlateSpline {
 public:
  ThinPlateSpline() = default;

  ThinPlateSpline(std::vector<Point> controls, const std::vector<Point>& displacements, double length_scale)
      : controls_(std::move(controls)), scale_(length_scale) {
    const int n = static_cast<int>(controls_.size());
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n + 3, n + 3);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) system(i, j) = kernel(controls_[i], controls_[j]);
      const Point c = normalized(controls_[i]);
      system(i, n) = system(n, i) = 1.0;
      system(i, n + 1) = system(n + 1, i) = c.x;
      system(i, n + 2) = system(n + 2, i) = c.y;
      rhs(i, 0) = displacements[i].x;
      rhs(i, 1) = displacements[i].y;
    }
    coefficients_ = system.colPivHouseholderQr().solve(rhs);
  }

  bool empty() const noexcept { return controls_.empty(); }

  Point displacement(Point p) const {
    if (controls_.empty()) return {};
    const int n = static_cast<int>(controls_.size());
    const Point q = normalized(p);
    double dx = coefficients_(n, 0) + coefficients_(n + 1, 0) * q.x + coefficients_(n + 2, 0) * q.y;
    double dy = coefficients_(n, 1) + coefficients_(n + 1, 1) * q.x + coefficients_(n + 2, 1) * q.y;
    for (int i = 0; i < n; ++i) {
      const double k = kernel(p, controls_[i]);
      dx += coefficients_(i, 0) * k;
      dy += coefficients_(i, 1) * k;
    }
    return {dx, dy};
  }

 private:
  Point normalized(Point p) const { return {p.x / scale_, p.y / scale_}; }

  double kernel(Point a, Point b) const {
    const double dx = (a.x - b.x) / scale_;
    const double dy = (a.y - b.y) / scale_;
    const double r2 = dx * dx + dy * dy;
    return r2 > 0.0 ? r2 * std::log(r2) : 0.0;
  }

  std::vector<Point> controls_;
  double scale_ = 1.0;
  Eigen::MatrixXd coefficients_;
};

// One frame step: TPS displacement followed by a similarity about the center.
class FrameWarp {
 public:
  FrameWarp(const WarpParams& params, int height, int width) {
    cx_ = 0.5 * (width - 1);
    cy_ = 0.5 * (height - 1);
    const double theta = params.rotation_deg * std::numbers::pi / 180.0;
    a_ = params.scale * std::cos(theta);
    b_ = params.scale * std::sin(theta);
    tx_ = params.translate_x * width;
    ty_ = params.translate_y * height;
    const double det = a_ * a_ + b_ * b_;
    if (!(det > 1e-12) || !std::isfinite(det)) {
      throw Error(ErrorCode::kDegenerateWarp, "similarity transform is not invertible");
    }

    if (params.tps_jitter > 0.0) {
      Rng rng(params.seed);
      std::vector<Point> controls;
      std::vector<Point> offsets;
      const int g = params.tps_grid;
      for (int j = 0; j < g; ++j) {
        for (int i = 0; i < g; ++i) {
          controls.push_back({i * (width - 1.0) / (g - 1), j * (height - 1.0) / (g - 1)});
          offsets.push_back({rng.uniform(-1.0, 1.0) * params.tps_jitter * width,
                             rng.uniform(-1.0, 1.0) * params.tps_jitter * height});
        }
      }
      tps_ = ThinPlateSpline(std::move(controls), offsets, std::max(width, height));
    }
  }

  Point forward(Point p) const {
    const Point d = tps_.displacement(p);
    const double x = p.x + d.x - cx_;
    const double y = p.y + d.y - cy_;
    return {cx_ + a_ * x - b_ * y + tx_, cy_ + b_ * x + a_ * y + ty_};
  }

  Point inverse(Point q) const {
    const double det = a_ * a_ + b_ * b_;
    const double x = q.x - tx_ - cx_;
    const double y = q.y - ty_ - cy_;
    const Point target{cx_ + (a_ * x + b_ * y) / det, cy_ + (-b_ * x + a_ * y) / det};
    if (tps_.empty()) return target;
    // Solve p + d(p) = target by fixed-point iteration; d is a contraction for
    // moderate jitter.
    Point p = target;
    for (int iter = 0; iter < 100; ++iter) {
      const Point d = tps_.displacement(p);
      const Point next{target.x - d.x, target.y - d.y};
      const double change = std::hypot(next.x - p.x, next.y - p.y);
      p = next;
      if (change < 1e-7) return p;
    }
    const Point d = tps_.displacement(p);
    if (std::hypot(p.x + d.x - target.x, p.y + d.y - target.y) > 1e-3) {
      throw Error(ErrorCode::kDegenerateWarp, "thin-plate spline folds over; reduce tps_jitter");
    }
    return p;
  }

 private:
  double cx_ = 0.0, cy_ = 0.0;
  double a_ = 1.0, b_ = 0.0;
  double tx_ = 0.0, ty_ = 0.0;
  ThinPlateSpline tps_;
};

GenerationConfig config_for(int num_frames, const Image& source) {
  GenerationConfig config;
  config.num_frames = num_frames;
  config.height = source.height();
  config.width = source.width();
  return config;
}

bool inside(const SaliencyMap& mask, double x, double y) {
  const int xi = static_cast<int>(std::lround(x));
  const int yi = static_cast<int>(std::lround(y));
  if (xi < 0 || yi < 0 || xi >= mask.width() || yi >= mask.height()) return false;
  return mask.values(yi, xi) >= 0.5f;
}

}  // namespace

void GenerationConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "generation: " + what); };
  if (num_frames < 1) fail("num_frames must be >= 1");
  if (height < 1 || width < 1) fail("resolution must be positive");
  if (sampler_steps < 1) fail("sampler_steps must be >= 1");
  if (!(guidance_first > 0.0) || !(guidance_last > 0.0)) fail("guidance scales must be > 0");
  if (frame_rate < 1) fail("frame_rate must be >= 1");
  if (decode_chunk < 1) fail("decode_chunk must be >= 1");
}

void WarpParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::kDegenerateWarp, "scale must be positive, got " + std::to_string(scale));
  }
  if (tps_grid < 3) throw Error(ErrorCode::kInvalidConfig, "tps_grid must be >= 3");
  if (!(tps_jitter >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "tps_jitter must be >= 0");
  if (!std::isfinite(rotation_deg) || !std::isfinite(translate_x) || !std::isfinite(translate_y)) {
    throw Error(ErrorCode::kInvalidConfig, "warp parameters must be finite");
  }
}

WarpParams WarpParams::sample(std::uint64_t seed) {
  Rng rng(seed);
  WarpParams p;
  p.rotation_deg = rng.uniform(-10.0, 10.0);
  p.scale = rng.uniform(0.95, 1.05);
  p.translate_x = rng.uniform(-0.05, 0.05);
  p.translate_y = rng.uniform(-0.05, 0.05);
  p.tps_grid = 5;
  p.tps_jitter = 0.02;
  p.seed = rng.next();
  return p;
}

FrameSequence generate_identity(const Image& source, int num_frames) {
  require_frames(num_frames);
  FrameSequence seq{source, std::vector<Image>(static_cast<std::size_t>(num_frames), source), "identity",
                    config_for(num_frames, source)};
  return seq;
}

AnalyticSequence generate_spatial_warp(const Image& source, const WarpParams& params, int num_frames) {
  require_frames(num_frames);
  params.validate();
  const FrameWarp warp(params, source.height(), source.width());
  const int h = source.height();
  const int w = source.width();

  AnalyticSequence out;
  out.sequence = {source, {}, "spatial_warp", config_for(num_frames, source)};
  out.sequence.config.seed = params.seed;

  // Forward positions of every source pixel, compounded frame by frame.
  std::vector<Point> forward(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) forward[static_cast<std::size_t>(y) * w + x] = {double(x), double(y)};
  // Source position seen by every target pixel.
  std::vector<Point> backward = forward;

  for (int t = 1; t <= num_frames; ++t) {
    FlowField flow(h, w);
    Image frame(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        forward[i] = warp.forward(forward[i]);
        flow.u(y, x) = static_cast<float>(forward[i].x - x);
        flow.v(y, x) = static_cast<float>(forward[i].y - y);
        backward[i] = warp.inverse(backward[i]);
        float rgb[3];
        source.sample(static_cast<float>(backward[i].x), static_cast<float>(backward[i].y), rgb);
        for (int c = 0; c < 3; ++c) frame.at(y, x, c) = rgb[c];
      }
    }
    out.sequence.frames.push_back(std::move(frame));
    out.flows.push_back(std::move(flow));
  }
  return out;
}

AnalyticSequence generate_synthetic_scene(const SaliencyMap& mask, const Image& source, Velocity fg,
                                          Velocity bg, int num_frames) {
  require_frames(num_frames);
  if (mask.height() != source.height() || mask.width() != source.width()) {
    throw Error(ErrorCode::kDimensionMismatch, "mask and source must share dimensions");
  }
  if (!std::isfinite(fg.dx) || !std::isfinite(fg.dy) || !std::isfinite(bg.dx) || !std::isfinite(bg.dy)) {
    throw Error(ErrorCode::kInvalidConfig, "velocities must be finite");
  }
  const auto& values = mask.values.data();
  if (std::none_of(values.begin(), values.end(), [](float v) { return v >= 0.5f; })) {
    throw Error(ErrorCode::kEmptyMask, "synthetic scene needs a non-empty foreground");
  }

  const int h = source.height();
  const int w = source.width();
  AnalyticSequence out;
  out.sequence = {source, {}, "synthetic_scene", config_for(num_frames, source)};

  for (int t = 1; t <= num_frames; ++t) {
    const double fx = fg.dx * t, fy = fg.dy * t;
    const double bx = bg.dx * t, by = bg.dy * t;

    FlowField flow(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const bool object = mask.values(y, x) >= 0.5f;
        flow.u(y, x) = static_cast<float>(object ? fx : bx);
        flow.v(y, x) = static_cast<float>(object ? fy : by);
      }
    }

    Image frame(h, w);
    std::vector<char> hole(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
      std::fill(hole.begin(), hole.end(), 0);
      for (int x = 0; x < w; ++x) {
        float rgb[3];
        if (inside(mask, x - fx, y - fy)) {
          source.sample(static_cast<float>(x - fx), static_cast<float>(y - fy), rgb);
        } else if (!inside(mask, x - bx, y - by)) {
          source.sample(static_cast<float>(x - bx), static_cast<float>(y - by), rgb);
        } else {
          hole[static_cast<std::size_t>(x)] = 1;
          continue;
        }
        for (int c = 0; c < 3; ++c) frame.at(y, x, c) = rgb[c];
      }
      // Disoccluded background: replicate the nearest revealed pixel on the row.
      for (int x = 0; x < w; ++x) {
        if (!hole[static_cast<std::size_t>(x)]) continue;
        int left = x - 1, right = x + 1;
        while (left >= 0 && hole[static_cast<std::size_t>(left)]) --left;
        while (right < w && hole[static_cast<std::size_t>(right)]) ++right;
        int src = -1;
        if (left >= 0 && (right >= w || x - left <= right - x)) src = left;
        else if (right < w) src = right;
        for (int c = 0; c < 3; ++c) {
          frame.at(y, x, c) = src >= 0 ? frame.at(y, src, c)
                                       : source.at(std::clamp(static_cast<int>(std::lround(y - by)), 0, h - 1),
                                                   std::clamp(static_cast<int>(std::lround(x - bx)), 0, w - 1), c);
        }
      }
    }
    out.sequence.frames.push_back(std::move(frame));
    out.flows.push_back(std::move(flow));
  }
  return out;
}

FrameSequence generate_external(const Image& source, const GenerationConfig& config,
                                const ExchangeOptions& exchange) {
  config.validate();
  if (exchange.root.empty()) throw Error(ErrorCode::kInvalidConfig, "external generator needs a backend directory");
  fs::create_directories(exchange.root);

  const Image request_image = resize(source, config.height, config.width, ResizeMode::kBilinear);
  nlohmann::ordered_json request;
  request["T"] = config.num_frames;
  request["resolution"] = {config.height, config.width};
  request["sampler_steps"] = config.sampler_steps;
  request["guidance_first"] = config.guidance_first;
  request["guidance_last"] = config.guidance_last;
  request["frame_rate"] = config.frame_rate;
  request["decode_chunk"] = config.decode_chunk;
  request["seed"] = config.seed;

  std::string id = exchange.request_id;
  if (id.empty()) {
    const auto pixels = request_image.data();
    std::uint64_t hash = exchange::fnv1a(pixels.data(), pixels.size_bytes());
    const std::string dumped = request.dump();
    hash = exchange::fnv1a(dumped.data(), dumped.size(), hash);
    id = "gen_" + exchange::hex_id(hash);
  }
  const fs::path dir = exchange.root / id;
  fs::remove_all(dir);
  fs::create_directories(dir);
  store_image(request_image, dir / "source.png");
  exchange::write_json(dir / exchange::kRequestFile, request);

  exchange::wait_for_done(dir, exchange.timeout, exchange.poll_interval);

  FrameSequence seq{source, {}, "external", config};
  for (int t = 1; t <= config.num_frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.png", t);
    const fs::path frame_path = dir / name;
    if (!fs::exists(frame_path)) {
      throw Error(ErrorCode::kIncompleteSequence, "backend produced " + std::to_string(t - 1) + " of " +
                                                      std::to_string(config.num_frames) + " frames in " +
                                                      dir.string());
    }
    seq.frames.push_back(resize(load_image(frame_path), source.height(), source.width(), ResizeMode::kBilinear));
  }
  return seq;
}

Image make_textured_image(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Image out(height, width);
  // Value noise at several octaves plus a few oriented gratings per channel.
  constexpr int kOctaves[] = {3, 6, 12, 24};
  constexpr double kWeights[] = {0.20, 0.30, 0.30, 0.20};
  for (int c = 0; c < 3; ++c) {
    Plane acc(height, width);
    for (int o = 0; o < 4; ++o) {
      const int cell = kOctaves[o];
      const int gw = width / cell + 2;
      const int gh = height / cell + 2;
      std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
      for (double& v : lattice) v = rng.uniform();
      for (int y = 0; y < height; ++y) {
        const double gy = static_cast<double>(y) / cell;
        const int y0 = static_cast<int>(gy);
        const double ty = gy - y0;
        const double sy = ty * ty * (3 - 2 * ty);
        for (int x = 0; x < width; ++x) {
          const double gx = static_cast<double>(x) / cell;
          const int x0 = static_cast<int>(gx);
          const double tx = gx - x0;
          const double sx = tx * tx * (3 - 2 * tx);
          auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * gw + xx]; };
          const double top = (1 - sx) * at(y0, x0) + sx * at(y0, x0 + 1);
          const double bottom = (1 - sx) * at(y0 + 1, x0) + sx * at(y0 + 1, x0 + 1);
          acc(y, x) += static_cast<float>(kWeights[o] * ((1 - sy) * top + sy * bottom));
        }
      }
    }
    const double freq = rng.uniform(0.15, 0.45);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double grating = std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)) + phase);
        const double v = 0.1 + 0.8 * (0.8 * acc(y, x) + 0.2 * (0.5 + 0.5 * grating));
        out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

SaliencyMap make_blob_mask(int height, int width, std::uint64_t seed, double radius_fraction) {
  Rng rng(seed);
  const double cx = width * (0.5 + rng.uniform(-0.08, 0.08));
  const double cy = height * (0.5 + rng.uniform(-0.08, 0.08));
  const double radius = radius_fraction * std::min(height, width);
  const int lobes = 2 + static_cast<int>(rng.below(4));
  const double amp = rng.uniform(0.05, 0.2);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  const double aspect = rng.uniform(0.8, 1.25);

  SaliencyMap mask{Plane(height, width), true};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = (x - cx) / aspect;
      const double dy = (y - cy) * aspect;
      const double r = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx);
      const double boundary = radius * (1.0 + amp * std::sin(lobes * theta + phase));
      mask.values(y, x) = r <= boundary ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Image composite(const Image& background, const Image& foreground, const SaliencyMap& mask) {
  if (!background.same_shape(foreground) || background.height() != mask.height() ||
      background.width() != mask.width()) {
    throw Error(ErrorCode::kDimensionMismatch, "composite inputs must share dimensions");
  }
  Image out = background;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      if (mask.values(y, x) >= 0.5f)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = foreground.at(y, x, c);
  return out;
}

SaliencyMap translate_mask(const SaliencyMap& mask, Velocity d) {
  SaliencyMap out{Plane(mask.height(), mask.width()), mask.is_binary};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      const int sx = static_cast<int>(std::lround(x - d.dx));
      const int sy = static_cast<int>(std::lround(y - d.dy));
      if (sx >= 0 && sy >= 0 && sx < mask.width() && sy < mask.height()) out.values(y, x) = mask.values(sy, sx);
    }
  return out;
}

}  // namespace flowsim
