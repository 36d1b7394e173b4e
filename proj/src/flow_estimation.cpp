#include "flowsim/flow_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "cv_interop.hpp"
#include "flowsim/error.hpp"
#include "flowsim/exchange.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;

namespace flowsim {

namespace {

cv::Mat to_gray(const Image& image) {
  Plane lum = image.luminance();
  cv::Mat gray = detail::view(lum).clone();
  cv::GaussianBlur(gray, gray, cv::Size(0, 0), 1.0, 1.0, cv::BORDER_REPLICATE);
  return gray;
}

std::vector<cv::Mat> build_pyramid(const cv::Mat& base, int levels, double scale) {
  std::vector<cv::Mat> pyramid{base};
  for (int l = 1; l < levels; ++l) {
    const cv::Mat& prev = pyramid.back();
    const int w = static_cast<int>(std::lround(base.cols * std::pow(scale, l)));
    const int h = static_cast<int>(std::lround(base.rows * std::pow(scale, l)));
    if (w < 8 || h < 8) break;
    cv::Mat smoothed;
    // Anti-alias in proportion to the decimation step.
    const double sigma = 0.5 * std::sqrt(1.0 / (scale * scale) - 1.0);
    cv::GaussianBlur(prev, smoothed, cv::Size(0, 0), sigma, sigma, cv::BORDER_REPLICATE);
    cv::Mat next;
    cv::resize(smoothed, next, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    pyramid.push_back(next);
  }
  return pyramid;
}

// Central differences with replicated borders.
void gradients(const cv::Mat& img, cv::Mat& gx, cv::Mat& gy) {
  gx.create(img.size(), CV_32F);
  gy.create(img.size(), CV_32F);
  const int h = img.rows, w = img.cols;
  for (int y = 0; y < h; ++y) {
    const float* row = img.ptr<float>(y);
    const float* up = img.ptr<float>(std::max(y - 1, 0));
    const float* down = img.ptr<float>(std::min(y + 1, h - 1));
    float* ox = gx.ptr<float>(y);
    float* oy = gy.ptr<float>(y);
    for (int x = 0; x < w; ++x) {
      ox[x] = 0.5f * (row[std::min(x + 1, w - 1)] - row[std::max(x - 1, 0)]);
      oy[x] = 0.5f * (down[x] - up[x]);
    }
  }
}

cv::Mat warp_by_flow(const cv::Mat& img, const cv::Mat& u, const cv::Mat& v) {
  cv::Mat map_x(img.size(), CV_32F), map_y(img.size(), CV_32F);
  for (int y = 0; y < img.rows; ++y) {
    const float* pu = u.ptr<float>(y);
    const float* pv = v.ptr<float>(y);
    float* mx = map_x.ptr<float>(y);
    float* my = map_y.ptr<float>(y);
    for (int x = 0; x < img.cols; ++x) {
      mx[x] = static_cast<float>(x) + pu[x];
      my[x] = static_cast<float>(y) + pv[x];
    }
  }
  cv::Mat out;
  cv::remap(img, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return out;
}

// Horn-Schunck iterations for the total flow (u, v) linearized around (u0, v0).
// Gauss-Seidel sweeps with the 8-neighbour Horn-Schunck averaging stencil.
void horn_schunck(const cv::Mat& ix, const cv::Mat& iy, const cv::Mat& it, const cv::Mat& u0,
                  const cv::Mat& v0, cv::Mat& u, cv::Mat& v, int iterations, double alpha) {
  const int h = ix.rows, w = ix.cols;
  const float lambda = static_cast<float>(alpha * alpha);
  auto clampx = [w](int x) { return std::clamp(x, 0, w - 1); };
  auto clampy = [h](int y) { return std::clamp(y, 0, h - 1); };
  for (int iter = 0; iter < iterations; ++iter) {
    for (int y = 0; y < h; ++y) {
      const int ym = clampy(y - 1), yp = clampy(y + 1);
      for (int x = 0; x < w; ++x) {
        const int xm = clampx(x - 1), xp = clampx(x + 1);
        auto avg = [&](const cv::Mat& f) {
          const float edge = f.at<float>(ym, x) + f.at<float>(yp, x) + f.at<float>(y, xm) + f.at<float>(y, xp);
          const float corner = f.at<float>(ym, xm) + f.at<float>(ym, xp) + f.at<float>(yp, xm) + f.at<float>(yp, xp);
          return edge / 6.0f + corner / 12.0f;
        };
        const float ubar = avg(u);
        const float vbar = avg(v);
        const float gx = ix.at<float>(y, x);
        const float gy = iy.at<float>(y, x);
        const float residual =
            gx * (ubar - u0.at<float>(y, x)) + gy * (vbar - v0.at<float>(y, x)) + it.at<float>(y, x);
        const float k = residual / (lambda + gx * gx + gy * gy);
        u.at<float>(y, x) = ubar - gx * k;
        v.at<float>(y, x) = vbar - gy * k;
      }
    }
  }
}

}  // namespace

void FlowEstimatorConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "flow_estimation: " + what); };
  if (pyramid_levels < 1) fail("pyramid_levels must be >= 1");
  if (!(scale_factor > 0.0 && scale_factor < 1.0)) fail("scale_factor must be in (0, 1)");
  if (iterations_per_level < 1) fail("iterations_per_level must be >= 1");
  if (!(smoothness_weight > 0.0)) fail("smoothness_weight must be > 0");
  if (warp_steps_per_level < 1) fail("warp_steps_per_level must be >= 1");
}

FlowField estimate_flow(const Image& a, const Image& b, const FlowEstimatorConfig& config) {
  config.validate();
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kDimensionMismatch, "estimate_flow inputs differ: " + std::to_string(a.height()) + "x" +
                                                   std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                                                   "x" + std::to_string(b.width()));
  }
  const auto pyr_a = build_pyramid(to_gray(a), config.pyramid_levels, config.scale_factor);
  const auto pyr_b = build_pyramid(to_gray(b), config.pyramid_levels, config.scale_factor);
  const int levels = static_cast<int>(pyr_a.size());

  cv::Mat u = cv::Mat::zeros(pyr_a.back().size(), CV_32F);
  cv::Mat v = cv::Mat::zeros(pyr_a.back().size(), CV_32F);
  for (int l = levels - 1; l >= 0; --l) {
    const cv::Mat& la = pyr_a[static_cast<std::size_t>(l)];
    const cv::Mat& lb = pyr_b[static_cast<std::size_t>(l)];
    if (u.size() != la.size()) {
      const double sx = static_cast<double>(la.cols) / u.cols;
      const double sy = static_cast<double>(la.rows) / u.rows;
      cv::resize(u, u, la.size(), 0, 0, cv::INTER_LINEAR);
      cv::resize(v, v, la.size(), 0, 0, cv::INTER_LINEAR);
      u *= sx;
      v *= sy;
    }
    cv::Mat ax, ay;
    gradients(la, ax, ay);
    for (int step = 0; step < config.warp_steps_per_level; ++step) {
      const cv::Mat warped = warp_by_flow(lb, u, v);
      cv::Mat bx, by;
      gradients(warped, bx, by);
      const cv::Mat ix = 0.5 * (ax + bx);
      const cv::Mat iy = 0.5 * (ay + by);
      const cv::Mat it = warped - la;
      const cv::Mat u0 = u.clone();
      const cv::Mat v0 = v.clone();
      horn_schunck(ix, iy, it, u0, v0, u, v, config.iterations_per_level, config.smoothness_weight);
      // Median filtering of the estimate removes outliers and keeps motion edges.
      cv::medianBlur(u, u, 5);
      cv::medianBlur(v, v, 5);
    }
  }

  FlowField flow(a.height(), a.width());
  u.copyTo(detail::view(flow.u));
  v.copyTo(detail::view(flow.v));
  return flow;
}

FlowField estimate_flow_external(const Image& a, const Image& b, const ExchangeOptions& exchange) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kDimensionMismatch, "estimate_flow_external inputs differ");
  if (exchange.root.empty()) throw Error(ErrorCode::kInvalidConfig, "external estimator needs a backend directory");

  std::string id = exchange.request_id;
  if (id.empty()) {
    const auto pa = a.data();
    const auto pb = b.data();
    id = "flow_" + exchange::hex_id(exchange::fnv1a(pb.data(), pb.size_bytes(),
                                                    exchange::fnv1a(pa.data(), pa.size_bytes())));
  }
  const fs::path dir = exchange.root / id;
  fs::remove_all(dir);
  fs::create_directories(dir);
  store_image(a, dir / "a.png");
  store_image(b, dir / "b.png");
  nlohmann::ordered_json request;
  request["height"] = a.height();
  request["width"] = a.width();
  exchange::write_json(dir / exchange::kRequestFile, request);

  exchange::wait_for_done(dir, exchange.timeout, exchange.poll_interval);
  const fs::path result = dir / "flow.flo";
  if (!fs::exists(result)) throw Error(ErrorCode::kBadResult, "backend finished without " + result.string());
  FlowField flow = read_flo(result);
  if (flow.height() != a.height() || flow.width() != a.width()) {
    throw Error(ErrorCode::kBadResult, "backend flow is " + std::to_string(flow.height()) + "x" +
                                           std::to_string(flow.width()) + ", expected " +
                                           std::to_string(a.height()) + "x" + std::to_string(a.width()));
  }
  if (!flow.is_valid()) throw Error(ErrorCode::kBadResult, "backend flow has invalid entries");
  return flow;
}

FlowBackend builtin_flow_backend(const FlowEstimatorConfig& config) {
  config.validate();
  return {"builtin-hs", [config](const Image& a, const Image& b) { return estimate_flow(a, b, config); }};
}

FlowBackend external_flow_backend(const ExchangeOptions& exchange) {
  return {"external", [exchange](const Image& a, const Image& b) { return estimate_flow_external(a, b, exchange); }};
}

}  // namespace flowsim
