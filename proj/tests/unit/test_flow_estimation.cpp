#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "flowsim/error.hpp"
#include "flowsim/exchange.hpp"
#include "flowsim/flow_estimation.hpp"
#include "flowsim/generators.hpp"
#include "support.hpp"

using namespace flowsim;
using flowsim::testing::TempDir;

namespace {

// Integer shift with edge replication: b(x, y) = a(x - dx, y - dy).
Image shifted(const Image& a, int dx, int dy) {
  Image b(a.height(), a.width());
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < 3; ++c)
        b.at(y, x, c) = a.at(std::clamp(y - dy, 0, a.height() - 1), std::clamp(x - dx, 0, a.width() - 1), c);
  return b;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

struct Median2 {
  double u, v;
};

Median2 median_flow(const FlowField& f, int margin) {
  std::vector<double> us, vs;
  for (int y = margin; y < f.height() - margin; ++y)
    for (int x = margin; x < f.width() - margin; ++x) {
      us.push_back(f.u(y, x));
      vs.push_back(f.v(y, x));
    }
  return {median_of(us), median_of(vs)};
}

}  // namespace

TEST_CASE("estimator config defaults and validation") {
  const FlowEstimatorConfig c;
  CHECK(c.pyramid_levels == 4);
  CHECK(c.scale_factor == 0.5);
  CHECK(c.iterations_per_level == 50);
  CHECK(c.smoothness_weight == 0.1);
  CHECK(c.warp_steps_per_level == 2);
  FlowEstimatorConfig bad;
  bad.scale_factor = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = FlowEstimatorConfig{};
  bad.pyramid_levels = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = FlowEstimatorConfig{};
  bad.smoothness_weight = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("identical frames give (near) zero flow") {
  for (std::uint64_t seed : {1u, 2u}) {
    const Image a = make_textured_image(96, 80, seed);
    const FlowField f = estimate_flow(a, a);
    CHECK(f.height() == 96);
    CHECK(f.width() == 80);
    const auto s = flow_stats(f);
    CHECK(s.mean_mag <= 0.05);
    CHECK(s.max_mag <= 0.2);
  }
}

TEST_CASE("flat images return a near-zero field") {
  const Image a(32, 32, 0.4f), b(32, 32, 0.6f);
  CHECK(flow_stats(estimate_flow(a, b)).max_mag < 0.2);
}

TEST_CASE("integer shifts are recovered") {
  const Image a = make_textured_image(128, 128, 7);
  for (auto [dx, dy] : {std::pair{3, 0}, std::pair{-5, 6}, std::pair{8, 0}}) {
    const FlowField f = estimate_flow(a, shifted(a, dx, dy));
    const Median2 m = median_flow(f, 10);
    CAPTURE(dx);
    CAPTURE(dy);
    CHECK(std::fabs(m.u - dx) <= 0.5);
    CHECK(std::fabs(m.v - dy) <= 0.5);
  }
}

TEST_CASE("synthetic scene fg=(2,0) over a static background") {
  const auto scene = testing::make_scene(128, 128, 21);
  const auto seq = generate_synthetic_scene(scene.mask, scene.source, {2, 0}, {0, 0}, 1);
  const FlowField est = estimate_flow(scene.source, seq.sequence.frames[0]);
  const auto epe = testing::median_epe(est, seq.flows[0], scene.mask, 3.0);
  CHECK(epe.inside <= 0.7);
  CHECK(epe.outside <= 0.5);
}

TEST_CASE("dimension mismatch") {
  try {
    estimate_flow(Image(16, 16), Image(16, 17));
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

TEST_CASE("estimation is deterministic") {
  const Image a = make_textured_image(64, 64, 3);
  const Image b = shifted(a, 2, 1);
  CHECK(estimate_flow(a, b) == estimate_flow(a, b));
}

namespace {

struct StubThread {
  std::atomic<bool> stop{false};
  std::thread thread;
  StubThread(const std::filesystem::path& root, exchange::StubMode flow_mode) {
    thread = std::thread([this, root, flow_mode] {
      exchange::run_stub_backend(root, exchange::StubMode::kCopySource, flow_mode, stop);
    });
  }
  ~StubThread() {
    stop = true;
    thread.join();
  }
};

}  // namespace

TEST_CASE("external estimator: zero-flow stub") {
  TempDir dir("flowext");
  StubThread stub(dir.path(), exchange::StubMode::kZeroFlow);
  ExchangeOptions eo;
  eo.root = dir.path();
  eo.timeout = std::chrono::seconds(20);
  const Image a = make_textured_image(20, 24, 1);
  const FlowField f = estimate_flow_external(a, a, eo);
  CHECK(f.height() == 20);
  CHECK(f.width() == 24);
  CHECK(flow_stats(f).max_mag == 0.0);

  const FlowBackend backend = external_flow_backend(eo);
  CHECK(backend.id == "external");
  CHECK(flow_stats(backend.estimate(a, a)).max_mag == 0.0);
}

TEST_CASE("external estimator: half-resolution result is rejected") {
  TempDir dir("flowext");
  StubThread stub(dir.path(), exchange::StubMode::kHalfResolution);
  ExchangeOptions eo;
  eo.root = dir.path();
  eo.timeout = std::chrono::seconds(20);
  const Image a = make_textured_image(20, 24, 1);
  try {
    estimate_flow_external(a, a, eo);
    FAIL("expected BadResult");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBadResult);
  }
}

TEST_CASE("external estimator: echoed .flo passes through bit-exactly") {
  TempDir dir("flowext");
  FlowField precomputed(12, 10);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 10; ++x) {
      precomputed.u(y, x) = 0.1f * x - 0.37f * y;
      precomputed.v(y, x) = 1.0f / (1 + x + y);
    }
  std::atomic<bool> stop{false};
  std::thread echo([&] {
    while (!stop) {
      exchange::serve_pending(dir.path(), [&](const std::filesystem::path& req, exchange::RequestKind kind) {
        REQUIRE(kind == exchange::RequestKind::kFlow);
        const auto request = exchange::read_json(req / exchange::kRequestFile);
        CHECK(request.at("height") == 12);
        CHECK(request.at("width") == 10);
        write_flo(precomputed, req / "flow.flo");
        testing::write_bytes(req / exchange::kDoneMarker, "");
      });
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  ExchangeOptions eo;
  eo.root = dir.path();
  eo.timeout = std::chrono::seconds(20);
  const Image a = make_textured_image(12, 10, 2);
  const FlowField f = estimate_flow_external(a, a, eo);
  stop = true;
  echo.join();
  CHECK(f == precomputed);
}

TEST_CASE("external estimator: timeout without a backend") {
  TempDir dir("flowext");
  ExchangeOptions eo;
  eo.root = dir.path();
  eo.timeout = std::chrono::milliseconds(80);
  const Image a = make_textured_image(8, 8, 2);
  try {
    estimate_flow_external(a, a, eo);
    FAIL("expected BackendTimeout");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBackendTimeout);
  }
}

TEST_CASE("builtin backend id") {
  CHECK(builtin_flow_backend().id == "builtin-hs");
}
