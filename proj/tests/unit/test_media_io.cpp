#include <cmath>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "flowsim/error.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/media_io.hpp"
#include "support.hpp"

using namespace flowsim;
using flowsim::testing::TempDir;

namespace {

void write_gray_png(const std::filesystem::path& path, int h, int w, unsigned char value) {
  cv::Mat m(h, w, CV_8UC1, cv::Scalar(value));
  REQUIRE(cv::imwrite(path.string(), m));
}

void write_rgb_png(const std::filesystem::path& path, int h, int w, unsigned char value) {
  cv::Mat m(h, w, CV_8UC3, cv::Scalar(value, value, value));
  REQUIRE(cv::imwrite(path.string(), m));
}

}  // namespace

TEST_CASE("load_image scales 8-bit values into [0,1]") {
  TempDir dir("media");
  write_rgb_png(dir / "black.png", 2, 2, 0);
  write_rgb_png(dir / "white.png", 2, 2, 255);
  write_rgb_png(dir / "mid.png", 2, 2, 128);

  const Image black = load_image(dir / "black.png");
  CHECK(black.height() == 2);
  CHECK(black.width() == 2);
  for (float v : black.data()) CHECK(v == 0.0f);
  const Image white = load_image(dir / "white.png");
  for (float v : white.data()) CHECK(v == 1.0f);
  const Image mid = load_image(dir / "mid.png");
  for (float v : mid.data()) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-6));
}

TEST_CASE("load_image keeps channel order") {
  TempDir dir("media");
  cv::Mat m(3, 4, CV_8UC3, cv::Scalar(10, 20, 30));  // OpenCV stores BGR
  REQUIRE(cv::imwrite((dir / "c.png").string(), m));
  const Image img = load_image(dir / "c.png");
  CHECK(img.at(1, 2, 0) == doctest::Approx(30 / 255.0));
  CHECK(img.at(1, 2, 1) == doctest::Approx(20 / 255.0));
  CHECK(img.at(1, 2, 2) == doctest::Approx(10 / 255.0));
}

TEST_CASE("load_image errors") {
  TempDir dir("media");
  CHECK_THROWS_AS(load_image(dir / "nope.png"), Error);
  try {
    load_image(dir / "nope.png");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingFile);
  }
  testing::write_bytes(dir / "junk.png", "not an image at all");
  try {
    load_image(dir / "junk.png");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUndecodableImage);
  }
}

TEST_CASE("load_mask binarizes at the threshold") {
  TempDir dir("media");
  write_gray_png(dir / "full.png", 4, 4, 255);
  write_gray_png(dir / "empty.png", 4, 4, 0);
  write_gray_png(dir / "gray.png", 4, 4, 100);

  const SaliencyMap full = load_mask(dir / "full.png");
  CHECK(full.is_binary);
  for (float v : full.values.data()) CHECK(v == 1.0f);
  const SaliencyMap empty = load_mask(dir / "empty.png");
  for (float v : empty.values.data()) CHECK(v == 0.0f);
  const SaliencyMap gray = load_mask(dir / "gray.png", 0.5f);
  for (float v : gray.values.data()) CHECK(v == 0.0f);
  const SaliencyMap soft = load_mask(dir / "gray.png", std::nullopt);
  CHECK_FALSE(soft.is_binary);
  CHECK(soft.values(0, 0) == doctest::Approx(100.0 / 255.0));
}

TEST_CASE("load_mask collapses RGB with luminance weights") {
  TempDir dir("media");
  cv::Mat m(2, 2, CV_8UC3, cv::Scalar(0, 0, 255));  // pure red
  REQUIRE(cv::imwrite((dir / "red.png").string(), m));
  const SaliencyMap soft = load_mask(dir / "red.png", std::nullopt);
  CHECK(soft.values(0, 0) == doctest::Approx(0.299).epsilon(1e-3));
  // 0.299 < 0.5 -> background
  CHECK(load_mask(dir / "red.png").values(0, 0) == 0.0f);
}

TEST_CASE("binarized masks hold at most two values") {
  const Image tex = make_textured_image(32, 32, 5);
  SaliencyMap m{tex.luminance(), false};
  m.binarize(0.5f);
  std::set<float> values(m.values.data().begin(), m.values.data().end());
  CHECK(values.size() <= 2);
  for (float v : values) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("store/load round trip is lossless for 8-bit content") {
  TempDir dir("media");
  Image img(5, 7);
  int k = 0;
  for (float& v : img.data()) v = static_cast<float>((k++ * 37) % 256) / 255.0f;
  store_image(img, dir / "a.png");
  const Image back = load_image(dir / "a.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(back.data()[i] == img.data()[i]);

  SaliencyMap mask{Plane(6, 3), true};
  mask.values(2, 1) = 1.0f;
  store_mask(mask, dir / "m.png");
  CHECK(load_mask(dir / "m.png").values == mask.values);
}

TEST_CASE("resize identity and constancy") {
  const Image tex = make_textured_image(16, 12, 3);
  CHECK(resize(tex, 16, 12, ResizeMode::kBilinear) == tex);
  CHECK(resize(tex, 16, 12, ResizeMode::kNearest) == tex);

  const Image flat(9, 9, 0.25f);
  for (auto mode : {ResizeMode::kBilinear, ResizeMode::kNearest}) {
    const Image r = resize(flat, 20, 5, mode);
    CHECK(r.height() == 20);
    CHECK(r.width() == 5);
    for (float v : r.data()) CHECK(v == doctest::Approx(0.25f));
  }
}

TEST_CASE("bilinear upsampling of a checkerboard") {
  Plane checker(2, 2);
  checker(0, 0) = 0.0f;
  checker(0, 1) = 1.0f;
  checker(1, 0) = 1.0f;
  checker(1, 1) = 0.0f;
  const Plane up = resize(checker, 4, 4, ResizeMode::kBilinear);
  CHECK(up(0, 0) == doctest::Approx(0.0f));
  CHECK(up(0, 3) == doctest::Approx(1.0f));
  CHECK(up(3, 0) == doctest::Approx(1.0f));
  CHECK(up(3, 3) == doctest::Approx(0.0f));
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 2; ++x) {
      CHECK(up(y, x) > 0.0f);
      CHECK(up(y, x) < 1.0f);
    }
  // Half-pixel centers: (1,1) mixes the four inputs with weights 9/16, 3/16, 3/16, 1/16.
  CHECK(up(1, 1) == doctest::Approx(6.0 / 16.0));
}

TEST_CASE("resize down after up keeps the mean of smooth images") {
  const Image tex = make_textured_image(40, 48, 11);
  const Image back = resize(resize(tex, 80, 96), 40, 48);
  double a = 0, b = 0;
  for (float v : tex.data()) a += v;
  for (float v : back.data()) b += v;
  CHECK(std::fabs(a - b) / tex.data().size() < 1e-2);
}

TEST_CASE("resize rejects empty targets and masks stay binary") {
  const Image img(4, 4, 0.5f);
  CHECK_THROWS_AS(resize(img, 0, 4), Error);
  SaliencyMap m{Plane(4, 4), true};
  m.values(1, 1) = 1.0f;
  const SaliencyMap r = resize(m, 9, 7);
  for (float v : r.values.data()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("hflip mirrors columns") {
  Image img(1, 3);
  img.at(0, 0, 0) = 0.1f;
  img.at(0, 2, 0) = 0.9f;
  const Image f = hflip(img);
  CHECK(f.at(0, 0, 0) == 0.9f);
  CHECK(f.at(0, 2, 0) == 0.1f);
  CHECK(hflip(f) == img);
}

TEST_CASE("planes reject non-positive dimensions") {
  CHECK_THROWS_AS(Plane(0, 3), Error);
  CHECK_THROWS_AS(Image(3, -1), Error);
}
