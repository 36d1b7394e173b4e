#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "flowsim/error.hpp"
#include "flowsim/flow.hpp"
#include "flowsim/random.hpp"
#include "support.hpp"

using namespace flowsim;
using flowsim::testing::TempDir;

namespace {

// Hand-assembled little-endian .flo bytes.
std::string le32(const void* p) {
  unsigned char b[4];
  std::memcpy(b, p, 4);
  // The test host is little-endian; the assertion below documents that assumption.
  return std::string(reinterpret_cast<const char*>(b), 4);
}

std::string oracle_flo_1x1(float u, float v) {
  const float magic = 202021.25f;
  const std::int32_t w = 1, h = 1;
  return le32(&magic) + le32(&w) + le32(&h) + le32(&u) + le32(&v);
}

}  // namespace

TEST_CASE("1x1 .flo byte layout matches the hand-written oracle") {
  const std::uint32_t probe = 1;
  REQUIRE(*reinterpret_cast<const unsigned char*>(&probe) == 1);
  TempDir dir("flo");
  write_flo(FlowField(1, 1, 3.0f, -2.0f), dir / "a.flo");
  const std::string bytes = testing::read_bytes(dir / "a.flo");
  CHECK(bytes.size() == 20);
  CHECK(bytes == oracle_flo_1x1(3.0f, -2.0f));
  // magic bytes of 202021.25f are "PIEH"
  CHECK(bytes.substr(0, 4) == "PIEH");
}

TEST_CASE("zero 4x4 flow is 12 + 128 bytes with a zero payload") {
  TempDir dir("flo");
  write_flo(FlowField(4, 4), dir / "z.flo");
  const std::string bytes = testing::read_bytes(dir / "z.flo");
  REQUIRE(bytes.size() == 140);
  for (std::size_t i = 12; i < bytes.size(); ++i) CHECK(bytes[i] == '\0');
}

TEST_CASE("payload is row-major interleaved (u, v)") {
  TempDir dir("flo");
  FlowField f(2, 3);
  f.u(1, 2) = 7.5f;
  f.v(1, 2) = -1.25f;
  write_flo(f, dir / "f.flo");
  const std::string bytes = testing::read_bytes(dir / "f.flo");
  std::int32_t w, h;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  CHECK(w == 3);
  CHECK(h == 2);
  const std::size_t offset = 12 + (1 * 3 + 2) * 8;
  float u, v;
  std::memcpy(&u, bytes.data() + offset, 4);
  std::memcpy(&v, bytes.data() + offset + 4, 4);
  CHECK(u == 7.5f);
  CHECK(v == -1.25f);
}

TEST_CASE("write/read round trip is bit exact") {
  TempDir dir("flo");
  Rng rng(42);
  for (int i = 0; i < 20; ++i) {
    const int h = 1 + static_cast<int>(rng.below(40)), w = 1 + static_cast<int>(rng.below(40));
    FlowField f(h, w);
    for (float& x : f.u.data()) x = static_cast<float>(rng.uniform(-100, 100));
    for (float& x : f.v.data()) x = static_cast<float>(rng.uniform(-100, 100));
    write_flo(f, dir / "r.flo");
    const FlowField back = read_flo(dir / "r.flo");
    CHECK(back == f);
    CHECK(std::memcmp(back.u.data().data(), f.u.data().data(), f.u.size() * 4) == 0);
  }
}

TEST_CASE("read_flo diagnostics") {
  TempDir dir("flo");
  auto code_of = [&](const std::filesystem::path& p) {
    try {
      read_flo(p);
    } catch (const Error& e) {
      return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::kIoFailure;
  };
  CHECK(code_of(dir / "missing.flo") == ErrorCode::kMissingFile);

  std::string zero_magic = oracle_flo_1x1(1, 2);
  std::memset(zero_magic.data(), 0, 4);
  testing::write_bytes(dir / "bad.flo", zero_magic);
  CHECK(code_of(dir / "bad.flo") == ErrorCode::kBadMagic);

  testing::write_bytes(dir / "short.flo", oracle_flo_1x1(1, 2).substr(0, 16));
  CHECK(code_of(dir / "short.flo") == ErrorCode::kTruncatedFile);

  testing::write_bytes(dir / "tiny.flo", "PIE");
  CHECK(code_of(dir / "tiny.flo") == ErrorCode::kTruncatedFile);
}

TEST_CASE("write_flo rejects non-finite and sentinel values") {
  TempDir dir("flo");
  FlowField f(2, 2);
  f.u(0, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_flo(f, dir / "n.flo"), Error);
  CHECK_FALSE(std::filesystem::exists(dir / "n.flo"));
  FlowField g(2, 2);
  g.v(1, 1) = 2e9f;
  CHECK_FALSE(g.is_valid());
  CHECK_THROWS_AS(write_flo(g, dir / "s.flo"), Error);
}

TEST_CASE("colorize: zero flow is white") {
  const Image img = colorize(FlowField(3, 4));
  for (float v : img.data()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("colorize: pure +u flow sits at wheel position 0 (red)") {
  const Image img = colorize(FlowField(2, 3, 2.0f, 0.0f));
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      CHECK(img.at(y, x, 0) == doctest::Approx(1.0f));
      CHECK(img.at(y, x, 1) == doctest::Approx(0.0f));
      CHECK(img.at(y, x, 2) == doctest::Approx(0.0f));
    }
}

TEST_CASE("colorize: self-normalized output ignores global scale") {
  FlowField f(4, 4);
  Rng rng(3);
  for (float& x : f.u.data()) x = static_cast<float>(rng.uniform(-2, 2));
  for (float& x : f.v.data()) x = static_cast<float>(rng.uniform(-2, 2));
  FlowField g = f;
  for (float& x : g.u.data()) x *= 4.0f;
  for (float& x : g.v.data()) x *= 4.0f;
  const Image a = colorize(f), b = colorize(g);
  for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-5));
}

TEST_CASE("colorize: fixed normalization gives comparable colors") {
  FlowField small(1, 2), large(1, 2);
  small.u(0, 0) = 1.0f;
  large.u(0, 0) = 1.0f;
  large.u(0, 1) = 5.0f;
  const Image a = colorize(small, 5.0f), b = colorize(large, 5.0f);
  for (int c = 0; c < 3; ++c) CHECK(a.at(0, 0, c) == doctest::Approx(b.at(0, 0, c)));
  // Magnitudes beyond the normalization are clamped, not wrapped.
  FlowField huge(1, 1, 50.0f, 0.0f);
  const Image h = colorize(huge, 5.0f);
  CHECK(h.at(0, 0, 0) == doctest::Approx(1.0f));
  CHECK(h.at(0, 0, 1) == doctest::Approx(0.0f));
}

TEST_CASE("colorize: hue depends only on direction") {
  FlowField f(1, 2);
  f.u(0, 0) = 1.0f;
  f.v(0, 0) = 1.0f;
  f.u(0, 1) = 3.0f;
  f.v(0, 1) = 3.0f;
  const Image img = colorize(f);
  // Same direction: the less saturated pixel is a blend towards white of the other.
  const float s = 1.0f / 3.0f;
  for (int c = 0; c < 3; ++c) CHECK(img.at(0, 0, c) == doctest::Approx(1.0f - s * (1.0f - img.at(0, 1, c))));
}

TEST_CASE("flow_stats examples") {
  const FlowStats zero = flow_stats(FlowField(5, 5));
  CHECK(zero.mean_mag == 0.0);
  CHECK(zero.median_mag == 0.0);
  CHECK(zero.max_mag == 0.0);

  const FlowStats c = flow_stats(FlowField(3, 3, 3.0f, 4.0f));
  CHECK(c.mean_mag == doctest::Approx(5.0));
  CHECK(c.median_mag == doctest::Approx(5.0));
  CHECK(c.max_mag == doctest::Approx(5.0));

  FlowField one(10, 10);
  one.u(4, 7) = 1.0f;
  const FlowStats s = flow_stats(one);
  CHECK(s.max_mag == doctest::Approx(1.0));
  CHECK(s.mean_mag == doctest::Approx(0.01));
  CHECK(s.median_mag == 0.0);
}

TEST_CASE("flow_stats max scales linearly") {
  FlowField f(6, 6);
  Rng rng(9);
  for (float& x : f.u.data()) x = static_cast<float>(rng.uniform(-3, 3));
  for (float& x : f.v.data()) x = static_cast<float>(rng.uniform(-3, 3));
  FlowField g = f;
  for (float& x : g.u.data()) x *= 2.5f;
  for (float& x : g.v.data()) x *= 2.5f;
  CHECK(flow_stats(g).max_mag == doctest::Approx(2.5 * flow_stats(f).max_mag).epsilon(1e-5));
}

TEST_CASE("hflip negates u and mirrors; resize rescales displacements") {
  FlowField f(1, 3);
  f.u(0, 0) = 2.0f;
  f.v(0, 0) = 1.0f;
  const FlowField m = hflip(f);
  CHECK(m.u(0, 2) == -2.0f);
  CHECK(m.v(0, 2) == 1.0f);
  CHECK(hflip(m) == f);

  const FlowField r = resize(FlowField(8, 8, 2.0f, -1.0f), 16, 4);
  CHECK(r.height() == 16);
  CHECK(r.width() == 4);
  CHECK(r.u(5, 1) == doctest::Approx(1.0f));
  CHECK(r.v(5, 1) == doctest::Approx(-2.0f));

  const FlowField n = negate(FlowField(2, 2, 1.0f, -3.0f));
  CHECK(n.u(1, 1) == -1.0f);
  CHECK(n.v(1, 1) == 3.0f);
}
