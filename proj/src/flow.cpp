#include "flowsim/flow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <vector>

#include "flowsim/error.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;

namespace flowsim {

namespace {

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32_le(std::vector<unsigned char>& out, float value) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(value));
}

float get_f32_le(const unsigned char* p) { return std::bit_cast<float>(get_u32_le(p)); }

// Middlebury color wheel: 55 hues built from six ramps.
struct ColorWheel {
  static constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
  static constexpr int kSize = kRY + kYG + kGC + kCB + kBM + kMR;
  std::array<std::array<float, 3>, kSize> rgb{};

  ColorWheel() {
    int k = 0;
    auto ramp = [](int i, int n) { return std::floor(255.0f * i / n); };
    for (int i = 0; i < kRY; ++i) rgb[k++] = {255, ramp(i, kRY), 0};
    for (int i = 0; i < kYG; ++i) rgb[k++] = {255 - ramp(i, kYG), 255, 0};
    for (int i = 0; i < kGC; ++i) rgb[k++] = {0, 255, ramp(i, kGC)};
    for (int i = 0; i < kCB; ++i) rgb[k++] = {0, 255 - ramp(i, kCB), 255};
    for (int i = 0; i < kBM; ++i) rgb[k++] = {ramp(i, kBM), 0, 255};
    for (int i = 0; i < kMR; ++i) rgb[k++] = {255, 0, 255 - ramp(i, kMR)};
  }
};

const ColorWheel& wheel() {
  static const ColorWheel instance;
  return instance;
}

void require_valid(const FlowField& flow, const char* what) {
  if (!flow.is_valid()) {
    throw Error(ErrorCode::kInvalidFlow, std::string(what) + ": flow has non-finite or sentinel entries");
  }
}

}  // namespace

bool FlowField::is_valid() const noexcept {
  if (!u.same_shape(v)) return false;
  auto ok = [](float x) { return std::isfinite(x) && std::fabs(x) <= kUnknownFlowThreshold; };
  return std::all_of(u.data().begin(), u.data().end(), ok) &&
         std::all_of(v.data().begin(), v.data().end(), ok);
}

FlowField read_flo(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4) throw Error(ErrorCode::kTruncatedFile, path.string() + ": no header");
  const float magic = get_f32_le(bytes.data());
  if (magic != kFloMagic) throw Error(ErrorCode::kBadMagic, path.string());
  if (bytes.size() < 12) throw Error(ErrorCode::kTruncatedFile, path.string() + ": short header");

  const auto width = static_cast<std::int32_t>(get_u32_le(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(get_u32_le(bytes.data() + 8));
  if (width < 1 || height < 1 || width > (1 << 16) || height > (1 << 16)) {
    throw Error(ErrorCode::kBadMagic, path.string() + ": implausible dimensions " +
                                          std::to_string(width) + "x" + std::to_string(height));
  }
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < 12 + count * 8) {
    throw Error(ErrorCode::kTruncatedFile, path.string() + ": expected " + std::to_string(12 + count * 8) +
                                               " bytes, found " + std::to_string(bytes.size()));
  }

  FlowField flow(height, width);
  const unsigned char* p = bytes.data() + 12;
  auto u = flow.u.data();
  auto v = flow.v.data();
  for (std::size_t i = 0; i < count; ++i, p += 8) {
    u[i] = get_f32_le(p);
    v[i] = get_f32_le(p + 4);
  }
  return flow;
}

void write_flo(const FlowField& flow, const fs::path& path) {
  require_valid(flow, "write_flo");
  const std::size_t count = flow.u.size();
  std::vector<unsigned char> bytes;
  bytes.reserve(12 + count * 8);
  put_f32_le(bytes, kFloMagic);
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.width()));
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.height()));
  auto u = flow.u.data();
  auto v = flow.v.data();
  for (std::size_t i = 0; i < count; ++i) {
    put_f32_le(bytes, u[i]);
    put_f32_le(bytes, v[i]);
  }

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "short write " + path.string());
}

Image colorize(const FlowField& flow, std::optional<float> max_magnitude) {
  require_valid(flow, "colorize");
  float norm = max_magnitude.value_or(static_cast<float>(flow_stats(flow).max_mag));
  if (!(norm > 0.0f)) norm = 1.0f;  // zero field: every pixel is at the wheel origin

  const auto& cw = wheel().rgb;
  constexpr int n = ColorWheel::kSize;
  Image out(flow.height(), flow.width());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      const float fx = flow.u(y, x) / norm;
      const float fy = flow.v(y, x) / norm;
      const float rad = std::min(1.0f, std::sqrt(fx * fx + fy * fy));
      const float a = std::atan2(-fy, -fx) / std::numbers::pi_v<float>;
      const float fk = (a + 1.0f) / 2.0f * static_cast<float>(n - 1);
      const int k0 = std::clamp(static_cast<int>(fk), 0, n - 1);
      const int k1 = (k0 + 1) % n;
      const float f = fk - static_cast<float>(k0);
      for (int c = 0; c < 3; ++c) {
        const float col = ((1.0f - f) * cw[k0][c] + f * cw[k1][c]) / 255.0f;
        out.at(y, x, c) = 1.0f - rad * (1.0f - col);
      }
    }
  }
  return out;
}

FlowStats flow_stats(const FlowField& flow) {
  require_valid(flow, "flow_stats");
  const std::size_t count = flow.u.size();
  if (count == 0) return {};
  std::vector<double> mags(count);
  auto u = flow.u.data();
  auto v = flow.v.data();
  double sum = 0.0;
  double max = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double m = std::hypot(static_cast<double>(u[i]), static_cast<double>(v[i]));
    mags[i] = m;
    sum += m;
    max = std::max(max, m);
  }
  const std::size_t mid = count / 2;
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid), mags.end());
  double median = mags[mid];
  if (count % 2 == 0) {
    const double lower = *std::max_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return {sum / static_cast<double>(count), median, max};
}

FlowField hflip(const FlowField& flow) {
  FlowField out;
  out.u = hflip(flow.u);
  out.v = hflip(flow.v);
  for (float& x : out.u.data()) x = -x;
  return out;
}

FlowField resize(const FlowField& flow, int height, int width) {
  if (flow.height() == height && flow.width() == width) return flow;
  const float sx = static_cast<float>(width) / static_cast<float>(flow.width());
  const float sy = static_cast<float>(height) / static_cast<float>(flow.height());
  FlowField out;
  out.u = resize(flow.u, height, width, ResizeMode::kBilinear);
  out.v = resize(flow.v, height, width, ResizeMode::kBilinear);
  for (float& x : out.u.data()) x *= sx;
  for (float& x : out.v.data()) x *= sy;
  return out;
}

FlowField negate(const FlowField& flow) {
  FlowField out = flow;
  for (float& x : out.u.data()) x = -x;
  for (float& x : out.v.data()) x = -x;
  return out;
}

}  // namespace flowsim
