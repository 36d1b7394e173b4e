#include "flowsim/exchange.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <thread>
#include <vector>

#include "flowsim/error.hpp"
#include "flowsim/flow.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;

namespace flowsim::exchange {

void wait_for_done(const fs::path& dir, std::chrono::milliseconds timeout,
                   std::chrono::milliseconds poll_interval) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const fs::path marker = dir / kDoneMarker;
  while (!fs::exists(marker)) {
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::kBackendTimeout,
                  "no completion marker in " + dir.string() + " after " +
                      std::to_string(timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(poll_interval);
  }
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string hex_id(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write-then-rename so a polling backend never sees a half-written request.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::kIoFailure, "short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
}

int serve_pending(const fs::path& root, const Handler& handler) {
  if (!fs::is_directory(root)) return 0;
  std::vector<fs::path> pending;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const fs::path dir = entry.path();
    if (fs::exists(dir / kRequestFile) && !fs::exists(dir / kDoneMarker)) pending.push_back(dir);
  }
  std::sort(pending.begin(), pending.end());
  for (const auto& dir : pending) {
    const RequestKind kind = fs::exists(dir / "source.png") ? RequestKind::kVideo : RequestKind::kFlow;
    handler(dir, kind);
  }
  return static_cast<int>(pending.size());
}

void handle_stub_request(const fs::path& dir, RequestKind kind, StubMode mode) {
  const auto request = read_json(dir / kRequestFile);
  if (kind == RequestKind::kVideo) {
    const Image source = load_image(dir / "source.png");
    int frames = request.at("T").get<int>();
    if (mode == StubMode::kDropLastFrame) frames -= 1;
    for (int t = 1; t <= frames; ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03d.png", t);
      store_image(source, dir / name);
    }
  } else {
    const Image a = load_image(dir / "a.png");
    int height = a.height();
    int width = a.width();
    if (mode == StubMode::kHalfResolution) {
      height = std::max(1, height / 2);
      width = std::max(1, width / 2);
    }
    write_flo(FlowField(height, width), dir / "flow.flo");
  }
  std::ofstream(dir / kDoneMarker).put('\n');
}

void run_stub_backend(const fs::path& root, StubMode video_mode, StubMode flow_mode,
                      const std::atomic<bool>& stop, std::chrono::milliseconds poll_interval) {
  const Handler handler = [&](const fs::path& dir, RequestKind kind) {
    handle_stub_request(dir, kind, kind == RequestKind::kVideo ? video_mode : flow_mode);
  };
  while (!stop.load()) {
    serve_pending(root, handler);
    std::this_thread::sleep_for(poll_interval);
  }
}

}  // namespace flowsim::exchange
