#pragma once

// File-based exchange with out-of-process model backends. A request lives in
// `<root>/<request_id>/`; the backend signals completion by creating `DONE`.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"

namespace flowsim::exchange {

inline constexpr const char* kRequestFile = "request.json";
inline constexpr const char* kDoneMarker = "DONE";

/// Blocks until `<dir>/DONE` exists. Throws Error(kBackendTimeout) otherwise.
void wait_for_done(const std::filesystem::path& dir, std::chrono::milliseconds timeout,
                   std::chrono::milliseconds poll_interval);

/// FNV-1a over arbitrary bytes; used for content-derived request ids.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ull);

std::string hex_id(std::uint64_t value);

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

/// Kind of request found in an exchange directory.
enum class RequestKind { kVideo, kFlow };

/// Serves every pending request under `root` once (requests without DONE).
/// Returns the number of requests handled.
using Handler = std::function<void(const std::filesystem::path& request_dir, RequestKind kind)>;
int serve_pending(const std::filesystem::path& root, const Handler& handler);

/// Reference backends for offline runs and tests.
enum class StubMode {
  kCopySource,     // video: writes the source T times
  kDropLastFrame,  // video: writes only T-1 frames, then DONE
  kZeroFlow,       // flow: writes an all-zero flow at the input resolution
  kHalfResolution, // flow: writes a flow at half the input resolution
};

void handle_stub_request(const std::filesystem::path& request_dir, RequestKind kind, StubMode mode);

/// Polls `root` until `stop` becomes true, answering requests with the stub.
void run_stub_backend(const std::filesystem::path& root, StubMode video_mode, StubMode flow_mode,
                      const std::atomic<bool>& stop,
                      std::chrono::milliseconds poll_interval = std::chrono::milliseconds(10));

}  // namespace flowsim::exchange
