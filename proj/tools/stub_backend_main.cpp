// Answers exchange-directory requests with canned results so the external
// generator and flow paths can run without a real model.

#include <atomic>
#include <csignal>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "flowsim/exchange.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  using flowsim::exchange::StubMode;
  CLI::App app{"Stub model backend for the exchange directory", "flowsim_stub_backend"};
  std::string root;
  std::string video = "copy";
  std::string flow = "zero";
  bool once = false;
  app.add_option("root", root, "Exchange directory")->required();
  app.add_option("--video", video, "copy|drop-last")->capture_default_str();
  app.add_option("--flow", flow, "zero|half")->capture_default_str();
  app.add_flag("--once", once, "Serve pending requests once and exit");
  CLI11_PARSE(app, argc, argv);

  if (video != "copy" && video != "drop-last") {
    std::cerr << "error: unknown --video mode " << video << '\n';
    return 2;
  }
  if (flow != "zero" && flow != "half") {
    std::cerr << "error: unknown --flow mode " << flow << '\n';
    return 2;
  }
  const StubMode video_mode = video == "copy" ? StubMode::kCopySource : StubMode::kDropLastFrame;
  const StubMode flow_mode = flow == "zero" ? StubMode::kZeroFlow : StubMode::kHalfResolution;
  try {
    if (once) {
      const int n = flowsim::exchange::serve_pending(root, [&](const auto& dir, auto kind) {
        flowsim::exchange::handle_stub_request(dir, kind,
                                               kind == flowsim::exchange::RequestKind::kVideo ? video_mode : flow_mode);
      });
      std::cout << "served " << n << " requests\n";
      return 0;
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    flowsim::exchange::run_stub_backend(root, video_mode, flow_mode, g_stop);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
