#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowsim/flow_estimation.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/metrics.hpp"
#include "flowsim/segnet.hpp"
#include "flowsim/training.hpp"
#include "json.hpp"

namespace flowsim::cli {

/// Per-source velocity ranges for the synthetic scene generator (pixels/frame).
struct SyntheticConfig {
  double max_foreground_speed = 4.0;
  double min_foreground_speed = 1.0;
  double max_background_speed = 1.0;
};

struct PairFactoryConfig {
  double skip_duplicate_below = 0.0;
  /// 0 keeps all T frames of a source; K > 0 keeps K evenly spaced frames
  /// ending with frame T.
  int pairs_per_source = 0;
};

struct ExchangeConfig {
  std::string dir;  // exchange root for external backends
  double timeout_seconds = 600.0;
};

/// Every module section plus global settings. Precedence: flags > config file > defaults.
struct PipelineConfig {
  GenerationConfig generation;
  bool sample_warp = true;  // false: use `warp` as given for every source
  WarpParams warp;
  SyntheticConfig synthetic;
  FlowEstimatorConfig flow_estimation;
  PairFactoryConfig pair_factory;
  net::NetworkConfig segnet;
  train::TrainConfig training;
  metrics::FOptions metrics;
  ExchangeConfig exchange;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
  /// Worker count is omitted: it never changes outputs.
  nlohmann::ordered_json to_json() const;
  /// Overlays the keys present in `j` onto `base`.
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
  static PipelineConfig load(const std::string& path);
};

/// Entry point shared by the executable and the tests. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Calls job(0..count-1) on up to `workers` threads. Jobs write to their own slot;
/// the first exception is rethrown after all threads finish.
void parallel_for(int count, int workers, const std::function<void(int)>& job);

}  // namespace flowsim::cli
