#pragma once

#include <functional>
#include <string>

#include "flowsim/flow.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/image.hpp"

namespace flowsim {

/// Coarse-to-fine variational estimator settings.
struct FlowEstimatorConfig {
  int pyramid_levels = 4;
  double scale_factor = 0.5;
  int iterations_per_level = 50;
  double smoothness_weight = 0.1;
  int warp_steps_per_level = 2;

  void validate() const;
};

/// Forward flow a -> b on a's grid: grayscale pyramids, Horn-Schunck updates
/// around the current estimate, re-warping of b, and upsampling between levels.
FlowField estimate_flow(const Image& a, const Image& b, const FlowEstimatorConfig& config = {});

/// Delegates estimation to an out-of-process model (e.g. a learned estimator)
/// through `<root>/<id>/{a.png,b.png,request.json}` -> `flow.flo` + `DONE`.
FlowField estimate_flow_external(const Image& a, const Image& b, const ExchangeOptions& exchange);

/// A named flow callable; the id is recorded with every pair it produces.
struct FlowBackend {
  std::string id;
  std::function<FlowField(const Image&, const Image&)> estimate;
};

FlowBackend builtin_flow_backend(const FlowEstimatorConfig& config = {});
FlowBackend external_flow_backend(const ExchangeOptions& exchange);

}  // namespace flowsim
