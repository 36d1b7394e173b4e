#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "flowsim/pair_factory.hpp"
#include "flowsim/random.hpp"
#include "flowsim/segnet.hpp"
#include "json.hpp"

namespace flowsim::train {

/// Probability clamp used by the cross-entropy loss.
inline constexpr double kLossEpsilon = 1e-7;

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;
  int input_height = 512;
  int input_width = 512;
  int max_steps = 100000;
  std::map<std::string, double> mixture;  // source name -> weight
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  bool hflip = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Small settings for CPU runs: 128x128, batch 2, LR 1e-3.
  static TrainConfig desk();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

/// Draws (source, entry) pairs: a source with probability proportional to its
/// weight, then an entry uniformly within it.
class MixtureSampler {
 public:
  struct Draw {
    std::size_t source;
    std::size_t entry;
  };

  /// `sizes[name]` is the number of entries in each source. Throws
  /// Error(kEmptySource) when a weighted source has no entries.
  MixtureSampler(const std::map<std::string, std::size_t>& sizes, const std::map<std::string, double>& weights,
                 std::uint64_t seed);

  Draw draw();
  std::vector<Draw> sample(int count);

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<std::string> names_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  std::vector<std::size_t> sizes_;
  Rng rng_;
};

/// Named in-memory pools of training pairs.
using SourcePools = std::map<std::string, std::vector<TrainingPair>>;

std::vector<TrainingPair> sample_batch(MixtureSampler& sampler, const SourcePools& pools, int batch_size);

/// Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].
double loss(const net::Prediction& pred, const SaliencyMap& mask);

/// Tensor form of the same loss, computed from logits.
torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// Resizes image/flow/mask to the training input size.
TrainingPair prepare_pair(const TrainingPair& pair, int height, int width);

/// Builds the batch tensors, optionally mirroring samples (flow u is negated).
struct Batch {
  torch::Tensor image;
  torch::Tensor flow;
  torch::Tensor mask;
};
Batch make_batch(const std::vector<const TrainingPair*>& pairs, const std::vector<bool>& flips,
                 net::FlowInputMode mode);

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::map<std::string, int> source_counts;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // log + checkpoints
  bool quiet = true;
  /// Merged into the header of every checkpoint written.
  nlohmann::ordered_json checkpoint_extra = nlohmann::ordered_json::object();
};

struct TrainResult {
  net::TwoStreamNet model{nullptr};
  std::vector<StepLog> log;
  std::map<std::string, double> composition;  // fraction of draws per source
  double max_composition_deviation = 0.0;
};

/// Adam with fixed LR; per step: sample -> (flip) -> forward -> loss -> update.
TrainResult train(const net::NetworkConfig& model_config, const TrainConfig& config, const SourcePools& sources,
                  const TrainOptions& options = {});

/// Continues training an existing model (same contract as above).
TrainResult train(net::TwoStreamNet model, const TrainConfig& config, const SourcePools& sources,
                  const TrainOptions& options = {});

/// Loads manifests into pools resized to the training input size.
SourcePools load_pools(const std::map<std::string, DatasetManifest>& manifests, int height, int width);

}  // namespace flowsim::train
