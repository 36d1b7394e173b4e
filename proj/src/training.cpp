#include "flowsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "flowsim/error.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace flowsim::train {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 2;
  c.input_height = 128;
  c.input_width = 128;
  c.max_steps = 200;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "training: " + what); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (input_height < 32 || input_width < 32 || input_height % 32 || input_width % 32) {
    fail("input size must be a positive multiple of 32");
  }
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  double total = 0.0;
  for (const auto& [name, w] : mixture) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("mixture weight for '" + name + "' must be >= 0");
    total += w;
  }
  if (!mixture.empty() && !(total > 0.0)) fail("mixture weights must sum to a positive value");
}

ordered_json TrainConfig::to_json() const {
  ordered_json j;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["input_size"] = {input_height, input_width};
  j["max_steps"] = max_steps;
  j["mixture"] = mixture;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["hflip"] = hflip;
  j["adam"] = {{"beta1", beta1}, {"beta2", beta2}, {"eps", adam_eps}};
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("input_size")) {
      const auto size = j.at("input_size").get<std::vector<int>>();
      if (size.size() != 2) throw Error(ErrorCode::kInvalidConfig, "training: input_size must be [h, w]");
      c.input_height = size[0];
      c.input_width = size[1];
    }
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<int>();
    if (j.contains("mixture")) c.mixture = j.at("mixture").get<std::map<std::string, double>>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("hflip")) c.hflip = j.at("hflip").get<bool>();
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.beta1 = a.value("beta1", c.beta1);
      c.beta2 = a.value("beta2", c.beta2);
      c.adam_eps = a.value("eps", c.adam_eps);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("training: ") + e.what());
  }
  return c;
}

MixtureSampler::MixtureSampler(const std::map<std::string, std::size_t>& sizes,
                               const std::map<std::string, double>& weights, std::uint64_t seed)
    : rng_(seed) {
  double total = 0.0;
  for (const auto& [name, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::kInvalidConfig, "mixture weight for '" + name + "' must be >= 0");
    }
    if (w == 0.0) continue;
    const auto it = sizes.find(name);
    if (it == sizes.end()) throw Error(ErrorCode::kEmptySource, "unknown source '" + name + "'");
    if (it->second == 0) throw Error(ErrorCode::kEmptySource, "source '" + name + "' has no entries");
    names_.push_back(name);
    weights_.push_back(w);
    sizes_.push_back(it->second);
    total += w;
  }
  if (names_.empty() || !(total > 0.0)) throw Error(ErrorCode::kEmptySource, "mixture has no weighted source");
  double acc = 0.0;
  for (double& w : weights_) {
    w /= total;
    acc += w;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

MixtureSampler::Draw MixtureSampler::draw() {
  const double u = rng_.uniform();
  std::size_t s = 0;
  while (s + 1 < cumulative_.size() && u >= cumulative_[s]) ++s;
  return {s, static_cast<std::size_t>(rng_.below(sizes_[s]))};
}

std::vector<MixtureSampler::Draw> MixtureSampler::sample(int count) {
  std::vector<Draw> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) out.push_back(draw());
  return out;
}

std::vector<TrainingPair> sample_batch(MixtureSampler& sampler, const SourcePools& pools, int batch_size) {
  std::vector<TrainingPair> batch;
  for (const auto& d : sampler.sample(batch_size)) {
    const auto& pool = pools.at(sampler.names()[d.source]);
    batch.push_back(pool.at(d.entry));
  }
  return batch;
}

double loss(const net::Prediction& pred, const SaliencyMap& mask) {
  if (!pred.probability.same_shape(mask.values) || mask.values.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "loss: prediction and mask differ in size");
  }
  const auto p = pred.probability.data();
  const auto m = mask.values.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), kLossEpsilon, 1.0 - kLossEpsilon);
    sum -= m[i] * std::log(q) + (1.0 - m[i]) * std::log(1.0 - q);
  }
  return sum / static_cast<double>(p.size());
}

torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  if (logits.sizes() != mask.sizes()) {
    throw Error(ErrorCode::kShapeMismatch, "bce_loss: logits and mask differ in shape");
  }
  // log(clamp(sigmoid(x))) == clamp(log_sigmoid(x)), evaluated stably.
  const double lo = std::log(kLossEpsilon);
  const double hi = std::log1p(-kLossEpsilon);
  const auto log_p = torch::clamp(torch::log_sigmoid(logits), lo, hi);
  const auto log_not_p = torch::clamp(torch::log_sigmoid(-logits), lo, hi);
  return -(mask * log_p + (1 - mask) * log_not_p).mean();
}

TrainingPair prepare_pair(const TrainingPair& pair, int height, int width) {
  TrainingPair out = pair;
  out.image = resize(pair.image, height, width, ResizeMode::kBilinear);
  out.flow = resize(pair.flow, height, width);
  out.mask = resize(pair.mask, height, width);
  return out;
}

Batch make_batch(const std::vector<const TrainingPair*>& pairs, const std::vector<bool>& flips,
                 net::FlowInputMode mode) {
  std::vector<torch::Tensor> images, flows, masks;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TrainingPair& p = *pairs[i];
    if (!p.is_aligned()) throw Error(ErrorCode::kShapeMismatch, "pair " + p.pair_id() + " is misaligned");
    if (flips[i]) {
      images.push_back(net::image_to_tensor(hflip(p.image)));
      flows.push_back(net::flow_to_tensor(hflip(p.flow), mode));
      masks.push_back(net::mask_to_tensor(SaliencyMap{hflip(p.mask.values), p.mask.is_binary}));
    } else {
      images.push_back(net::image_to_tensor(p.image));
      flows.push_back(net::flow_to_tensor(p.flow, mode));
      masks.push_back(net::mask_to_tensor(p.mask));
    }
  }
  return {torch::stack(images), torch::stack(flows), torch::stack(masks)};
}

namespace {

ordered_json checkpoint_header(const TrainOptions& options, int step, const TrainConfig& config) {
  ordered_json extra = options.checkpoint_extra;
  extra["step"] = step;
  extra["train"] = config.to_json();
  return extra;
}

}  // namespace

TrainResult train(const net::NetworkConfig& model_config, const TrainConfig& config, const SourcePools& sources,
                  const TrainOptions& options) {
  config.validate();
  torch::manual_seed(config.seed);
  net::NetworkConfig cfg = model_config;
  cfg.input_height = config.input_height;
  cfg.input_width = config.input_width;
  return train(net::TwoStreamNet(cfg), config, sources, options);
}

TrainResult train(net::TwoStreamNet model, const TrainConfig& config, const SourcePools& sources,
                  const TrainOptions& options) {
  config.validate();
  const auto& net_cfg = model->config();
  if (net_cfg.input_height != config.input_height || net_cfg.input_width != config.input_width) {
    throw Error(ErrorCode::kInvalidConfig, "training input size differs from the network input size");
  }

  std::map<std::string, std::size_t> sizes;
  for (const auto& [name, pool] : sources) sizes[name] = pool.size();
  std::map<std::string, double> mixture = config.mixture;
  if (mixture.empty()) {
    for (const auto& [name, pool] : sources) mixture[name] = 1.0;
  }
  MixtureSampler sampler(sizes, mixture, derive_seed(config.seed, 1));
  Rng flip_rng(derive_seed(config.seed, 2));

  // Resize once; pools are reused across steps.
  std::map<std::string, std::vector<TrainingPair>> prepared;
  for (const auto& name : sampler.names()) {
    auto& dst = prepared[name];
    for (const auto& pair : sources.at(name)) dst.push_back(prepare_pair(pair, config.input_height, config.input_width));
  }

  std::ofstream log_file;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    log_file.open(*options.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::kIoFailure, "cannot open training log in " + options.out_dir->string());
  }

  model->train();
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate)
                                                        .betas({config.beta1, config.beta2})
                                                        .eps(config.adam_eps));
  TrainResult result;
  std::map<std::string, long> totals;
  for (const auto& name : sampler.names()) totals[name] = 0;
  long draws = 0;

  for (int step = 1; step <= config.max_steps; ++step) {
    const auto picks = sampler.sample(config.batch_size);
    std::vector<const TrainingPair*> batch_pairs;
    std::vector<bool> flips;
    StepLog entry;
    entry.step = step;
    entry.lr = config.learning_rate;
    for (const auto& name : sampler.names()) entry.source_counts[name] = 0;
    for (const auto& d : picks) {
      const auto& name = sampler.names()[d.source];
      batch_pairs.push_back(&prepared.at(name)[d.entry]);
      flips.push_back(config.hflip && flip_rng.uniform() < 0.5);
      ++entry.source_counts[name];
      ++totals[name];
      ++draws;
    }
    const Batch batch = make_batch(batch_pairs, flips, net_cfg.flow_input);
    optimizer.zero_grad();
    const auto logits = model->forward(batch.image, batch.flow);
    const auto l = bce_loss(logits, batch.mask);
    l.backward();
    optimizer.step();
    entry.loss = l.item<double>();

    if (log_file) {
      ordered_json rec;
      rec["step"] = entry.step;
      rec["loss"] = entry.loss;
      rec["lr"] = entry.lr;
      rec["source_counts"] = entry.source_counts;
      log_file << rec.dump() << '\n';
    }
    if (!options.quiet && (step % 50 == 0 || step == 1)) {
      std::fprintf(stderr, "step %d loss %.5f\n", step, entry.loss);
    }
    if (options.out_dir && step % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.bin", step);
      net::save_checkpoint(model, *options.out_dir / name, checkpoint_header(options, step, config));
    }
    result.log.push_back(std::move(entry));
  }

  for (std::size_t i = 0; i < sampler.names().size(); ++i) {
    const auto& name = sampler.names()[i];
    const double fraction = draws ? static_cast<double>(totals[name]) / static_cast<double>(draws) : 0.0;
    result.composition[name] = fraction;
    if (draws) {
      result.max_composition_deviation =
          std::max(result.max_composition_deviation, std::fabs(fraction - sampler.weights()[i]));
    }
  }
  if (log_file) {
    ordered_json summary;
    summary["summary"] = true;
    summary["steps"] = config.max_steps;
    summary["draws"] = draws;
    summary["composition"] = result.composition;
    std::map<std::string, double> target;
    for (std::size_t i = 0; i < sampler.names().size(); ++i) target[sampler.names()[i]] = sampler.weights()[i];
    summary["target"] = target;
    summary["max_deviation"] = result.max_composition_deviation;
    log_file << summary.dump() << '\n';
  }
  if (options.out_dir) {
    net::save_checkpoint(model, *options.out_dir / "checkpoint_final.bin",
                         checkpoint_header(options, config.max_steps, config));
  }
  model->eval();
  result.model = model;
  return result;
}

SourcePools load_pools(const std::map<std::string, DatasetManifest>& manifests, int height, int width) {
  SourcePools pools;
  for (const auto& [name, manifest] : manifests) {
    auto& pool = pools[name];
    for (const auto& entry : manifest.entries) pool.push_back(prepare_pair(load_pair(manifest, entry), height, width));
  }
  return pools;
}

}  // namespace flowsim::train
