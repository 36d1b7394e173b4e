#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "flowsim/flow.hpp"
#include "flowsim/image.hpp"
#include "json.hpp"

namespace flowsim::net {

enum class FlowInputMode { kColorized, kRaw };
enum class FusionCombine { kConcat, kAdd };

/// Raw flow inputs are multiplied by this before entering the motion stream.
inline constexpr float kRawFlowScale = 1.0f / 20.0f;

struct NetworkConfig {
  std::array<int, 4> encoder_widths{32, 64, 128, 256};  // strides 4/8/16/32
  FlowInputMode flow_input = FlowInputMode::kColorized;
  FusionCombine combine = FusionCombine::kConcat;
  /// Three skip levels (strides 16, 8, 4) then two upsampling steps to full size.
  std::vector<int> decoder_widths{128, 64, 32, 16, 16};
  int attention_reduction = 8;
  int input_height = 128;
  int input_width = 128;

  void validate() const;
  int flow_channels() const { return flow_input == FlowInputMode::kColorized ? 3 : 2; }

  nlohmann::ordered_json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Hierarchical encoder producing feature maps at strides 4, 8, 16 and 32.
/// Externally pretrained backbones plug in by implementing this interface.
class EncoderBase : public torch::nn::Module {
 public:
  virtual std::vector<torch::Tensor> forward(torch::Tensor x) = 0;
  virtual std::array<int, 4> widths() const = 0;
};

/// Desk-scale encoder: strided 3x3 convolutions, two per stage.
class ConvEncoder : public EncoderBase {
 public:
  ConvEncoder(int in_channels, std::array<int, 4> widths);
  std::vector<torch::Tensor> forward(torch::Tensor x) override;
  std::array<int, 4> widths() const override { return widths_; }

 private:
  std::array<int, 4> widths_;
  torch::nn::Sequential stem_{nullptr};
  std::array<torch::nn::Sequential, 4> stages_{nullptr, nullptr, nullptr, nullptr};
};

using EncoderFactory = std::function<std::shared_ptr<EncoderBase>(int in_channels, const NetworkConfig&)>;

/// Channel attention followed by spatial attention over the combined
/// appearance/motion features.
class AttentionFusionImpl : public torch::nn::Module {
 public:
  AttentionFusionImpl(int channels, FusionCombine combine, int reduction);
  torch::Tensor forward(const torch::Tensor& appearance, const torch::Tensor& motion);

  /// Forces both attention maps to 1 (fusion becomes plain combination).
  void set_bypass(bool bypass) { bypass_ = bypass; }
  torch::Tensor combine(const torch::Tensor& appearance, const torch::Tensor& motion);

 private:
  FusionCombine combine_;
  bool bypass_ = false;
  torch::nn::Conv2d project_{nullptr};
  torch::nn::Sequential channel_mlp_{nullptr};
  torch::nn::Conv2d spatial_{nullptr};
};
TORCH_MODULE(AttentionFusion);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(std::array<int, 4> skip_widths, const std::vector<int>& widths);
  /// `fused` ordered fine to coarse (strides 4, 8, 16, 32); returns logits at 4x the
  /// resolution of fused[0].
  torch::Tensor forward(const std::vector<torch::Tensor>& fused);
  torch::nn::Conv2d& head() { return head_; }

 private:
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

class TwoStreamNetImpl : public torch::nn::Module {
 public:
  explicit TwoStreamNetImpl(NetworkConfig config, const EncoderFactory& encoder_factory = nullptr);

  /// image [B,3,H,W], flow [B,C,H,W] with H, W divisible by 32 -> logits [B,1,H,W].
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& flow);

  /// Fused per-level features, fine to coarse.
  std::vector<torch::Tensor> fused_features(const torch::Tensor& image, const torch::Tensor& flow);
  std::vector<torch::Tensor> appearance_features(const torch::Tensor& image);

  void set_attention_bypass(bool bypass);
  void zero_head();

  const NetworkConfig& config() const { return config_; }
  std::vector<AttentionFusion>& fusions() { return fusions_; }

 private:
  void check_inputs(const torch::Tensor& image, const torch::Tensor& flow) const;

  NetworkConfig config_;
  std::shared_ptr<EncoderBase> appearance_;
  std::shared_ptr<EncoderBase> motion_;
  std::vector<AttentionFusion> fusions_;
  Decoder decoder_{nullptr};
};
TORCH_MODULE(TwoStreamNet);

struct Prediction {
  Plane logits;
  Plane probability;

  SaliencyMap as_saliency() const { return SaliencyMap{probability, false}; }
};

/// [3,H,W] float tensor, centered around zero.
torch::Tensor image_to_tensor(const Image& image);
/// [C,H,W] float tensor in the encoding chosen by `mode`.
torch::Tensor flow_to_tensor(const FlowField& flow, FlowInputMode mode);
torch::Tensor mask_to_tensor(const SaliencyMap& mask);

/// Single-sample inference. Inputs must match the configured input size.
Prediction forward(TwoStreamNet& net, const Image& image, const FlowField& flow);

/// Inference at any resolution: inputs are resized to the configured size and
/// the probability map is resized back.
Prediction predict(TwoStreamNet& net, const Image& image, const FlowField& flow);

std::int64_t count_parameters(const NetworkConfig& config);
std::int64_t count_parameters(TwoStreamNet& net);

/// Self-describing container: JSON header (config, tensor table, extra) followed
/// by little-endian float32 payloads.
void save_checkpoint(TwoStreamNet& net, const std::filesystem::path& path,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
TwoStreamNet load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace flowsim::net
