#include "flowsim/segnet.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "flowsim/error.hpp"
#include "flowsim/media_io.hpp"

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace flowsim::net {

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'S', 'N', 'E', 'T', 'C', 'K', '1'};

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

torch::nn::Sequential conv_relu_pair(int in, int out, int first_stride) {
  return torch::nn::Sequential(conv(in, out, 3, first_stride), torch::nn::ReLU(), conv(out, out, 3),
                               torch::nn::ReLU());
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest)
                               .recompute_scale_factor(false));
}

const char* to_string(FlowInputMode mode) { return mode == FlowInputMode::kColorized ? "colorized" : "raw"; }
const char* to_string(FusionCombine c) { return c == FusionCombine::kConcat ? "concat" : "add"; }

}  // namespace

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "segnet: " + what); };
  for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
    if (encoder_widths[i] < 1) fail("encoder widths must be positive");
    if (i > 0 && encoder_widths[i] <= encoder_widths[i - 1]) fail("encoder widths must be strictly increasing");
  }
  if (decoder_widths.size() != 5) fail("decoder_widths needs 5 entries (3 skip levels + 2 upsampling steps)");
  for (int w : decoder_widths)
    if (w < 1) fail("decoder widths must be positive");
  if (attention_reduction < 1) fail("attention_reduction must be >= 1");
  if (input_height < 32 || input_width < 32 || input_height % 32 || input_width % 32) {
    fail("input size must be a positive multiple of 32");
  }
}

nlohmann::ordered_json NetworkConfig::to_json() const {
  nlohmann::ordered_json j;
  j["encoder_widths"] = encoder_widths;
  j["flow_input_mode"] = to_string(flow_input);
  j["fusion"] = "channel+spatial attention";
  j["combine"] = to_string(combine);
  j["decoder_widths"] = decoder_widths;
  j["attention_reduction"] = attention_reduction;
  j["input_size"] = {input_height, input_width};
  return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  if (j.contains("encoder_widths")) c.encoder_widths = j.at("encoder_widths").get<std::array<int, 4>>();
  if (j.contains("flow_input_mode")) {
    const auto mode = j.at("flow_input_mode").get<std::string>();
    if (mode == "colorized") c.flow_input = FlowInputMode::kColorized;
    else if (mode == "raw") c.flow_input = FlowInputMode::kRaw;
    else throw Error(ErrorCode::kInvalidConfig, "segnet: unknown flow_input_mode '" + mode + "'");
  }
  if (j.contains("combine")) {
    const auto combine = j.at("combine").get<std::string>();
    if (combine == "concat") c.combine = FusionCombine::kConcat;
    else if (combine == "add") c.combine = FusionCombine::kAdd;
    else throw Error(ErrorCode::kInvalidConfig, "segnet: unknown combine '" + combine + "'");
  }
  if (j.contains("decoder_widths")) c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
  if (j.contains("attention_reduction")) c.attention_reduction = j.at("attention_reduction").get<int>();
  if (j.contains("input_size")) {
    const auto size = j.at("input_size").get<std::vector<int>>();
    if (size.size() != 2) throw Error(ErrorCode::kInvalidConfig, "segnet: input_size must be [h, w]");
    c.input_height = size[0];
    c.input_width = size[1];
  }
  c.validate();
  return c;
}

ConvEncoder::ConvEncoder(int in_channels, std::array<int, 4> widths) : widths_(widths) {
  const int stem_width = std::max(1, widths[0] / 2);
  stem_ = register_module("stem", torch::nn::Sequential(conv(in_channels, stem_width, 3, 2), torch::nn::ReLU()));
  stages_[0] = register_module("stage1", conv_relu_pair(stem_width, widths[0], 2));
  for (std::size_t i = 1; i < 4; ++i) {
    stages_[i] = register_module("stage" + std::to_string(i + 1), conv_relu_pair(widths[i - 1], widths[i], 2));
  }
}

std::vector<torch::Tensor> ConvEncoder::forward(torch::Tensor x) {
  x = stem_->forward(x);
  std::vector<torch::Tensor> features;
  for (auto& stage : stages_) {
    x = stage->forward(x);
    features.push_back(x);
  }
  return features;
}

AttentionFusionImpl::AttentionFusionImpl(int channels, FusionCombine combine, int reduction) : combine_(combine) {
  if (combine_ == FusionCombine::kConcat) project_ = register_module("project", conv(2 * channels, channels, 1));
  const int hidden = std::max(1, channels / reduction);
  channel_mlp_ = register_module(
      "channel_mlp", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, hidden, 1)),
                                           torch::nn::ReLU(),
                                           torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, channels, 1))));
  spatial_ = register_module("spatial", conv(2, 1, 7));
}

torch::Tensor AttentionFusionImpl::combine(const torch::Tensor& appearance, const torch::Tensor& motion) {
  if (combine_ == FusionCombine::kConcat) return project_->forward(torch::cat({appearance, motion}, 1));
  return appearance + motion;
}

torch::Tensor AttentionFusionImpl::forward(const torch::Tensor& appearance, const torch::Tensor& motion) {
  torch::Tensor x = combine(appearance, motion);
  if (bypass_) return x;
  const auto avg = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1));
  const auto max = F::adaptive_max_pool2d(x, F::AdaptiveMaxPool2dFuncOptions(1));
  x = x * torch::sigmoid(channel_mlp_->forward(avg) + channel_mlp_->forward(max));
  const auto pooled = torch::cat({x.mean(1, true), std::get<0>(x.max(1, true))}, 1);
  return x * torch::sigmoid(spatial_->forward(pooled));
}

DecoderImpl::DecoderImpl(std::array<int, 4> skip, const std::vector<int>& widths) {
  int in = skip[3];
  for (int level = 2, i = 0; level >= 0; --level, ++i) {
    convs_.push_back(register_module("up" + std::to_string(i), conv(in + skip[static_cast<std::size_t>(level)],
                                                                    widths[static_cast<std::size_t>(i)], 3)));
    in = widths[static_cast<std::size_t>(i)];
  }
  for (std::size_t i = 3; i < 5; ++i) {
    convs_.push_back(register_module("up" + std::to_string(i), conv(in, widths[i], 3)));
    in = widths[i];
  }
  head_ = register_module("head", conv(in, 1, 1));
}

torch::Tensor DecoderImpl::forward(const std::vector<torch::Tensor>& fused) {
  torch::Tensor x = fused[3];
  for (std::size_t i = 0; i < 3; ++i) {
    x = upsample2(x);
    x = torch::relu(convs_[i]->forward(torch::cat({x, fused[2 - i]}, 1)));
  }
  for (std::size_t i = 3; i < 5; ++i) x = torch::relu(convs_[i]->forward(upsample2(x)));
  return head_->forward(x);
}

TwoStreamNetImpl::TwoStreamNetImpl(NetworkConfig config, const EncoderFactory& encoder_factory)
    : config_(std::move(config)) {
  config_.validate();
  auto make = [&](int in) -> std::shared_ptr<EncoderBase> {
    if (encoder_factory) return encoder_factory(in, config_);
    return std::make_shared<ConvEncoder>(in, config_.encoder_widths);
  };
  appearance_ = register_module("appearance", make(3));
  motion_ = register_module("motion", make(config_.flow_channels()));
  const auto widths = appearance_->widths();
  if (motion_->widths() != widths) throw Error(ErrorCode::kInvalidConfig, "segnet: encoder widths differ");
  for (std::size_t i = 0; i < 4; ++i) {
    fusions_.push_back(register_module("fusion" + std::to_string(i + 1),
                                       AttentionFusion(widths[i], config_.combine, config_.attention_reduction)));
  }
  decoder_ = register_module("decoder", Decoder(widths, config_.decoder_widths));
}

void TwoStreamNetImpl::check_inputs(const torch::Tensor& image, const torch::Tensor& flow) const {
  auto shape = [](const torch::Tensor& t) {
    std::string s = "[";
    for (auto d : t.sizes()) s += std::to_string(d) + ",";
    s.back() = ']';
    return s;
  };
  if (image.dim() != 4 || flow.dim() != 4 || image.size(1) != 3 || flow.size(1) != config_.flow_channels() ||
      image.size(0) != flow.size(0) || image.size(2) != flow.size(2) || image.size(3) != flow.size(3) ||
      image.size(2) % 32 != 0 || image.size(3) % 32 != 0 || image.size(2) == 0 || image.size(3) == 0) {
    throw Error(ErrorCode::kShapeMismatch, "image " + shape(image) + " / flow " + shape(flow) +
                                               " (need B x 3 x H x W and B x " +
                                               std::to_string(config_.flow_channels()) +
                                               " x H x W, H and W multiples of 32)");
  }
}

std::vector<torch::Tensor> TwoStreamNetImpl::appearance_features(const torch::Tensor& image) {
  return appearance_->forward(image);
}

std::vector<torch::Tensor> TwoStreamNetImpl::fused_features(const torch::Tensor& image, const torch::Tensor& flow) {
  check_inputs(image, flow);
  const auto app = appearance_->forward(image);
  const auto mot = motion_->forward(flow);
  std::vector<torch::Tensor> fused;
  for (std::size_t i = 0; i < 4; ++i) fused.push_back(fusions_[i]->forward(app[i], mot[i]));
  return fused;
}

torch::Tensor TwoStreamNetImpl::forward(const torch::Tensor& image, const torch::Tensor& flow) {
  return decoder_->forward(fused_features(image, flow));
}

void TwoStreamNetImpl::set_attention_bypass(bool bypass) {
  for (auto& f : fusions_) f->set_bypass(bypass);
}

void TwoStreamNetImpl::zero_head() {
  torch::NoGradGuard guard;
  decoder_->head()->weight.zero_();
  decoder_->head()->bias.zero_();
}

torch::Tensor image_to_tensor(const Image& image) {
  auto t = torch::from_blob(const_cast<float*>(image.data().data()), {image.height(), image.width(), 3},
                            torch::kFloat32);
  return t.permute({2, 0, 1}).sub(0.5).contiguous();
}

torch::Tensor flow_to_tensor(const FlowField& flow, FlowInputMode mode) {
  if (mode == FlowInputMode::kColorized) return image_to_tensor(colorize(flow));
  auto u = torch::from_blob(const_cast<float*>(flow.u.data().data()), {flow.height(), flow.width()}, torch::kFloat32);
  auto v = torch::from_blob(const_cast<float*>(flow.v.data().data()), {flow.height(), flow.width()}, torch::kFloat32);
  return torch::stack({u, v}).mul(kRawFlowScale).contiguous();
}

torch::Tensor mask_to_tensor(const SaliencyMap& mask) {
  return torch::from_blob(const_cast<float*>(mask.values.data().data()), {1, mask.height(), mask.width()},
                          torch::kFloat32)
      .clone();
}

Prediction forward(TwoStreamNet& net, const Image& image, const FlowField& flow) {
  const auto& cfg = net->config();
  if (image.height() != cfg.input_height || image.width() != cfg.input_width || flow.height() != image.height() ||
      flow.width() != image.width()) {
    throw Error(ErrorCode::kShapeMismatch, "forward expects " + std::to_string(cfg.input_height) + "x" +
                                               std::to_string(cfg.input_width) + " image and flow");
  }
  torch::NoGradGuard guard;
  const auto param = net->parameters().front();
  const auto img = image_to_tensor(image).unsqueeze(0).to(param.dtype());
  const auto fl = flow_to_tensor(flow, cfg.flow_input).unsqueeze(0).to(param.dtype());
  const auto logits = net->forward(img, fl).squeeze().to(torch::kFloat32).contiguous();
  const auto prob = torch::sigmoid(logits).contiguous();

  Prediction out{Plane(image.height(), image.width()), Plane(image.height(), image.width())};
  std::memcpy(out.logits.data().data(), logits.data_ptr<float>(), out.logits.size() * sizeof(float));
  std::memcpy(out.probability.data().data(), prob.data_ptr<float>(), out.probability.size() * sizeof(float));
  return out;
}

Prediction predict(TwoStreamNet& net, const Image& image, const FlowField& flow) {
  const auto& cfg = net->config();
  const Image img = resize(image, cfg.input_height, cfg.input_width, ResizeMode::kBilinear);
  const FlowField fl = resize(flow, cfg.input_height, cfg.input_width);
  Prediction p = forward(net, img, fl);
  if (image.height() == cfg.input_height && image.width() == cfg.input_width) return p;
  p.logits = resize(p.logits, image.height(), image.width(), ResizeMode::kBilinear);
  p.probability = resize(p.probability, image.height(), image.width(), ResizeMode::kBilinear);
  return p;
}

std::int64_t count_parameters(TwoStreamNet& net) {
  std::int64_t total = 0;
  for (const auto& p : net->parameters()) {
    if (p.requires_grad()) total += p.numel();
  }
  return total;
}

std::int64_t count_parameters(const NetworkConfig& config) {
  TwoStreamNet net(config);
  return count_parameters(net);
}

void save_checkpoint(TwoStreamNet& net, const fs::path& path, const nlohmann::ordered_json& extra) {
  nlohmann::ordered_json header;
  header["format"] = "flowsim-checkpoint";
  header["version"] = 1;
  header["config"] = net->config().to_json();
  header["extra"] = extra;
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::vector<torch::Tensor> payloads;
  std::uint64_t offset = 0;
  for (const auto& item : net->named_parameters()) {
    const auto t = item.value().detach().to(torch::kFloat32).contiguous();
    nlohmann::ordered_json entry;
    entry["name"] = item.key();
    entry["shape"] = t.sizes().vec();
    entry["offset"] = offset;
    entry["numel"] = t.numel();
    table.push_back(entry);
    offset += static_cast<std::uint64_t>(t.numel()) * 4;
    payloads.push_back(t);
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xFF));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payloads) {
    const float* p = t.data_ptr<float>();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(p[i]);
      const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                             static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      out.write(bytes, 4);
    }
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "short write " + path.string());
}

TwoStreamNet load_checkpoint(const fs::path& path, nlohmann::json* extra) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::kBadMagic, path.string() + " is not a flowsim checkpoint");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (bytes.size() < 16 + len) throw Error(ErrorCode::kTruncatedFile, path.string());
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  const std::size_t payload = 16 + len;

  TwoStreamNet net(NetworkConfig::from_json(header.at("config")));
  auto params = net->named_parameters();
  torch::NoGradGuard guard;
  std::size_t loaded = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto* target = params.find(name);
    if (target == nullptr) throw Error(ErrorCode::kShapeMismatch, "unexpected tensor " + name);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto numel = entry.at("numel").get<std::int64_t>();
    if (numel != target->numel()) throw Error(ErrorCode::kShapeMismatch, "tensor " + name + " has wrong size");
    if (payload + offset + static_cast<std::uint64_t>(numel) * 4 > bytes.size()) {
      throw Error(ErrorCode::kTruncatedFile, path.string());
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    const unsigned char* p = bytes.data() + payload + offset;
    for (std::int64_t i = 0; i < numel; ++i, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      values[static_cast<std::size_t>(i)] = std::bit_cast<float>(bits);
    }
    target->copy_(torch::from_blob(values.data(), target->sizes(), torch::kFloat32));
    ++loaded;
  }
  if (loaded != params.size()) throw Error(ErrorCode::kShapeMismatch, "checkpoint is missing tensors");
  if (extra != nullptr) *extra = header.value("extra", nlohmann::json::object());
  return net;
}

}  // namespace flowsim::net
