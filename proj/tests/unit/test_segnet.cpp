#include <cmath>

#include <torch/torch.h>

#include "doctest.h"
#include "flowsim/error.hpp"
#include "flowsim/generators.hpp"
#include "flowsim/segnet.hpp"
#include "support.hpp"

using namespace flowsim;
using flowsim::testing::TempDir;

namespace {

net::NetworkConfig sized(int h, int w) {
  net::NetworkConfig cfg;
  cfg.input_height = h;
  cfg.input_width = w;
  return cfg;
}

}  // namespace

TEST_CASE("output matches input resolution") {
  torch::manual_seed(0);
  net::TwoStreamNet model(sized(64, 64));
  model->eval();
  torch::NoGradGuard guard;
  for (int s : {64, 128, 256}) {
    const auto img = torch::randn({1, 3, s, s});
    const auto fl = torch::randn({1, 3, s, s});
    CHECK(model->forward(img, fl).sizes() == torch::IntArrayRef({1, 1, s, s}));
  }
  const auto feats = model->appearance_features(torch::randn({1, 3, 128, 128}));
  REQUIRE(feats.size() == 4);
  CHECK(feats[0].size(2) == 32);
  CHECK(feats[1].size(2) == 16);
  CHECK(feats[2].size(2) == 8);
  CHECK(feats[3].size(2) == 4);
  CHECK(model->forward(torch::randn({2, 3, 64, 96}), torch::randn({2, 3, 64, 96})).sizes() ==
        torch::IntArrayRef({2, 1, 64, 96}));
}

TEST_CASE("shape errors") {
  net::TwoStreamNet model(sized(64, 64));
  CHECK_THROWS_AS(model->forward(torch::randn({1, 3, 60, 64}), torch::randn({1, 3, 60, 64})), Error);
  CHECK_THROWS_AS(model->forward(torch::randn({1, 3, 64, 64}), torch::randn({1, 2, 64, 64})), Error);
  const Image img = make_textured_image(32, 32, 1);
  try {
    net::forward(model, img, FlowField(32, 32));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("zero head gives uniform one half") {
  net::TwoStreamNet model(sized(64, 64));
  model->zero_head();
  const auto p = net::forward(model, make_textured_image(64, 64, 2), FlowField(64, 64, 1.0f, -2.0f));
  for (float v : p.probability.data()) CHECK(v == 0.5f);
  for (float v : p.logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("inference is deterministic and batch-independent") {
  torch::manual_seed(4);
  net::TwoStreamNet model(sized(64, 64));
  model->eval();
  const Image img = make_textured_image(64, 64, 3);
  const FlowField flow(64, 64, 0.5f, 1.5f);
  const auto a = net::forward(model, img, flow);
  const auto b = net::forward(model, img, flow);
  CHECK(a.probability == b.probability);
  for (std::size_t i = 0; i < a.logits.size(); ++i)
    CHECK(a.probability.data()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-a.logits.data()[i]))).epsilon(1e-5));

  torch::NoGradGuard guard;
  const auto x = torch::randn({3, 3, 64, 64});
  const auto f = torch::randn({3, 3, 64, 64});
  const auto perm = torch::tensor({2, 0, 1});
  const auto out = model->forward(x, f);
  const auto out_perm = model->forward(x.index_select(0, perm), f.index_select(0, perm));
  CHECK(torch::allclose(out.index_select(0, perm), out_perm, 1e-5, 1e-6));
}

TEST_CASE("attention bypass reduces fusion to the plain combination") {
  torch::manual_seed(5);
  net::TwoStreamNet model(sized(64, 64));
  auto& fusion = model->fusions()[1];
  const auto a = torch::randn({1, 64, 8, 8});
  const auto m = torch::randn({1, 64, 8, 8});
  torch::NoGradGuard guard;
  CHECK_FALSE(torch::allclose(fusion->forward(a, m), fusion->combine(a, m)));
  model->set_attention_bypass(true);
  CHECK(torch::equal(fusion->forward(a, m), fusion->combine(a, m)));

  net::NetworkConfig add = sized(64, 64);
  add.combine = net::FusionCombine::kAdd;
  net::TwoStreamNet add_model(add);
  add_model->set_attention_bypass(true);
  CHECK(torch::allclose(add_model->fusions()[1]->forward(a, m), a + m));
}

TEST_CASE("every parameter receives a gradient") {
  torch::manual_seed(6);
  net::TwoStreamNet model(sized(64, 64));
  const auto out = model->forward(torch::randn({2, 3, 64, 64}), torch::randn({2, 3, 64, 64}));
  out.square().mean().backward();
  for (const auto& item : model->named_parameters()) {
    CAPTURE(item.key());
    REQUIRE(item.value().grad().defined());
    CHECK(item.value().grad().abs().sum().item<double>() > 0.0);
  }
}

TEST_CASE("parameter counts") {
  const net::NetworkConfig base;
  const auto n = net::count_parameters(base);
  CHECK(n < 5'000'000);
  CHECK(n == net::count_parameters(base));
  net::NetworkConfig wide = base;
  for (int& w : wide.encoder_widths) w *= 2;
  for (int& w : wide.decoder_widths) w *= 2;
  const double ratio = static_cast<double>(net::count_parameters(wide)) / static_cast<double>(n);
  CHECK(ratio > 2.0);
  CHECK(ratio <= 4.0);

  net::NetworkConfig raw = base;
  raw.flow_input = net::FlowInputMode::kRaw;
  CHECK(net::count_parameters(raw) < n);
}

TEST_CASE("config validation and json") {
  net::NetworkConfig cfg = sized(96, 64);
  cfg.flow_input = net::FlowInputMode::kRaw;
  cfg.combine = net::FusionCombine::kAdd;
  CHECK(net::NetworkConfig::from_json(nlohmann::json::parse(cfg.to_json().dump())) == cfg);
  net::NetworkConfig bad = sized(100, 64);
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir("ckpt");
  torch::manual_seed(7);
  net::NetworkConfig cfg = sized(64, 64);
  cfg.flow_input = net::FlowInputMode::kRaw;
  net::TwoStreamNet model(cfg);
  net::save_checkpoint(model, dir / "a.bin", {{"step", 12}});
  nlohmann::json extra;
  auto back = net::load_checkpoint(dir / "a.bin", &extra);
  CHECK(extra.at("step") == 12);
  CHECK(back->config() == cfg);
  const auto pa = model->named_parameters();
  const auto pb = back->named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].key() == pb[i].key());
    CHECK(torch::equal(pa[i].value(), pb[i].value()));
  }
  net::save_checkpoint(back, dir / "b.bin", {{"step", 12}});
  CHECK(testing::read_bytes(dir / "a.bin") == testing::read_bytes(dir / "b.bin"));

  const Image img = make_textured_image(64, 64, 8);
  const FlowField flow(64, 64, 1.0f, 0.0f);
  CHECK(net::forward(model, img, flow).probability == net::forward(back, img, flow).probability);

  std::string bytes = testing::read_bytes(dir / "a.bin");
  testing::write_bytes(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(net::load_checkpoint(dir / "short.bin"), Error);
  CHECK_THROWS_AS(net::load_checkpoint(dir / "missing.bin"), Error);
}

TEST_CASE("predict resizes to and from the network size") {
  torch::manual_seed(9);
  net::TwoStreamNet model(sized(64, 64));
  const auto p = net::predict(model, make_textured_image(50, 70, 1), FlowField(50, 70));
  CHECK(p.probability.height() == 50);
  CHECK(p.probability.width() == 70);
  for (float v : p.probability.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}
