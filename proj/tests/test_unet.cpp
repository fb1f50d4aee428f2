#include <gtest/gtest.h>

#include "colorloss/error.hpp"
#include "colorloss/unet.hpp"
#include "colorloss/weights.hpp"
#include "fixtures.hpp"

using namespace colorloss;

namespace {

NetworkConfig config(ColorSpace space, int64_t filters = 64) {
  NetworkConfig cfg;
  cfg.target_space = space;
  cfg.base_filters = filters;
  return cfg;
}

std::vector<std::vector<int64_t>> ladder(int64_t c, int64_t h, int64_t w) {
  return {{3, h, w},
          {64, h / 2, w / 2},
          {128, h / 4, w / 4},
          {256, h / 8, w / 8},
          {512, h / 16, w / 16},
          {512, h / 8, w / 8},
          {256, h / 4, w / 4},
          {128, h / 2, w / 2},
          {64, h, w},
          {64, h, w},
          {c, h, w}};
}

// Synthetic VGG-shaped archive for the ten encoder convolutions.
WeightArchive fake_vgg(uint64_t seed, const std::string& skip = "") {
  torch::Generator gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const std::array<std::pair<int64_t, int64_t>, 10> io = {
      {{3, 64}, {64, 64}, {64, 128}, {128, 128}, {128, 256}, {256, 256}, {256, 512}, {512, 512},
       {512, 512}, {512, 512}}};
  WeightArchive archive;
  const auto names = vgg16_encoder_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == skip) continue;
    archive.put(names[i] + ".weight", torch::randn({io[i].second, io[i].first, 3, 3}, gen) * 0.05);
    archive.put(names[i] + ".bias", torch::randn({io[i].second}, gen) * 0.05);
  }
  return archive;
}

}  // namespace

TEST(UNet, ShapeLadderAt256) {
  for (auto space : {ColorSpace::kLab, ColorSpace::kRgb}) {
    auto net = build_unet(config(space), 1);
    net->eval();
    torch::NoGradGuard no_grad;
    std::vector<LayerShape> trace;
    auto out = net->forward_traced(torch::zeros({1, 3, 256, 256}), trace);
    const int64_t c = space == ColorSpace::kLab ? 2 : 3;
    const auto expected = ladder(c, 256, 256);
    ASSERT_EQ(trace.size(), expected.size());
    for (size_t i = 0; i < trace.size(); ++i) EXPECT_EQ(trace[i].shape, expected[i]) << trace[i].name;
    EXPECT_EQ(trace[1].name, "Conv1 + Max-pooling");
    EXPECT_EQ(trace.back().name, "Conv10");
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, c, 256, 256}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
  }
}

TEST(UNet, ShapeLadderAtOtherSizes) {
  auto net = build_unet(config(ColorSpace::kLab), 2);
  net->eval();
  torch::NoGradGuard no_grad;
  for (auto [h, w] : std::vector<std::pair<int64_t, int64_t>>{{32, 32}, {16, 48}, {64, 32}}) {
    std::vector<LayerShape> trace;
    auto out = net->forward_traced(torch::rand({2, 3, h, w}), trace);
    const auto expected = ladder(2, h, w);
    for (size_t i = 0; i < trace.size(); ++i) EXPECT_EQ(trace[i].shape, expected[i]);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 2, h, w}));
  }
}

TEST(UNet, RejectsIndivisibleInput) {
  auto net = build_unet(config(ColorSpace::kLab, 4), 0);
  EXPECT_THROW(net->forward(torch::zeros({1, 3, 24, 32})), ContractError);
  EXPECT_THROW(net->forward(torch::zeros({1, 1, 32, 32})), ContractError);
}

TEST(UNet, InvalidConfigRejected) {
  auto cfg = config(ColorSpace::kLab);
  cfg.stages = 4;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = config(ColorSpace::kGray);
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = config(ColorSpace::kLab);
  cfg.base_filters = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = config(ColorSpace::kRgb);
  cfg.head = OutputHead::kDistribution;
  cfg.distribution_bins = 10;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(UNet, OutputRangesFollowHead) {
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 3, 32, 32}) * 4 - 2;
  auto lab = build_unet(config(ColorSpace::kLab, 8), 3);
  auto ab = lab->forward(x);
  EXPECT_LE(ab.abs().max().item<double>(), 1.0);
  auto rgb = build_unet(config(ColorSpace::kRgb, 8), 3);
  auto out = rgb->forward(x);
  EXPECT_GE(out.min().item<double>(), 0.0);
  EXPECT_LE(out.max().item<double>(), 1.0);

  auto dist_cfg = config(ColorSpace::kLab, 8);
  dist_cfg.head = OutputHead::kDistribution;
  dist_cfg.distribution_bins = 12;
  auto dist = build_unet(dist_cfg, 3)->forward(x);
  EXPECT_EQ(dist.size(1), 12);
  EXPECT_TRUE(torch::allclose(dist.sum(1), torch::ones({2, 32, 32}), 0, 1e-5));
}

TEST(UNet, ParameterCountDiffersOnlyInHead) {
  auto lab = build_unet(config(ColorSpace::kLab), 0);
  auto rgb = build_unet(config(ColorSpace::kRgb), 0);
  // One extra 1x1 output channel: 64 weights and one bias.
  EXPECT_EQ(parameter_count(*rgb) - parameter_count(*lab), 65);
}

TEST(UNet, GradientsFiniteForEveryParameter) {
  auto net = build_unet(config(ColorSpace::kRgb, 8), 5);
  net->train();
  auto out = net->forward(torch::rand({2, 3, 32, 32}));
  out.pow(2).mean().backward();
  for (const auto& p : net->named_parameters()) {
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
    EXPECT_TRUE(torch::isfinite(p.value().grad()).all().item<bool>()) << p.key();
  }
}

TEST(UNet, DeterministicInEvalMode) {
  auto a = build_unet(config(ColorSpace::kLab, 8), 9);
  auto b = build_unet(config(ColorSpace::kLab, 8), 9);
  a->eval();
  b->eval();
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 3, 32, 32});
  EXPECT_TRUE(torch::equal(a->forward(x), a->forward(x)));
  EXPECT_TRUE(torch::equal(a->forward(x), b->forward(x)));
  auto c = build_unet(config(ColorSpace::kLab, 8), 10);
  c->eval();
  EXPECT_FALSE(torch::equal(a->forward(x), c->forward(x)));
}

TEST(UNet, KaimingUniformBounds) {
  auto net = build_unet(config(ColorSpace::kLab, 8), 4);
  for (const auto& p : net->named_parameters()) {
    const auto& t = p.value();
    if (p.key().find("norm") != std::string::npos) continue;
    if (p.key().ends_with("bias")) {
      EXPECT_EQ(t.abs().max().item<double>(), 0.0) << p.key();
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(t.size(1) * t[0][0].numel()));
    EXPECT_LE(t.abs().max().item<double>(), bound) << p.key();
  }
}

TEST(UNet, PretrainedEncoderCopiesExactly) {
  auto net = build_unet(config(ColorSpace::kLab), 1);
  net->eval();
  torch::NoGradGuard no_grad;
  auto x = fixtures::gray_image(3, 32, 32);
  auto before = net->forward(x).clone();
  const auto decoder_before = net->named_parameters()["conv6.conv1.weight"].clone();
  auto archive = fake_vgg(77);
  load_pretrained_encoder(net, archive);
  auto blocks = net->encoder_blocks();
  EXPECT_TRUE(torch::equal(blocks[0]->conv1->weight, archive.at("features.0.weight")));
  EXPECT_TRUE(torch::equal(blocks[0]->conv1->bias, archive.at("features.0.bias")));
  EXPECT_TRUE(torch::equal(blocks[4]->conv2->weight, archive.at("features.26.weight")));
  EXPECT_TRUE(torch::equal(net->named_parameters()["conv6.conv1.weight"], decoder_before));
  EXPECT_FALSE(torch::allclose(net->forward(x), before));
}

TEST(UNet, PretrainedEncoderErrorsNameTheLayer) {
  auto net = build_unet(config(ColorSpace::kLab), 1);
  try {
    load_pretrained_encoder(net, fake_vgg(1, "features.12"));
    FAIL() << "missing layer accepted";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("features.12"), std::string::npos) << e.what();
  }
  auto archive = fake_vgg(1);
  archive.put("features.5.weight", torch::zeros({128, 32, 3, 3}));
  try {
    load_pretrained_encoder(net, archive);
    FAIL() << "shape mismatch accepted";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("features.5"), std::string::npos) << e.what();
  }
}

TEST(WeightArchive, RoundTripAndMissingName) {
  fixtures::TempDir dir;
  WeightArchive archive;
  archive.put("a.weight", torch::randn({2, 3, 4}));
  archive.put("b", torch::arange(5, torch::kFloat32));
  archive.save(dir / "w.clwa");
  auto loaded = WeightArchive::load(dir / "w.clwa");
  EXPECT_EQ(loaded.names(), archive.names());
  EXPECT_TRUE(torch::equal(loaded.at("a.weight"), archive.at("a.weight")));
  EXPECT_TRUE(torch::equal(loaded.at("b"), archive.at("b")));
  EXPECT_THROW(loaded.at("missing"), IoError);
  EXPECT_THROW(WeightArchive::load(dir / "absent.clwa"), IoError);
}
