#include <gtest/gtest.h>

#include "colorloss/distribution.hpp"
#include "colorloss/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace colorloss;

namespace {

torch::Generator seeded(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

double scalar(const torch::Tensor& t) { return t.item<double>(); }

const ColorQuantizer& gamut() {
  static const ColorQuantizer q = ColorQuantizer::from_gamut();
  return q;
}

torch::Tensor uniform(int64_t B, int64_t K, int64_t H, int64_t W) {
  return torch::full({B, K, H, W}, 1.0 / static_cast<double>(K), torch::kFloat64);
}

}  // namespace

TEST(Quantizer, GamutGridIsUniqueAndCoversSrgb) {
  const auto& q = gamut();
  const auto centers = q.centers();
  EXPECT_GT(q.bins(), 200);
  EXPECT_LT(q.bins(), 500);
  EXPECT_NEAR(q.grid_step(), 10.0 / 110.0, 1e-12);
  // Unique centers.
  auto d = torch::cdist(centers, centers) + torch::eye(q.bins(), torch::kFloat64) * 10;
  EXPECT_GT(d.min().item<double>(), q.grid_step() * 0.5);
  // Random in-gamut colors lie within half a cell diagonal of a center.
  auto gen = seeded(3);
  auto rgb = torch::rand({1, 3, 1, 2000}, gen, torch::kFloat64);
  auto ab = chroma_of(rgb_to_lab(ImageBatch(rgb, ColorSpace::kRgb))).values();
  auto points = ab.squeeze(0).squeeze(1).t();  // N x 2
  auto nearest = torch::cdist(points, centers).min(1);
  EXPECT_LE(std::get<0>(nearest).max().item<double>(), q.grid_step() * std::sqrt(2.0) / 2 + 1e-9);
}

TEST(Quantizer, SaveLoadRoundTrip) {
  fixtures::TempDir dir;
  gamut().save(dir / "q.txt");
  auto loaded = ColorQuantizer::load(dir / "q.txt");
  EXPECT_EQ(loaded.bins(), gamut().bins());
  EXPECT_TRUE(torch::allclose(loaded.centers(), gamut().centers(), 0, 1e-9));
  EXPECT_NEAR(loaded.grid_step(), gamut().grid_step(), 1e-12);
  EXPECT_THROW(ColorQuantizer::load(dir / "missing.txt"), IoError);
}

TEST(Distribution, SimplexIsEnforced) {
  EXPECT_NO_THROW(PixelDistribution(uniform(1, 4, 2, 2)));
  EXPECT_THROW(PixelDistribution(torch::ones({1, 4, 2, 2}, torch::kFloat64)), ContractError);
  auto negative = uniform(1, 2, 1, 1);
  negative[0][0][0][0] = -0.5;
  negative[0][1][0][0] = 1.5;
  EXPECT_THROW(PixelDistribution{negative}, ContractError);
}

TEST(Distribution, EncodeOnCenterIsOneHot) {
  const auto& q = gamut();
  auto ab = q.centers().index({torch::tensor({0, 17, 101})}).t().reshape({1, 2, 1, 3});
  auto rho = encode_targets(ImageBatch(ab, ColorSpace::kAb), q, 0.0);
  auto argmax = rho.probs().argmax(1);
  EXPECT_EQ(argmax[0][0][0].item<int64_t>(), 0);
  EXPECT_EQ(argmax[0][0][1].item<int64_t>(), 17);
  EXPECT_EQ(argmax[0][0][2].item<int64_t>(), 101);
  EXPECT_NEAR(rho.probs().max().item<double>(), 1.0, 0);
  EXPECT_NEAR(rho.probs().sum().item<double>(), 3.0, 1e-12);
}

TEST(Distribution, EncodeMatchesExhaustiveNearestNeighbor) {
  const auto& q = gamut();
  auto gen = seeded(5);
  auto rgb = torch::rand({2, 3, 4, 5}, gen, torch::kFloat64);
  auto ab = chroma_of(rgb_to_lab(ImageBatch(rgb, ColorSpace::kRgb)));
  auto rho = encode_targets(ab, q, 0.0);
  auto got = rho.probs().argmax(1);
  const auto centers = oracle::values(q.centers());
  const auto vab = oracle::values(ab.values());
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t h = 0; h < 4; ++h)
      for (int64_t w = 0; w < 5; ++w) {
        const double a = vab[static_cast<size_t>(((n * 2 + 0) * 4 + h) * 5 + w)];
        const double b = vab[static_cast<size_t>(((n * 2 + 1) * 4 + h) * 5 + w)];
        int64_t best = 0;
        double best_d = 1e300;
        for (int64_t k = 0; k < q.bins(); ++k) {
          const double da = a - centers[static_cast<size_t>(2 * k)];
          const double db = b - centers[static_cast<size_t>(2 * k + 1)];
          if (da * da + db * db < best_d) {
            best_d = da * da + db * db;
            best = k;
          }
        }
        EXPECT_EQ(got[n][h][w].item<int64_t>(), best);
      }
  auto decoded = expectation_decode(rho, q).values();
  auto again = encode_targets(ImageBatch(decoded, ColorSpace::kAb), q, 0.0).probs();
  EXPECT_TRUE(torch::equal(again, rho.probs()));
}

TEST(Distribution, SmoothedTargetsNormalize) {
  auto gen = seeded(6);
  auto ab = (torch::rand({2, 2, 3, 3}, gen, torch::kFloat64) - 0.5) * 0.6;
  auto rho = encode_targets(ImageBatch(ab, ColorSpace::kAb), gamut(), 5.0);
  EXPECT_LE((rho.probs().sum(1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_EQ((rho.probs() > 0).sum(1).max().item<int64_t>(), 5);
  EXPECT_THROW(encode_targets(ImageBatch(ab, ColorSpace::kAb), gamut(), -1.0), ContractError);
}

TEST(Distribution, KlClosedFormsAndOracle) {
  const int64_t K = 5;
  auto hot = colorloss::one_hot(torch::full({1, 2, 2}, 3, torch::kInt64), K);
  PixelDistribution flat(uniform(1, K, 2, 2));
  EXPECT_NEAR(scalar(kl_divergence(hot, flat)), std::log(5.0), 1e-12);
  EXPECT_NEAR(scalar(kl_divergence(flat, flat)), 0.0, 1e-15);
  EXPECT_NEAR(scalar(cross_entropy(hot, flat)), std::log(5.0), 1e-12);
  EXPECT_LE(scalar(cross_entropy(hot, hot)), 1e-9);

  auto gen = seeded(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = oracle::random_simplex(2, K, 3, 3, gen);
    auto q = oracle::random_simplex(2, K, 3, 3, gen);
    PixelDistribution rp(p), rq(q);
    const double kl = scalar(kl_divergence(rp, rq));
    EXPECT_NEAR(kl, oracle::kl(p, q), 1e-7);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(scalar(kl_divergence(rp, rp)), 0.0, 1e-8);
    EXPECT_NEAR(scalar(cross_entropy(rp, rq)), oracle::ce(p, q), 1e-7);
    EXPECT_NEAR(scalar(cross_entropy(rp, rq)) - scalar(entropy(rp)) - kl, 0.0, 1e-6);
  }
  EXPECT_THROW(kl_divergence(flat, PixelDistribution(uniform(1, 4, 2, 2))), ContractError);
}

TEST(Distribution, HueChromaLoss) {
  auto gen = seeded(8);
  auto pc = oracle::random_simplex(2, 6, 3, 3, gen), qc = oracle::random_simplex(2, 6, 3, 3, gen);
  auto ph = oracle::random_simplex(2, 9, 3, 3, gen), qh = oracle::random_simplex(2, 9, 3, 3, gen);
  PixelDistribution rc(pc), rqc(qc), rh(ph), rqh(qh);
  auto zero = torch::zeros({2, 3, 3}, torch::kFloat64);
  auto one = torch::ones({2, 3, 3}, torch::kFloat64);
  EXPECT_NEAR(scalar(hue_chroma_loss(rc, rqc, rh, rqh, zero)), scalar(kl_divergence(rc, rqc)), 1e-12);
  EXPECT_NEAR(scalar(hue_chroma_loss(rc, rc, rh, rh, one)), 0.0, 1e-12);
  EXPECT_NEAR(scalar(hue_chroma_loss(rc, rqc, rh, rqh, one, 5.0)),
              oracle::hue_chroma(pc, qc, ph, qh, one, 5.0), 1e-6);
  auto c = torch::rand({2, 3, 3}, gen, torch::kFloat64);
  EXPECT_NEAR(scalar(hue_chroma_loss(rc, rqc, rh, rqh, c, 5.0)), oracle::hue_chroma(pc, qc, ph, qh, c, 5.0), 1e-6);
  EXPECT_THROW(hue_chroma_loss(rc, rh, rh, rqh, one), ContractError);
}

TEST(Distribution, NllEqualsCrossEntropyOnOneHot) {
  const int64_t K = 7;
  auto targets = torch::tensor({0, 3, 6, 2}, torch::kInt64).view({1, 2, 2});
  EXPECT_NEAR(scalar(nll_loss(colorloss::one_hot(targets, K), targets)), 0.0, 1e-9);
  EXPECT_NEAR(scalar(nll_loss(PixelDistribution(uniform(1, K, 2, 2)), targets)), std::log(7.0), 1e-12);
  auto gen = seeded(9);
  auto q = oracle::random_simplex(1, K, 2, 2, gen);
  PixelDistribution rq(q);
  EXPECT_NEAR(scalar(nll_loss(rq, targets)), oracle::nll(q, targets), 1e-7);
  EXPECT_NEAR(scalar(nll_loss(rq, targets)), scalar(cross_entropy(colorloss::one_hot(targets, K), rq)), 1e-7);
  EXPECT_THROW(nll_loss(rq, torch::full({1, 2, 2}, 7, torch::kInt64)), ContractError);
  EXPECT_THROW(nll_loss(rq, torch::full({1, 2, 2}, -1, torch::kInt64)), ContractError);
}

TEST(Distribution, WeightedCrossEntropy) {
  const int64_t K = 4;
  auto gen = seeded(10);
  auto targets = torch::randint(0, K, {2, 3, 3}, gen, torch::kInt64);
  auto q = oracle::random_simplex(2, K, 3, 3, gen);
  auto hot = colorloss::one_hot(targets, K);
  PixelDistribution rq(q);
  EXPECT_NEAR(scalar(weighted_cross_entropy(hot, rq, torch::ones({K}, torch::kFloat64))),
              scalar(cross_entropy(hot, rq)), 1e-12);
  EXPECT_NEAR(scalar(weighted_cross_entropy(hot, rq, torch::full({K}, 2.0, torch::kFloat64))),
              2 * scalar(cross_entropy(hot, rq)), 1e-12);
  EXPECT_THROW(weighted_cross_entropy(hot, rq, torch::ones({K + 1})), ContractError);
}

TEST(Distribution, ExpectationDecode) {
  auto centers = torch::tensor({{0.1, 0.2}, {-0.3, 0.4}, {0.5, -0.6}}, torch::kFloat64);
  auto q = ColorQuantizer::from_centers(centers, 0.1);
  auto hot = colorloss::one_hot(torch::full({1, 1, 1}, 2, torch::kInt64), 3);
  auto ab = expectation_decode(hot, q).values().flatten();
  EXPECT_DOUBLE_EQ(ab[0].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(ab[1].item<double>(), -0.6);
  PixelDistribution half(torch::tensor({0.5, 0.5, 0.0}, torch::kFloat64).view({1, 3, 1, 1}));
  auto mid = expectation_decode(half, q).values().flatten();
  EXPECT_NEAR(mid[0].item<double>(), -0.1, 1e-12);
  EXPECT_NEAR(mid[1].item<double>(), 0.3, 1e-12);

  auto gen = seeded(11);
  auto p = oracle::random_simplex(2, 3, 2, 2, gen);
  auto got = expectation_decode(PixelDistribution(p), q).values();
  const auto vp = oracle::values(p);
  const auto vc = oracle::values(centers);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t ch = 0; ch < 2; ++ch)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w) {
          double expect = 0.0;
          for (int64_t k = 0; k < 3; ++k) {
            expect += vp[static_cast<size_t>(((n * 3 + k) * 2 + h) * 2 + w)] * vc[static_cast<size_t>(2 * k + ch)];
          }
          EXPECT_NEAR(got[n][ch][h][w].item<double>(), expect, 1e-6);
        }
}

TEST(Distribution, MedianDecode) {
  auto values = torch::arange(10, torch::kFloat64) * 0.1;
  auto hot = torch::zeros({1, 10, 1, 1}, torch::kFloat64);
  hot[0][4] = 1.0;
  EXPECT_DOUBLE_EQ(median_decode(hot, values).item<double>(), 0.4);
  auto tie = torch::zeros({1, 10, 1, 1}, torch::kFloat64);
  tie[0][2] = 0.5;
  tie[0][7] = 0.5;
  EXPECT_DOUBLE_EQ(median_decode(tie, values).item<double>(), 0.2);
  EXPECT_THROW(median_decode(torch::zeros({1, 10, 1, 1}, torch::kFloat64), values), ContractError);

  auto gen = seeded(12);
  auto hist = oracle::random_simplex(2, 10, 3, 3, gen);
  auto got = median_decode(hist, values);
  const auto vh = oracle::values(hist);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t h = 0; h < 3; ++h)
      for (int64_t w = 0; w < 3; ++w) {
        double cum = 0.0;
        int64_t k = 0;
        for (; k < 10; ++k) {
          cum += vh[static_cast<size_t>(((n * 10 + k) * 3 + h) * 3 + w)];
          if (cum >= 0.5) break;
        }
        EXPECT_NEAR(got[n][h][w].item<double>(), 0.1 * static_cast<double>(k), 1e-12);
      }
}
