#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "uvcamo/optimize.hpp"

using namespace uvcamo;

namespace {

Image random_image(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, h, w);
  for (auto& v : img) v = u(rng);
  return img;
}

// A texgen-like sample at 32x32 built without a dataset on disk.
CamoSample micro_sample(const Mesh& mesh, const EfeNet& efe, const CameraPose& pose, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CamoSample s;
  s.id = "micro-" + std::to_string(seed);
  s.fragments = rasterize_fragments(mesh, pose, {32, 32});
  s.silhouette = silhouette_of(s.fragments);
  s.m = Mask(1, 32, 32);
  for (std::size_t p = 0; p < s.m.size(); ++p) s.m[p] = 1 - s.silhouette[p];
  const Image scene = random_image(rng, 3, 32, 32, 0.2, 0.8);
  const auto fb = split_fg_bg(scene, s.m);
  s.b = fb.b;
  s.ef = efe.forward(fb.x_ref);
  s.gt = gt_box_from_mask(s.m);
  return s;
}

struct Micro {
  Mesh mesh = procedural_car();
  EfeNet efe{EfeArchitecture{32, 32, 4, 4, 4}, 21};
  ToyDetector det{DetectorArchitecture{32, 32, 8, 4}, 22};
  std::vector<CamoSample> samples;

  explicit Micro(int n) {
    const double az[] = {0, 45, 90, 135, 180, 225, 270, 315};
    for (int i = 0; i < n; ++i) samples.push_back(micro_sample(mesh, efe, {az[i % 8], 22.5, 5.0, {}}, 100 + i));
  }
};

OptimizeConfig micro_config() {
  OptimizeConfig c;
  c.texture_height = 8;
  c.texture_width = 8;
  c.epochs = 2;
  c.batch_size = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Composite, Examples) {
  std::mt19937_64 rng(1);
  const Image b = random_image(rng, 3, 4, 5);
  Mask m(1, 4, 5);
  for (auto& v : m) v = rng() % 2;
  EXPECT_EQ(composite(Image(3, 4, 5, 0.0), b, m), b);
  const Image x = random_image(rng, 3, 4, 5);
  EXPECT_EQ(composite(x, Image(3, 4, 5, 0.0), Mask(1, 4, 5, 0)), x);
  EXPECT_EQ(composite(x, b, Mask(1, 4, 5, 1)), b);
  EXPECT_THROW(composite(x, Image(3, 4, 4), m), ShapeMismatch);
  EXPECT_THROW(composite(x, b, Mask(1, 5, 4)), ShapeMismatch);
  m[0] = 3;
  EXPECT_THROW(composite(x, b, m), InvariantViolation);
}

TEST(OptimizeConfig, Validation) {
  EXPECT_NO_THROW(OptimizeConfig{}.validate());
  EXPECT_EQ(OptimizeConfig{}.learning_rate, 0.01);
  EXPECT_EQ(OptimizeConfig{}.epochs, 5);
  OptimizeConfig c;
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(attack_loss_kind_from_string("nearest"), ConfigError);
  EXPECT_EQ(attack_loss_kind_from_string(to_string(AttackLossKind::CenterCell)), AttackLossKind::CenterCell);
}

TEST(GenerateCamouflage, EmptyTexgenIsError) {
  const Micro mc(0);
  EXPECT_THROW(generate_camouflage({}, mc.det, micro_config()), ConfigError);
}

TEST(GenerateCamouflage, NetworksFrozenTexelsBoxedTraceOrdered) {
  Micro mc(4);
  const std::vector<double> det_before(mc.det.params().begin(), mc.det.params().end());
  const std::vector<double> efe_before(mc.efe.params().begin(), mc.efe.params().end());
  int checks = 0;
  const auto res = generate_camouflage(mc.samples, mc.det, micro_config(), {}, [&](const TraceStep&) { ++checks; });
  EXPECT_EQ(std::vector<double>(mc.det.params().begin(), mc.det.params().end()), det_before);
  EXPECT_EQ(std::vector<double>(mc.efe.params().begin(), mc.efe.params().end()), efe_before);
  EXPECT_EQ(res.texture.height(), 8);
  for (double v : res.texture.texels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  ASSERT_EQ(res.trace.steps.size(), 4u);
  EXPECT_EQ(checks, 4);
  for (std::size_t i = 0; i < res.trace.steps.size(); ++i) {
    const auto& s = res.trace.steps[i];
    EXPECT_EQ(s.step, static_cast<int>(i) + 1);
    EXPECT_EQ(s.epoch, static_cast<int>(i) / 2 + 1);
    EXPECT_TRUE(std::isfinite(s.l_total));
    EXPECT_NEAR(s.l_total, total_loss(s.l_atk, s.l_sm), 1e-12);
  }
}

TEST(GenerateCamouflage, TexelsStayBoxedEveryStepUnderLargeSteps) {
  Micro mc(2);
  auto cfg = micro_config();
  cfg.learning_rate = 0.5;
  cfg.checkpoint_every_epochs = 1;
  cfg.epochs = 4;
  int seen = 0;
  generate_camouflage(mc.samples, mc.det, cfg, [&](int, const TextureMap& t) {
    ++seen;
    for (double v : t.texels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  });
  EXPECT_EQ(seen, 4);
}

TEST(GenerateCamouflage, SameSeedIsBitIdentical) {
  Micro mc(4);
  const auto a = generate_camouflage(mc.samples, mc.det, micro_config());
  const auto b = generate_camouflage(mc.samples, mc.det, micro_config());
  EXPECT_EQ(a.texture.texels, b.texture.texels);
  auto other = micro_config();
  other.seed = 6;
  EXPECT_NE(generate_camouflage(mc.samples, mc.det, other).texture.texels, a.texture.texels);
}

TEST(GenerateCamouflage, RandomInitFromSeed) {
  Micro mc(1);
  auto cfg = micro_config();
  cfg.learning_rate = 1e-12;
  cfg.epochs = 1;
  const auto res = generate_camouflage(mc.samples, mc.det, cfg);
  std::mt19937_64 rng(cfg.seed);
  const auto init = TextureMap::uniform_random(8, 8, rng);
  for (std::size_t i = 0; i < init.texels.size(); ++i) EXPECT_NEAR(res.texture.texels[i], init.texels[i], 1e-9);
}

TEST(GenerateCamouflage, SmoothnessTermLowersSmoothLoss) {
  Micro mc(4);
  auto cfg = micro_config();
  cfg.epochs = 5;
  auto final_sm = [&](double beta) {
    cfg.beta = beta;
    const auto res = generate_camouflage(mc.samples, mc.det, cfg);
    double sm = 0;
    for (const auto& s : mc.samples) sm += camo_sample_loss(res.texture, s, mc.det, cfg, false).l_sm;
    return sm;
  };
  EXPECT_LT(final_sm(1e-4), final_sm(0.0));
}

TEST(GenerateCamouflage, PureSmoothingDescends) {
  Micro mc(1);
  auto cfg = micro_config();
  cfg.alpha = 0;
  cfg.beta = 1e-4;
  cfg.batch_size = 1;
  cfg.epochs = 51;
  const auto res = generate_camouflage(mc.samples, mc.det, cfg);
  for (int i = 1; i <= 50; ++i) EXPECT_LT(res.trace.steps[i].l_sm, res.trace.steps[i - 1].l_sm) << "step " << i;
}

TEST(GenerateCamouflage, NonFiniteLossNamesTheSample) {
  Micro mc(2);
  mc.samples[1].b[0] = std::nan("");
  mc.samples[1].m[0] = 1;
  try {
    generate_camouflage(mc.samples, mc.det, micro_config());
    FAIL() << "expected TrainingFailure";
  } catch (const TrainingFailure& e) {
    EXPECT_NE(std::string(e.what()).find(mc.samples[1].id), std::string::npos) << e.what();
  }
}

TEST(GenerateCamouflage, EndToEndGradientMatchesFiniteDifferences) {
  for (const auto kind : {AttackLossKind::AllBoxes, AttackLossKind::CenterCell}) {
    Micro mc(1);
    const auto& s = mc.samples[0];
    auto cfg = micro_config();
    cfg.loss = kind;
    cfg.beta = 0.01;  // large enough that both terms show up in the check
    std::mt19937_64 rng(31);
    TextureMap tex = TextureMap::uniform_random(8, 8, rng);
    for (auto& v : tex.texels) v = 0.2 + 0.6 * v;
    const auto sl = camo_sample_loss(tex, s, mc.det, cfg);
    ASSERT_GT(sl.max_hd, 0.0);

    // Texels that reach a pixel where the fuse clamp is active have a
    // one-sided derivative and are left out.
    const Image x_nr = shade(s.fragments, tex);
    Image saturated(3, 32, 32, 0.0);
    for (std::size_t i = 0; i < x_nr.size(); ++i) {
      const double v = x_nr[i] * s.ef.mul[i] + s.ef.add[i];
      if (s.silhouette[i % x_nr.plane()] && (v <= 0.0 || v >= 1.0)) saturated[i] = 1.0;
    }
    const Image touched = texture_gradient(s.fragments, 8, 8, saturated);

    std::vector<double> a, n;
    for (std::size_t k = 0; k < tex.texels.size(); ++k) {
      if (touched[k] != 0.0) continue;
      a.push_back(sl.grad[k]);
      n.push_back(oracle::central_diff([&] { return camo_sample_loss(tex, s, mc.det, cfg, false).l_total; },
                                       tex.texels[k], 1e-6));
    }
    ASSERT_GT(a.size(), 20u);
    double mag = 0;
    for (double v : a) mag = std::max(mag, std::abs(v));
    EXPECT_GT(mag, 0.0);
    EXPECT_LT(oracle::rel_err(a, n), 1e-2) << to_string(kind);
  }
}

TEST(OptimizeTrace, JsonCarriesEveryStep) {
  OptimizeTrace t;
  t.steps.push_back({1, 1, 0.5, 10, 0.501, 0.4});
  t.final_texture = "tex.png";
  const auto j = to_json(t);
  EXPECT_EQ(j["steps"].size(), 1u);
  EXPECT_EQ(j["steps"][0]["max_hd"].get<double>(), 0.4);
  EXPECT_EQ(j["final_texture"], "tex.png");
}
