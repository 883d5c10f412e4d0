#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "uvcamo/eval.hpp"

using namespace uvcamo;
namespace fs = std::filesystem;

namespace {

ImageDetections with(const Box& gt, std::vector<std::pair<Box, double>> dets) {
  ImageDetections im{{}, gt};
  for (const auto& [b, conf] : dets) im.dets.push_back(b, 1.0, {conf, 0.0});
  return im;
}

// Box overlapping (0,0,10,10) at the requested IoU by shrinking its height.
Box at_iou(double v) { return {0, 0, 10, 10 * v}; }

EvalResult fake_result(const std::string& label, std::uint64_t seed, int n = 32) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  const double dist[] = {5, 10, 15, 20};
  const double fog[] = {0, 25};
  EvalResult r{label, "eval-seen", {}};
  for (int i = 0; i < n; ++i) {
    SampleEval s;
    s.id = "s" + std::to_string(i);
    s.pose = {45.0 * (i % 8), 22.5, dist[i % 4], {}};
    s.weather = {30, fog[i % 2]};
    s.gt = {10, 10, 30, 30};
    if (u(rng) < 0.7) s.dets.push_back({10 + u(rng) * 4, 10, 30, 30}, u(rng), {u(rng), 0});
    r.samples.push_back(s);
  }
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Ap, Examples) {
  const Box gt{0, 0, 10, 10};
  std::vector<ImageDetections> perfect{with(gt, {{at_iou(0.9), 0.8}}), with(gt, {{at_iou(0.6), 0.3}})};
  EXPECT_DOUBLE_EQ(ap_at_05(perfect), 1.0);
  std::vector<ImageDetections> none{with(gt, {}), with(gt, {})};
  EXPECT_EQ(ap_at_05(none), 0.0);
  std::vector<ImageDetections> half{with(gt, {{at_iou(0.6), 0.9}}), with(gt, {{at_iou(0.3), 0.8}})};
  EXPECT_DOUBLE_EQ(ap_at_05(half), 0.5);
  EXPECT_THROW(ap_at_05(std::vector<ImageDetections>{}), InvariantViolation);
}

TEST(Ap, DuplicateMatchesAreFalsePositives) {
  const Box gt{0, 0, 10, 10};
  // Ranked: tp (P 1, R .5), duplicate fp (P .5), tp (P 2/3, R 1).
  std::vector<ImageDetections> ims{with(gt, {{at_iou(0.9), 0.9}, {at_iou(0.8), 0.8}}), with(gt, {{at_iou(0.7), 0.7}})};
  EXPECT_NEAR(ap_at_05(ims), 0.5 * 1.0 + 0.5 * 2.0 / 3.0, 1e-15);
  // Without the duplicate the same detector is perfect.
  std::vector<ImageDetections> clean{with(gt, {{at_iou(0.9), 0.9}}), with(gt, {{at_iou(0.7), 0.7}})};
  EXPECT_DOUBLE_EQ(ap_at_05(clean), 1.0);
}

TEST(Ap, EqualsBruteForceOracleOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 50; ++t) {
    const auto inst = oracle::random_ap_instance(rng);
    const double ap = ap_at_05(inst);
    EXPECT_EQ(ap, oracle::brute_force_ap(inst)) << "instance " << t;
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
}

TEST(EvaluateImage, AppliesNmsBeforeMatching) {
  SceneSample s;
  s.id = "x";
  s.y = {0, 0, 10, 10};
  const DetectFn detect = [](const Image&) {
    DetectionSet d;
    d.push_back({0, 0, 10, 10}, 1.0, {0.9, 0});
    d.push_back({0, 0, 10, 9.5}, 1.0, {0.8, 0});  // suppressed
    d.push_back({30, 30, 40, 40}, 1.0, {0.01, 0});  // under the floor
    return d;
  };
  const auto e = evaluate_image(detect, Image(3, 4, 4), s);
  EXPECT_EQ(e.dets.size(), 1u);
  EXPECT_TRUE(e.matched);
}

TEST(Buckets, PartitionSamplesPerAxis) {
  const auto r = fake_result("benign", 1);
  const auto dist = bucketed_ap(r, "distance");
  ASSERT_EQ(dist.size(), 4u);
  EXPECT_EQ(dist[0].value, 5.0);
  EXPECT_EQ(dist[3].value, 20.0);
  for (auto axis : kAllAxes) {
    std::size_t total = 0;
    for (const auto& b : bucketed_ap(r, axis)) {
      total += b.count;
      EXPECT_GE(b.ap, 0.0);
      EXPECT_LE(b.ap, 1.0);
    }
    EXPECT_EQ(total, r.samples.size()) << to_string(axis);
  }
  EXPECT_EQ(bucketed_ap(r, EvalAxis::Azimuth).size(), 8u);
  EXPECT_THROW(bucketed_ap(r, "humidity"), ConfigError);
}

TEST(Buckets, AzimuthIsNormalized) {
  auto r = fake_result("benign", 2, 2);
  r.samples[0].pose.azimuth = -45;
  r.samples[1].pose.azimuth = 315;
  EXPECT_EQ(bucketed_ap(r, EvalAxis::Azimuth).size(), 1u);
}

TEST(EvalResultFile, RoundTrip) {
  const auto dir = fs::temp_directory_path() / "uvcamo_test_eval_rt";
  fs::create_directories(dir);
  const auto r = fake_result("adversarial", 3);
  save_eval_result(r, dir / "r.json");
  const auto back = load_eval_result(dir / "r.json");
  EXPECT_EQ(back.label, r.label);
  ASSERT_EQ(back.samples.size(), r.samples.size());
  EXPECT_EQ(back.ap(), r.ap());
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].dets.boxes, r.samples[i].dets.boxes);
    EXPECT_EQ(back.samples[i].pose, r.samples[i].pose);
  }
  std::ofstream(dir / "bad.json") << "{\"label\": 3}";
  EXPECT_THROW(load_eval_result(dir / "bad.json"), InvariantViolation);
  EXPECT_THROW(load_eval_result(dir / "missing.json"), IoError);
}

TEST(Report, TableShapeAndDeterminism) {
  std::vector<TextureEvaluation> evals;
  int k = 0;
  for (const char* label : {"benign", "random", "adversarial"}) {
    auto unseen = fake_result(label, 100 + k, 12);
    unseen.split = "eval-unseen";
    evals.push_back({label, fake_result(label, 10 + k, 32), unseen});
    ++k;
  }
  const auto a = fs::temp_directory_path() / "uvcamo_test_report_a";
  const auto b = fs::temp_directory_path() / "uvcamo_test_report_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto fa = emit_report(evals, a, {{"seed", "1"}});
  emit_report(evals, b, {{"seed", "1"}});

  const auto summary = nlohmann::json::parse(slurp(fa.summary));
  ASSERT_EQ(summary["ap50"].size(), 3u);
  for (const auto& row : summary["ap50"]) {
    EXPECT_TRUE(row.contains("seen"));
    EXPECT_TRUE(row.contains("unseen"));
  }
  EXPECT_EQ(summary["ap50"][2]["texture"], "adversarial");
  EXPECT_EQ(summary["ap50"][0]["seen"].get<double>(), evals[0].seen.ap());
  EXPECT_EQ(fa.curves.size(), 10u);
  EXPECT_EQ(fa.plots.size(), 10u);

  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
}

TEST(Report, MismatchedSampleSetsAreError) {
  std::vector<TextureEvaluation> evals{{"benign", fake_result("benign", 1, 8), {}},
                                       {"random", fake_result("random", 2, 7), {}}};
  EXPECT_THROW(emit_report(evals, fs::temp_directory_path() / "uvcamo_test_report_bad"), InvariantViolation);
  evals[1].seen = fake_result("random", 2, 8);
  evals[1].seen.samples[3].id = "other";
  EXPECT_THROW(emit_report(evals, fs::temp_directory_path() / "uvcamo_test_report_bad"), InvariantViolation);
  EXPECT_THROW(emit_report({}, fs::temp_directory_path() / "uvcamo_test_report_bad"), InvariantViolation);
}
