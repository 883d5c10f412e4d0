#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "uvcamo/checkpoint.hpp"
#include "uvcamo/config.hpp"
#include "uvcamo/dataset.hpp"
#include "uvcamo/eval.hpp"
#include "uvcamo/external_detector.hpp"
#include "uvcamo/optimize.hpp"

namespace uvcamo {

// File layout of one pipeline run under out_dir.
struct RunLayout {
  std::filesystem::path root;

  explicit RunLayout(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path manifest() const { return dataset() / "manifest.json"; }
  std::filesystem::path efe() const { return root / "efe.json"; }
  std::filesystem::path detector() const { return root / "detector.json"; }
  std::filesystem::path camo() const { return root / "camo"; }
  std::filesystem::path texture() const { return camo() / "texture.png"; }
  std::filesystem::path trace() const { return camo() / "trace.json"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path report() const { return root / "report"; }
};

inline Mesh pipeline_mesh(const PipelineConfig& c) { return c.mesh.empty() ? procedural_car() : load_mesh(c.mesh); }

// Paint used for every reference photo; the EFE learns to relight it.
// Fog is gray, so a paint whose channels differ lets shading and fog be
// told apart per pixel; a white car would leave them confounded.
inline TextureMap reference_texture() { return TextureMap::solid(4, 4, 0.9, 0.5, 0.1); }

inline TextureMap benign_texture(const PipelineConfig& c) {
  return benign_car_texture(c.optimize.texture_height, c.optimize.texture_width);
}

inline TextureMap random_texture(const PipelineConfig& c) {
  std::mt19937_64 rng(mix_seed(c.seed, 99));
  return TextureMap::uniform_random(c.optimize.texture_height, c.optimize.texture_width, rng);
}

inline void check_scene(const PipelineConfig& c, const DatasetManifest& m) {
  if (!(m.scene == c.scene))
    throw ConfigError("scene settings differ from the dataset at " + m.root.string() + "; regenerate the dataset");
}

inline DatasetManifest stage_gen_dataset(const PipelineConfig& c, std::ostream* log = nullptr) {
  validate_config(c);
  RunLayout run(c.out_dir);
  const Mesh mesh = pipeline_mesh(c);
  auto m = generate_dataset(mesh, reference_texture(), c.dataset, c.scene, run.dataset(), {config_hash(c), c.seed});
  if (log)
    for (auto s : kAllSplits) *log << "  " << to_string(s) << ": " << m.count(s) << " samples\n";
  return m;
}

inline EfeTrainResult stage_train_efe(const PipelineConfig& c, std::ostream* log = nullptr) {
  validate_config(c);
  RunLayout run(c.out_dir);
  const Mesh mesh = pipeline_mesh(c);
  const auto man = read_manifest(run.manifest());
  check_scene(c, man);
  const auto train = make_efe_examples(mesh, load_samples(man, SplitTag::EfeTrain), c.scene);
  const auto test = make_efe_examples(mesh, load_samples(man, SplitTag::EfeTest), c.scene);
  auto res = train_efe(train, test, c.efe, [&](const EfeEpochLog& e) {
    if (log)
      *log << "  epoch " << e.epoch << " train " << e.train_loss << " test " << e.test.loss << " mae " << e.test.mae
           << '\n';
  });
  const auto& best = res.log[static_cast<std::size_t>(res.best_epoch - 1)];
  nlohmann::json mae_by_d = nlohmann::json::object();
  for (const auto& [d, v] : best.test.mae_by_distance) mae_by_d[detail::fmt(d)] = v;
  save_efe(res.net,
           {config_hash(c), c.efe.seed, man.seed,
            {{"best_epoch", res.best_epoch}, {"test_loss", best.test.loss}, {"test_mae", best.test.mae},
             {"test_mae_by_distance", mae_by_d}}},
           run.efe());
  return res;
}

inline DetectorTrainResult stage_train_detector(const PipelineConfig& c, std::ostream* log = nullptr) {
  validate_config(c);
  RunLayout run(c.out_dir);
  const Mesh mesh = pipeline_mesh(c);
  const auto man = read_manifest(run.manifest());
  check_scene(c, man);
  // The detector only ever sees the factory paint, like an off-the-shelf
  // model that has never met this camouflage.
  const auto train = make_detector_examples(mesh, benign_texture(c), load_samples(man, SplitTag::Texgen), c.scene);
  const auto held = make_detector_examples(mesh, benign_texture(c), load_samples(man, SplitTag::EvalSeen), c.scene);
  auto res = train_toy_detector(train, held, c.detector, [&](int epoch, double loss) {
    if (log) *log << "  epoch " << epoch << " loss " << loss << '\n';
  });
  save_detector(res.net, {config_hash(c), c.detector.seed, man.seed, {{"heldout_ap50", res.heldout_ap}}},
                run.detector());
  if (log) *log << "  held-out benign AP@0.5 " << res.heldout_ap << '\n';
  return res;
}

inline CamoResult stage_gen_camo(const PipelineConfig& c, std::ostream* log = nullptr) {
  validate_config(c);
  RunLayout run(c.out_dir);
  const Mesh mesh = pipeline_mesh(c);
  const auto man = read_manifest(run.manifest());
  check_scene(c, man);
  const EfeNet efe = load_efe(run.efe());
  const ToyDetector det = load_detector(run.detector());
  const auto samples = prepare_camo_samples(mesh, efe, load_samples(man, SplitTag::Texgen), c.scene);
  std::filesystem::create_directories(run.camo());
  const auto meta = artifact_metadata(c);
  auto res = generate_camouflage(
      samples, det, c.optimize,
      [&](int epoch, const TextureMap& t) {
        save_texture(t, (run.camo() / ("texture_epoch" + std::to_string(epoch) + ".png")).string(), meta);
      },
      [&](const TraceStep& s) {
        if (log && s.step % 16 == 0)
          *log << "  epoch " << s.epoch << " step " << s.step << " L_total " << s.l_total << " max H_d " << s.max_hd
               << '\n';
      });
  save_texture(res.texture, run.texture().string(), meta);
  res.trace.final_texture = run.texture().filename().string();
  auto j = to_json(res.trace);
  for (const auto& [k, v] : meta) j["meta"][k] = v;
  std::ofstream(run.trace()) << j.dump(1) << '\n';
  return res;
}

inline std::vector<std::string> eval_labels() { return {"benign", "random", "adversarial"}; }

inline TextureMap texture_for_label(const PipelineConfig& c, const std::string& label) {
  if (label == "benign") return benign_texture(c);
  if (label == "random") return random_texture(c);
  if (label == "adversarial") return load_texture(RunLayout(c.out_dir).texture().string());
  throw ConfigError("unknown texture label '" + label + "'");
}

// Evaluates benign, random and adversarial textures on the requested
// splits (eval-seen and eval-unseen by default) and stores the results.
inline std::vector<EvalResult> stage_evaluate(const PipelineConfig& c, std::vector<SplitTag> splits = {},
                                              std::ostream* log = nullptr) {
  validate_config(c);
  RunLayout run(c.out_dir);
  if (splits.empty()) splits = {SplitTag::EvalSeen, SplitTag::EvalUnseen};
  const Mesh mesh = pipeline_mesh(c);
  const auto man = read_manifest(run.manifest());
  check_scene(c, man);
  const ToyDetector det = load_detector(run.detector());
  std::optional<ExternalDetector> ext;
  if (!c.external_detector.empty()) ext.emplace(c.external_detector, run.eval() / "external_work");
  const DetectFn detect = ext ? DetectFn(std::cref(*ext)) : toy_detect_fn(det);
  std::filesystem::create_directories(run.eval());
  std::vector<EvalResult> out;
  for (auto split : splits) {
    const auto samples = load_samples(man, split);
    for (const auto& label : eval_labels()) {
      auto r = evaluate(detect, mesh, texture_for_label(c, label), samples, c.scene, label, to_string(split));
      save_eval_result(r, run.eval() / (label + "_" + to_string(split) + ".json"));
      if (log) *log << "  " << label << " " << to_string(split) << " AP@0.5 " << r.ap() << '\n';
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline ReportFiles stage_report(const PipelineConfig& c) {
  RunLayout run(c.out_dir);
  std::vector<TextureEvaluation> evals;
  for (const auto& label : eval_labels()) {
    TextureEvaluation e{label, load_eval_result(run.eval() / (label + "_eval-seen.json")), {}};
    const auto unseen = run.eval() / (label + "_eval-unseen.json");
    if (std::filesystem::exists(unseen)) e.unseen = load_eval_result(unseen);
    evals.push_back(std::move(e));
  }
  return emit_report(evals, run.report(), artifact_metadata(c));
}

}  // namespace uvcamo
