#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uvcamo/dataset.hpp"
#include "uvcamo/detect.hpp"
#include "uvcamo/efe.hpp"
#include "uvcamo/raster.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

// i_out = x_ren * (1 - m) + b.
inline Image composite(const Image& x_ren, const Image& b, const Mask& m) {
  require_same_shape(x_ren, b, "composite x_ren/b");
  require_same_plane(x_ren, m, "composite x_ren/m");
  Image out(x_ren.channels(), x_ren.height(), x_ren.width());
  const std::size_t plane = x_ren.plane();
  for (int c = 0; c < x_ren.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (m[p] > 1) throw InvariantViolation("composite mask is not binary");
      const std::size_t i = c * plane + p;
      out[i] = x_ren[i] * (1.0 - m[p]) + b[i];
    }
  return out;
}

enum class AttackLossKind { AllBoxes, CenterCell };

inline std::string to_string(AttackLossKind k) { return k == AttackLossKind::AllBoxes ? "all-boxes" : "center-cell"; }

inline AttackLossKind attack_loss_kind_from_string(const std::string& s) {
  if (s == "all-boxes") return AttackLossKind::AllBoxes;
  if (s == "center-cell") return AttackLossKind::CenterCell;
  throw ConfigError("unknown attack loss '" + s + "' (expected all-boxes or center-cell)");
}

struct OptimizeConfig {
  double learning_rate = 0.01;
  int epochs = 5;
  int batch_size = 8;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::uint64_t seed = 0;
  int texture_height = 32;
  int texture_width = 32;
  AttackLossKind loss = AttackLossKind::AllBoxes;
  int checkpoint_every_epochs = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("optimize.learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("optimize.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("optimize.batch_size must be >= 1");
    if (alpha < 0 || beta < 0) throw ConfigError("optimize.alpha and optimize.beta must be >= 0");
    if (texture_height < 1 || texture_width < 1) throw ConfigError("optimize texture size must be positive");
    if (checkpoint_every_epochs < 0) throw ConfigError("optimize.checkpoint_every_epochs must be >= 0");
  }
};

struct TraceStep {
  int epoch = 0;
  int step = 0;
  double l_atk = 0.0;
  double l_sm = 0.0;
  double l_total = 0.0;
  double max_hd = 0.0;
};

struct OptimizeTrace {
  std::vector<TraceStep> steps;
  std::string final_texture;  // path of the written texture, when persisted
};

inline nlohmann::json to_json(const OptimizeTrace& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps)
    steps.push_back({{"epoch", s.epoch},
                     {"step", s.step},
                     {"l_atk", s.l_atk},
                     {"l_sm", s.l_sm},
                     {"l_total", s.l_total},
                     {"max_hd", s.max_hd}});
  return {{"steps", steps}, {"final_texture", t.final_texture}};
}

// Everything about one texgen sample that does not depend on the texture.
// The EFE maps depend only on x_ref, so they are computed once.
struct CamoSample {
  std::string id;
  Fragments fragments;
  Mask silhouette;
  Mask m;
  Image b;
  EnvFeatureMaps ef;
  Box gt;
};

inline CamoSample prepare_camo_sample(const Mesh& mesh, const EfeNet& efe, const SceneSample& s,
                                      const SceneSettings& scene) {
  const auto fg = split_fg_bg(s.i_in, s.m);
  CamoSample c{s.id, rasterize_fragments(mesh, s.pose, scene.image_size, scene.fov_deg), {}, s.m, fg.b,
               efe.forward(fg.x_ref), s.y};
  c.silhouette = silhouette_of(c.fragments);
  return c;
}

inline std::vector<CamoSample> prepare_camo_samples(const Mesh& mesh, const EfeNet& efe,
                                                    std::span<const SceneSample> samples, const SceneSettings& scene) {
  std::vector<CamoSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare_camo_sample(mesh, efe, s, scene));
  return out;
}

struct SampleLoss {
  double l_atk = 0.0;
  double l_sm = 0.0;
  double l_total = 0.0;
  double max_hd = 0.0;
  Image grad;  // dL_total/dT, same shape as the texels
};

// Forward through render -> fuse -> composite -> detector -> L_total for
// one sample and backpropagate to the texture. Neither network is touched.
inline SampleLoss camo_sample_loss(const TextureMap& texture, const CamoSample& s, const ToyDetector& det,
                                   const OptimizeConfig& cfg, bool want_grad = true) {
  const Image x_nr = shade(s.fragments, texture);
  const Image x_ren = fuse(x_nr, s.ef, s.silhouette);
  const Image i_out = composite(x_ren, s.b, s.m);
  DetectorTape tape;
  const Image raw = det.forward_raw(i_out, want_grad ? &tape : nullptr);
  const DetectionSet dets = det.decode(raw);
  const auto& a = det.architecture();
  const LossWithGrad atk = cfg.loss == AttackLossKind::AllBoxes
                               ? attack_loss_with_grad(dets, s.gt, cfg.alpha)
                               : center_cell_attack_loss_with_grad(dets, s.gt, a.grid, a.height, a.width, cfg.alpha);
  SampleLoss out;
  out.l_atk = atk.value;
  out.max_hd = atk.max_score;
  out.l_sm = smooth_loss(x_ren);
  out.l_total = total_loss(out.l_atk, out.l_sm, cfg.alpha, cfg.beta);
  if (!want_grad) return out;

  Image d_ren = smooth_loss_gradient(x_ren, cfg.beta);
  const Image d_raw = det.raw_gradient(raw, atk.grad);
  const Image d_out = det.backward(tape, d_raw, {}, true);
  const std::size_t plane = d_ren.plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (!s.m[p]) d_ren[c * plane + p] += d_out[c * plane + p];
  const auto fg = fuse_backward(x_nr, s.ef, s.silhouette, d_ren);
  out.grad = texture_gradient(s.fragments, texture.height(), texture.width(), fg.d_x_nr);
  return out;
}

struct CamoResult {
  TextureMap texture;
  OptimizeTrace trace;
};

// Adam over the texels with a clamp to [0,1] after every step. Batch
// losses and gradients are means over the batch. on_epoch(epoch, texture)
// fires at the configured checkpoint cadence.
inline CamoResult generate_camouflage(std::span<const CamoSample> samples, const ToyDetector& det,
                                      const OptimizeConfig& cfg,
                                      const std::function<void(int, const TextureMap&)>& on_epoch = {},
                                      const std::function<void(const TraceStep&)>& on_step = {}) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("texgen split is empty");
  std::mt19937_64 rng(cfg.seed);
  CamoResult res{TextureMap::uniform_random(cfg.texture_height, cfg.texture_width, rng), {}};
  nn::Adam adam(res.texture.texels.size(), cfg.learning_rate);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5417));
  Image grad(3, cfg.texture_height, cfg.texture_width);
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(stop - start);
      grad.fill(0.0);
      TraceStep ts{epoch, ++step, 0, 0, 0, 0};
      for (std::size_t i = start; i < stop; ++i) {
        const auto& s = samples[order[i]];
        const SampleLoss sl = camo_sample_loss(res.texture, s, det, cfg);
        if (!std::isfinite(sl.l_total))
          throw TrainingFailure("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                " on sample " + s.id + " (L_atk=" + std::to_string(sl.l_atk) +
                                ", L_sm=" + std::to_string(sl.l_sm) + ")");
        ts.l_atk += sl.l_atk * inv;
        ts.l_sm += sl.l_sm * inv;
        ts.l_total += sl.l_total * inv;
        ts.max_hd += sl.max_hd * inv;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += sl.grad[k] * inv;
      }
      adam.step(res.texture.texels.values(), grad.values());
      res.texture.clamp01();
      res.trace.steps.push_back(ts);
      if (on_step) on_step(ts);
    }
    if (on_epoch && cfg.checkpoint_every_epochs > 0 && epoch % cfg.checkpoint_every_epochs == 0)
      on_epoch(epoch, res.texture);
  }
  return res;
}

}  // namespace uvcamo
