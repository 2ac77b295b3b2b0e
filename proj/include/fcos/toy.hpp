#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/evaluation.hpp"
#include "fcos/inference.hpp"
#include "fcos/losses.hpp"
#include "fcos/random.hpp"

namespace fcos {

// Stride-normalized regression targets keep the log-distance features within
// a couple of units of zero, which keeps plain gradient descent stable.
inline FpnConfig toy_default_fpn() {
  FpnConfig f = FpnConfig::coco_default();
  f.normalize_targets = true;
  return f;
}

// Synthetic end-to-end exercise: scenes whose per-location features encode
// the ideal targets linearly, trained with full-batch gradient descent
// through the real loss, decode and NMS stages. Regression features are
// corrupted in proportion to off-centerness so the centerness branch has a
// measurable ranking effect.
struct ToyConfig {
  int image_size = 640;
  int num_scenes = 4;
  int num_classes = 3;
  int feature_dim = 32;
  int epochs = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
  double regression_noise = 0.6;
  FpnConfig fpn = toy_default_fpn();
  LossOptions loss;

  void validate() const {
    fpn.validate();
    loss.focal.validate();
    if (image_size < 64)
      throw ValidationError("toy: image_size must be >= 64");
    if (num_scenes < 1) throw ValidationError("toy: num_scenes must be >= 1");
    if (num_classes < 1)
      throw ValidationError("toy: num_classes must be >= 1");
    if (feature_dim < num_classes + 6)
      throw ValidationError("toy: feature_dim must be >= num_classes + 6");
    if (epochs < 1) throw ValidationError("toy: epochs must be >= 1");
    if (learning_rate < 0.0)
      throw ValidationError("toy: learning_rate must be >= 0");
    if (regression_noise < 0.0)
      throw ValidationError("toy: regression_noise must be >= 0");
  }
};

// Boxes cycle through small / medium / large side buckets so every pyramid
// level receives positives at the default ranges.
inline ImageSample generate_scene(Rng& rng, const ToyConfig& cfg,
                                  int image_id) {
  ImageSample s;
  s.id = image_id;
  s.width = cfg.image_size;
  s.height = cfg.image_size;
  const double lim = cfg.image_size;
  struct Bucket {
    double lo, hi;
  };
  const Bucket buckets[] = {{40.0, 100.0}, {160.0, 380.0}, {530.0, 620.0}};
  for (int k = 0; k < 3; ++k) {
    const Bucket& b = buckets[k % 3];
    const double side = rng.uniform(b.lo, std::min(b.hi, lim - 4.0));
    const double other = side * rng.uniform(0.6, 1.0);
    const double w = k % 2 == 0 ? side : other;
    const double h = k % 2 == 0 ? other : side;
    const double x0 = rng.uniform(0.0, lim - w);
    const double y0 = rng.uniform(0.0, lim - h);
    LabeledBox gt;
    gt.box = {x0, y0, x0 + w, y0 + h};
    gt.class_id = rng.uniform_int(1, cfg.num_classes);
    gt.annotation_index = k;
    s.gts.push_back(gt);
  }
  return s;
}

// Feature layout: bias, one-hot class, log side distances, centerness logit,
// hash noise in the remaining dimensions. Background locations carry bias,
// noise and the clamped logit of their zero centerness. The log-distance
// features of off-center positives are perturbed by
// regression_noise * (1 - centerness).
inline std::vector<double> location_features(const LocationTarget& t,
                                             int image_id,
                                             const ToyConfig& cfg) {
  std::vector<double> f(static_cast<std::size_t>(cfg.feature_dim), 0.0);
  f[0] = 1.0;
  const std::uint64_t cell =
      (static_cast<std::uint64_t>(t.grid_y) << 20) ^
      static_cast<std::uint64_t>(t.grid_x);
  const std::uint64_t img =
      (static_cast<std::uint64_t>(image_id) << 8) ^
      static_cast<std::uint64_t>(t.level_index);
  const int C = cfg.num_classes;
  if (t.class_label > 0) {
    f[static_cast<std::size_t>(t.class_label)] = 1.0;
    const double reg[4] = {t.regression.l, t.regression.t, t.regression.r,
                           t.regression.b};
    for (int k = 0; k < 4; ++k)
      f[static_cast<std::size_t>(1 + C + k)] =
          std::log(std::max(reg[k], 1e-6)) +
          cfg.regression_noise * (1.0 - t.centerness) *
              hash_noise(img, cell, 100 + static_cast<std::uint64_t>(k), 7);
  }
  const double ctr =
      std::clamp(t.class_label > 0 ? t.centerness : 0.0, 1e-3, 1.0 - 1e-3);
  f[static_cast<std::size_t>(1 + C + 4)] = std::log(ctr / (1.0 - ctr));
  for (int d = C + 6; d < cfg.feature_dim; ++d)
    f[static_cast<std::size_t>(d)] =
        hash_noise(img, cell, 200, static_cast<std::uint64_t>(d));
  return f;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Independent linear heads over the location features, plus one regression
// scale per pyramid level. Each branch reads only the bias, its own feature
// block and the shared noise dims, mirroring separate per-branch towers;
// weights outside a branch's mask stay pinned at zero.
struct LinearHead {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> w_cls;    // num_classes x feature_dim
  std::vector<double> w_reg;    // 4 x feature_dim
  std::vector<double> w_ctr;    // feature_dim
  std::vector<double> scales;   // one per level

  bool cls_uses(int d) const {
    return d == 0 || (d >= 1 && d <= num_classes) || d >= num_classes + 6;
  }
  bool reg_uses(int d) const {
    return d == 0 || (d > num_classes && d < num_classes + 5) ||
           d >= num_classes + 6;
  }
  bool ctr_uses(int d) const {
    return d == 0 || d == num_classes + 5 || d >= num_classes + 6;
  }

  static LinearHead init(const ToyConfig& cfg, Rng& rng) {
    LinearHead h;
    h.num_classes = cfg.num_classes;
    h.feature_dim = cfg.feature_dim;
    const auto rand_init = [&rng](std::vector<double>& w, std::size_t n) {
      w.resize(n);
      for (double& v : w) v = rng.uniform(-0.01, 0.01);
    };
    rand_init(h.w_cls, static_cast<std::size_t>(cfg.num_classes) *
                           cfg.feature_dim);
    rand_init(h.w_reg, 4u * static_cast<std::size_t>(cfg.feature_dim));
    rand_init(h.w_ctr, static_cast<std::size_t>(cfg.feature_dim));
    for (int c = 0; c < cfg.num_classes; ++c)
      for (int d = 0; d < cfg.feature_dim; ++d)
        if (!h.cls_uses(d))
          h.w_cls[static_cast<std::size_t>(c) * cfg.feature_dim + d] = 0.0;
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d < cfg.feature_dim; ++d)
        if (!h.reg_uses(d))
          h.w_reg[static_cast<std::size_t>(k) * cfg.feature_dim + d] = 0.0;
    for (int d = 0; d < cfg.feature_dim; ++d)
      if (!h.ctr_uses(d)) h.w_ctr[static_cast<std::size_t>(d)] = 0.0;
    h.scales.assign(cfg.fpn.effective().levels.size(), 1.0);
    return h;
  }

  double dot(const double* w, std::span<const double> f) const {
    double s = 0.0;
    for (int d = 0; d < feature_dim; ++d) s += w[d] * f[static_cast<std::size_t>(d)];
    return s;
  }

  struct Cache {
    std::array<double, 4> u{0.0, 0.0, 0.0, 0.0};
    std::array<bool, 4> clamped{false, false, false, false};
  };

  LocationPrediction forward(std::span<const double> f, int level,
                             Cache* cache = nullptr) const {
    LocationPrediction p;
    p.class_probs.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
      p.class_probs[static_cast<std::size_t>(c)] =
          sigmoid(dot(&w_cls[static_cast<std::size_t>(c) * feature_dim], f));
    double d[4];
    for (int k = 0; k < 4; ++k) {
      const double u = dot(&w_reg[static_cast<std::size_t>(k) * feature_dim], f);
      const double e = scales[static_cast<std::size_t>(level)] * u;
      const bool clamped = e >= kExpClamp;
      d[k] = std::exp(clamped ? kExpClamp : e);
      if (cache) {
        cache->u[static_cast<std::size_t>(k)] = u;
        cache->clamped[static_cast<std::size_t>(k)] = clamped;
      }
    }
    p.regression = {d[0], d[1], d[2], d[3]};
    p.centerness = sigmoid(dot(w_ctr.data(), f));
    return p;
  }
};

struct GradCheckSummary {
  int points = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Rank correlations between candidate score and candidate IoU, without
// (before) and with (after) the predicted centerness multiplied in.
struct FusionEffect {
  double before = 0.0;
  double after = 0.0;
};

struct TrainReport {
  std::vector<LossReport> series;  // loss measured before each update
  double mean_best_iou = 0.0;
  double spearman_fused = 0.0;    // on held-out scenes
  double spearman_unfused = 0.0;  // on held-out scenes
  GradCheckSummary grad_check;
  long long num_positives = 0;
  int total_detections = 0;
};

// Fractional ranks with tie averaging.
inline std::vector<double> fractional_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v[a] < v[b];
  });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation; 0 when either side has no variance.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ValidationError("spearman: size mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

// Trailing moving average, window clipped at the series start.
inline std::vector<double> trailing_mean(std::span<const double> v,
                                         int window) {
  if (window < 1) throw ValidationError("trailing_mean: window must be >= 1");
  std::vector<double> out(v.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window))
      acc -= v[i - static_cast<std::size_t>(window)];
    const std::size_t n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

// Whether the smoothed series is non-increasing from start_index on
// (tolerance 1e-9 for numerically flat steps). The default window absorbs
// the small bounded oscillation a constant-step optimizer shows around its
// plateau while still rejecting any genuine upward trend.
inline bool smoothed_monotone_decreasing(std::span<const double> v,
                                         std::size_t start_index,
                                         int window = 30) {
  const auto sm = trailing_mean(v, window);
  for (std::size_t i = start_index + 1; i < sm.size(); ++i)
    if (sm[i] > sm[i - 1] + 1e-9) return false;
  return true;
}

// Loss and full analytic parameter gradients of the head over one batch of
// locations. Gradients are reported for every coordinate, including those a
// branch mask pins to zero during updates.
struct HeadGradients {
  std::vector<double> w_cls;
  std::vector<double> w_reg;
  std::vector<double> w_ctr;
  std::vector<double> scales;
  LossReport report;
};

inline HeadGradients head_gradients(
    const LinearHead& head, std::span<const LocationTarget> targets,
    std::span<const std::vector<double>> features, const LossOptions& opts) {
  if (targets.size() != features.size())
    throw ValidationError("head_gradients: targets/features size mismatch");
  const std::size_t n = targets.size();
  const int D = head.feature_dim;
  const int C = head.num_classes;

  std::vector<LocationPrediction> preds(n);
  std::vector<LinearHead::Cache> caches(n);
  for (std::size_t i = 0; i < n; ++i)
    preds[i] = head.forward(features[i], targets[i].level_index, &caches[i]);
  std::vector<LocationGradients> grads;
  HeadGradients out;
  out.report = total_loss(preds, targets, opts, &grads);
  out.w_cls.assign(head.w_cls.size(), 0.0);
  out.w_reg.assign(head.w_reg.size(), 0.0);
  out.w_ctr.assign(head.w_ctr.size(), 0.0);
  out.scales.assign(head.scales.size(), 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = features[i];
    const auto& g = grads[i];
    const auto& pred = preds[i];
    for (int c = 0; c < C; ++c) {
      const double p = pred.class_probs[static_cast<std::size_t>(c)];
      const double gz = g.class_probs[static_cast<std::size_t>(c)] * p * (1.0 - p);
      if (gz == 0.0) continue;
      double* row = &out.w_cls[static_cast<std::size_t>(c) * D];
      for (int d = 0; d < D; ++d) row[d] += gz * f[static_cast<std::size_t>(d)];
    }
    if (targets[i].class_label > 0) {
      const int level = targets[i].level_index;
      const double s = head.scales[static_cast<std::size_t>(level)];
      const double dvals[4] = {pred.regression.l, pred.regression.t,
                               pred.regression.r, pred.regression.b};
      for (int k = 0; k < 4; ++k) {
        const double gd = g.regression[static_cast<std::size_t>(k)];
        if (gd == 0.0 || caches[i].clamped[static_cast<std::size_t>(k)]) continue;
        const double gu = gd * dvals[k] * s;
        out.scales[static_cast<std::size_t>(level)] +=
            gd * dvals[k] * caches[i].u[static_cast<std::size_t>(k)];
        double* row = &out.w_reg[static_cast<std::size_t>(k) * D];
        for (int d = 0; d < D; ++d) row[d] += gu * f[static_cast<std::size_t>(d)];
      }
      const double pc = pred.centerness;
      const double gz = g.centerness * pc * (1.0 - pc);
      if (gz != 0.0)
        for (int d = 0; d < D; ++d)
          out.w_ctr[static_cast<std::size_t>(d)] += gz * f[static_cast<std::size_t>(d)];
    }
  }
  return out;
}

// Forward one scene into per-level grids ready for the decoder. The learned
// per-level scale is folded into the raw regression values.
inline std::vector<LevelPredictions> forward_scene(
    const LinearHead& head, const ImageSample& scene,
    std::span<const LocationTarget> targets,
    std::span<const std::vector<double>> features, const FpnConfig& eff) {
  std::vector<LevelPredictions> levels(eff.levels.size());
  for (std::size_t li = 0; li < eff.levels.size(); ++li) {
    levels[li].level_index = static_cast<int>(li);
    levels[li].shape =
        grid_shape(scene.width, scene.height, eff.levels[li].stride);
    levels[li].cells.resize(static_cast<std::size_t>(levels[li].shape.cells()));
    levels[li].scale = 1.0;
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    LinearHead::Cache cache;
    const LocationPrediction p =
        head.forward(features[i], t.level_index, &cache);
    auto& level = levels[static_cast<std::size_t>(t.level_index)];
    RawPrediction& cell =
        level.cells[static_cast<std::size_t>(t.grid_y) * level.shape.width +
                    t.grid_x];
    cell.class_probs = p.class_probs;
    cell.centerness = p.centerness;
    const double s = head.scales[static_cast<std::size_t>(t.level_index)];
    for (int k = 0; k < 4; ++k)
      cell.regression_raw[static_cast<std::size_t>(k)] =
          s * cache.u[static_cast<std::size_t>(k)];
  }
  return levels;
}

// Score-IoU rank correlation of pre-NMS candidates on the given scenes,
// before and after fusing the predicted centerness into the score.
inline FusionEffect fusion_effect(const LinearHead& head,
                                  std::span<const ImageSample> scenes,
                                  const ToyConfig& cfg) {
  const FpnConfig eff = cfg.fpn.effective();
  const InferenceConfig inf;
  std::vector<Detection> candidates;
  for (const ImageSample& scene : scenes) {
    const auto targets = build_targets(scene.width, scene.height, scene.gts, eff);
    std::vector<std::vector<double>> features;
    features.reserve(targets.size());
    for (const auto& t : targets)
      features.push_back(location_features(t, scene.id, cfg));
    const auto levels = forward_scene(head, scene, targets, features, eff);
    for (const auto& level : levels) {
      auto cand = decode(level, eff, scene.width, scene.height, inf);
      for (auto& d : cand) d.image_id = scene.id;
      candidates.insert(candidates.end(), cand.begin(), cand.end());
    }
  }
  const auto fused = centerness_scatter(candidates, scenes, true);
  const auto unfused = centerness_scatter(candidates, scenes, false);
  std::vector<double> sx, sy;
  sx.reserve(candidates.size());
  sy.reserve(candidates.size());
  for (const auto& p : unfused) {
    sx.push_back(p.score);
    sy.push_back(p.iou);
  }
  FusionEffect fe;
  fe.before = spearman(sx, sy);
  sx.clear();
  sy.clear();
  for (const auto& p : fused) {
    sx.push_back(p.score);
    sy.push_back(p.iou);
  }
  fe.after = spearman(sx, sy);
  return fe;
}

// Central finite differences through the whole head on one scene at a random
// subset of parameters, compared against the analytic chain.
inline GradCheckSummary gradient_check(const LinearHead& head,
                                       const ImageSample& scene,
                                       const ToyConfig& cfg,
                                       double tolerance = 1e-5,
                                       int points = 200,
                                       std::uint64_t seed = 11) {
  if (points < 1)
    throw ValidationError("gradient_check: points must be >= 1");
  const FpnConfig eff = cfg.fpn.effective();
  const auto targets = build_targets(scene.width, scene.height, scene.gts, eff);
  std::vector<std::vector<double>> features;
  features.reserve(targets.size());
  for (const auto& t : targets)
    features.push_back(location_features(t, scene.id, cfg));

  const HeadGradients analytic =
      head_gradients(head, targets, features, cfg.loss);
  const auto loss_at = [&](const LinearHead& h) {
    return head_gradients(h, targets, features, cfg.loss).report.total;
  };

  const std::size_t n_cls = head.w_cls.size();
  const std::size_t n_reg = head.w_reg.size();
  const std::size_t n_ctr = head.w_ctr.size();
  const std::size_t total =
      n_cls + n_reg + n_ctr + head.scales.size();
  Rng rng(seed);
  GradCheckSummary sum;
  sum.points = points;
  sum.tolerance = tolerance;
  for (int i = 0; i < points; ++i) {
    const std::size_t idx = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(total) - 1));
    LinearHead hp = head;
    LinearHead hm = head;
    double* pp = nullptr;
    double* pm = nullptr;
    double a = 0.0;
    if (idx < n_cls) {
      pp = &hp.w_cls[idx];
      pm = &hm.w_cls[idx];
      a = analytic.w_cls[idx];
    } else if (idx < n_cls + n_reg) {
      pp = &hp.w_reg[idx - n_cls];
      pm = &hm.w_reg[idx - n_cls];
      a = analytic.w_reg[idx - n_cls];
    } else if (idx < n_cls + n_reg + n_ctr) {
      pp = &hp.w_ctr[idx - n_cls - n_reg];
      pm = &hm.w_ctr[idx - n_cls - n_reg];
      a = analytic.w_ctr[idx - n_cls - n_reg];
    } else {
      const std::size_t k = idx - n_cls - n_reg - n_ctr;
      pp = &hp.scales[k];
      pm = &hm.scales[k];
      a = analytic.scales[k];
    }
    // Step near cbrt(eps): small enough for O(h^2) truncation, large enough
    // that summation roundoff over thousands of locations stays below it.
    const double h = 1e-5 * std::max(1.0, std::abs(*pp));
    *pp += h;
    *pm -= h;
    const double fd = (loss_at(hp) - loss_at(hm)) / (2.0 * h);
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-2});
    sum.max_rel_error = std::max(sum.max_rel_error, std::abs(a - fd) / denom);
  }
  sum.passed = sum.max_rel_error <= tolerance;
  return sum;
}

inline TrainReport train(const ToyConfig& cfg,
                         LinearHead* trained = nullptr) {
  cfg.validate();
  const FpnConfig eff = cfg.fpn.effective();
  Rng rng(cfg.seed);

  std::vector<ImageSample> scenes;
  std::vector<LocationTarget> targets;
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> scene_off{0};
  for (int i = 0; i < cfg.num_scenes; ++i) {
    ImageSample s = generate_scene(rng, cfg, i + 1);
    auto t = build_targets(s.width, s.height, s.gts, eff);
    for (auto& lt : t) {
      features.push_back(location_features(lt, s.id, cfg));
      targets.push_back(lt);
    }
    scene_off.push_back(targets.size());
    scenes.push_back(std::move(s));
  }

  LinearHead head = LinearHead::init(cfg, rng);

  // fresh scenes the optimizer never sees, for the fusion comparison
  std::vector<ImageSample> heldout;
  for (int i = 0; i < cfg.num_scenes; ++i)
    heldout.push_back(generate_scene(rng, cfg, cfg.num_scenes + 1 + i));

  const int D = cfg.feature_dim;
  const int C = cfg.num_classes;

  TrainReport rep;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const HeadGradients g = head_gradients(head, targets, features, cfg.loss);
    if (!std::isfinite(g.report.total))
      throw ValidationError("toy: loss diverged at epoch " +
                            std::to_string(epoch));
    rep.series.push_back(g.report);
    rep.num_positives = g.report.num_positives;

    for (int c = 0; c < C; ++c)
      for (int d = 0; d < D; ++d)
        if (head.cls_uses(d))
          head.w_cls[static_cast<std::size_t>(c) * D + d] -=
              cfg.learning_rate * g.w_cls[static_cast<std::size_t>(c) * D + d];
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d < D; ++d)
        if (head.reg_uses(d))
          head.w_reg[static_cast<std::size_t>(k) * D + d] -=
              cfg.learning_rate * g.w_reg[static_cast<std::size_t>(k) * D + d];
    for (int d = 0; d < D; ++d)
      if (head.ctr_uses(d))
        head.w_ctr[static_cast<std::size_t>(d)] -=
            cfg.learning_rate * g.w_ctr[static_cast<std::size_t>(d)];
    for (std::size_t k = 0; k < head.scales.size(); ++k)
      head.scales[k] -= cfg.learning_rate * g.scales[k];
  }

  // Post-training inference on the training scenes.
  const InferenceConfig inf;
  std::vector<Detection> all_final;
  for (int si = 0; si < cfg.num_scenes; ++si) {
    const ImageSample& scene = scenes[static_cast<std::size_t>(si)];
    const std::size_t off = scene_off[static_cast<std::size_t>(si)];
    const std::size_t cnt = scene_off[static_cast<std::size_t>(si) + 1] - off;
    const auto levels = forward_scene(
        head, scene, std::span<const LocationTarget>(targets.data() + off, cnt),
        std::span<const std::vector<double>>(features.data() + off, cnt), eff);
    auto final_dets =
        run_inference(levels, eff, scene.width, scene.height, inf);
    for (auto& d : final_dets) d.image_id = scene.id;
    all_final.insert(all_final.end(), final_dets.begin(), final_dets.end());
  }
  rep.total_detections = static_cast<int>(all_final.size());

  double iou_sum = 0.0;
  long long gt_count = 0;
  for (const ImageSample& scene : scenes)
    for (const LabeledBox& gt : scene.gts) {
      double best = 0.0;
      for (const Detection& d : all_final) {
        if (d.image_id != scene.id || d.class_id != gt.class_id) continue;
        best = std::max(best, iou(d.box, gt.box));
      }
      iou_sum += best;
      ++gt_count;
    }
  rep.mean_best_iou = gt_count > 0 ? iou_sum / gt_count : 0.0;

  const FusionEffect fe = fusion_effect(head, heldout, cfg);
  rep.spearman_unfused = fe.before;
  rep.spearman_fused = fe.after;

  rep.grad_check = gradient_check(head, scenes.front(), cfg, 1e-5, 200,
                                  cfg.seed ^ 0x9e3779b97f4a7c15ull);
  if (trained) *trained = head;
  return rep;
}

}  // namespace fcos
