#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/geometry.hpp"

namespace fcos {

inline constexpr double kExpClamp = 20.0;

// Raw network outputs for one feature-map cell: per-class sigmoid scores,
// pre-exponential regression values and a centerness score.
struct RawPrediction {
  std::vector<double> class_probs;
  std::array<double, 4> regression_raw{0.0, 0.0, 0.0, 0.0};
  double centerness = 1.0;
};

struct LevelPredictions {
  int level_index = 0;
  GridShape shape;
  std::vector<RawPrediction> cells;  // row-major
  double scale = 1.0;                // per-level regression scale factor
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;      // ranking score (fused when enabled)
  double cls_score = 0.0;  // classification probability
  double centerness = 1.0;
  int image_id = 0;
};

struct InferenceConfig {
  double score_threshold = 0.05;  // strict > on the classification score
  int pre_nms_top_k = 1000;       // per level, 0 disables the cap
  double nms_iou = 0.6;
  bool class_agnostic_nms = false;
  bool fuse_centerness = true;
  int max_detections = 100;  // 0 disables the cap
};

// Raw regression value to a side distance: exp(scale * raw) with the
// exponent clamped at kExpClamp, times the stride when targets were
// stride-normalized during training.
inline double decode_distance(double raw, double scale, int stride,
                              bool normalize_targets) {
  const double e = std::min(scale * raw, kExpClamp);
  double d = std::exp(e);
  if (normalize_targets) d *= stride;
  return d;
}

namespace detail {

// Stable ordering: score descending, earlier input index wins ties.
inline void sort_by_score(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
}

}  // namespace detail

// Thresholded, decoded candidates for one level, sorted by ranking score and
// capped at pre_nms_top_k. Boxes are clipped to the image.
inline std::vector<Detection> decode(const LevelPredictions& level,
                                     const FpnConfig& eff, int image_width,
                                     int image_height,
                                     const InferenceConfig& cfg) {
  if (level.level_index < 0 ||
      level.level_index >= static_cast<int>(eff.levels.size()))
    throw ValidationError("decode: level_index out of range");
  if (static_cast<long long>(level.cells.size()) != level.shape.cells())
    throw ValidationError("decode: cell count does not match grid shape");
  if (image_width < 1 || image_height < 1)
    throw ValidationError("decode: image dimensions must be >= 1");

  const int stride = eff.levels[static_cast<std::size_t>(level.level_index)].stride;
  const int half = stride / 2;

  std::vector<Detection> out;
  for (int iy = 0; iy < level.shape.height; ++iy) {
    for (int ix = 0; ix < level.shape.width; ++ix) {
      const auto& cell =
          level.cells[static_cast<std::size_t>(iy) * level.shape.width + ix];
      const double px = half + 1.0 * ix * stride;
      const double py = half + 1.0 * iy * stride;
      for (std::size_t c = 0; c < cell.class_probs.size(); ++c) {
        const double cls = cell.class_probs[c];
        if (!(cls > cfg.score_threshold)) continue;
        Detection det;
        det.class_id = static_cast<int>(c) + 1;
        det.cls_score = cls;
        det.centerness = cell.centerness;
        det.score = cfg.fuse_centerness ? cls * cell.centerness : cls;
        const double l = decode_distance(cell.regression_raw[0], level.scale,
                                         stride, eff.normalize_targets);
        const double t = decode_distance(cell.regression_raw[1], level.scale,
                                         stride, eff.normalize_targets);
        const double r = decode_distance(cell.regression_raw[2], level.scale,
                                         stride, eff.normalize_targets);
        const double b = decode_distance(cell.regression_raw[3], level.scale,
                                         stride, eff.normalize_targets);
        det.box = {std::clamp(px - l, 0.0, 1.0 * image_width),
                   std::clamp(py - t, 0.0, 1.0 * image_height),
                   std::clamp(px + r, 0.0, 1.0 * image_width),
                   std::clamp(py + b, 0.0, 1.0 * image_height)};
        out.push_back(det);
      }
    }
  }
  detail::sort_by_score(out);
  if (cfg.pre_nms_top_k > 0 &&
      out.size() > static_cast<std::size_t>(cfg.pre_nms_top_k))
    out.resize(static_cast<std::size_t>(cfg.pre_nms_top_k));
  return out;
}

// Greedy non-maximum suppression. Candidates are visited in descending score
// order (ties broken by the lower input index); a candidate is dropped when
// its IoU with an already kept detection exceeds iou_threshold. Per-class by
// default. The kept list keeps the visiting order.
inline std::vector<Detection> nms(std::vector<Detection> dets,
                                  double iou_threshold,
                                  bool class_agnostic = false) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw ValidationError("nms: iou_threshold must be in [0, 1]");
  detail::sort_by_score(dets);
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (!class_agnostic && k.class_id != d.class_id) continue;
      if (iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// Full post-processing: per-level decode, pooled NMS, detection cap.
inline std::vector<Detection> run_inference(
    std::span<const LevelPredictions> levels, const FpnConfig& cfg,
    int image_width, int image_height, const InferenceConfig& inf) {
  const FpnConfig eff = cfg.effective();
  eff.validate();
  std::vector<Detection> pooled;
  for (const auto& level : levels) {
    auto dets = decode(level, eff, image_width, image_height, inf);
    pooled.insert(pooled.end(), dets.begin(), dets.end());
  }
  auto kept = nms(std::move(pooled), inf.nms_iou, inf.class_agnostic_nms);
  if (inf.max_detections > 0 &&
      kept.size() > static_cast<std::size_t>(inf.max_detections))
    kept.resize(static_cast<std::size_t>(inf.max_detections));
  return kept;
}

}  // namespace fcos
