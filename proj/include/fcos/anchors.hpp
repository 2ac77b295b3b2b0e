#pragma once

#include <cmath>
#include <vector>

#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/geometry.hpp"

namespace fcos {

// Dense reference anchor layout: per pyramid level a base size, swept over
// aspect ratios (h/w) and intra-octave scales, centered on the mapped grid
// points and left unclipped.
struct AnchorConfig {
  std::vector<int> strides;
  std::vector<double> base_sizes;
  std::vector<double> aspect_ratios;
  std::vector<double> octave_scales;

  static AnchorConfig coco_default() {
    AnchorConfig cfg;
    cfg.strides = {8, 16, 32, 64, 128};
    cfg.base_sizes = {32.0, 64.0, 128.0, 256.0, 512.0};
    cfg.aspect_ratios = {0.5, 1.0, 2.0};
    cfg.octave_scales = {1.0, std::pow(2.0, 1.0 / 3.0),
                         std::pow(2.0, 2.0 / 3.0)};
    return cfg;
  }

  void validate() const {
    if (strides.empty()) throw ValidationError("anchors: no levels configured");
    if (strides.size() != base_sizes.size())
      throw ValidationError("anchors: strides/base_sizes size mismatch");
    for (std::size_t i = 0; i < strides.size(); ++i) {
      if (strides[i] < 1)
        throw ValidationError("anchors: stride must be >= 1");
      if (i > 0 && strides[i] <= strides[i - 1])
        throw ValidationError("anchors: strides must be strictly increasing");
      if (!(base_sizes[i] > 0.0))
        throw ValidationError("anchors: base sizes must be > 0");
    }
    if (aspect_ratios.empty() || octave_scales.empty())
      throw ValidationError("anchors: ratios and scales must be nonempty");
    for (double r : aspect_ratios)
      if (!(r > 0.0))
        throw ValidationError("anchors: aspect ratios must be > 0");
    for (double s : octave_scales)
      if (!(s > 0.0))
        throw ValidationError("anchors: octave scales must be > 0");
  }
};

struct AnchorShape {
  double width = 0.0;
  double height = 0.0;
};

// The (width, height) pairs used at one level: base * scale resized by the
// ratio at constant area, w = base*scale/sqrt(r), h = base*scale*sqrt(r).
inline std::vector<AnchorShape> anchor_shapes(const AnchorConfig& cfg,
                                              int level) {
  cfg.validate();
  if (level < 0 || level >= static_cast<int>(cfg.strides.size()))
    throw ValidationError("anchor_shapes: level out of range");
  std::vector<AnchorShape> shapes;
  shapes.reserve(cfg.aspect_ratios.size() * cfg.octave_scales.size());
  const double base = cfg.base_sizes[static_cast<std::size_t>(level)];
  for (const double r : cfg.aspect_ratios)
    for (const double s : cfg.octave_scales)
      shapes.push_back({base * s / std::sqrt(r), base * s * std::sqrt(r)});
  return shapes;
}

enum class MatchPolicy { kAll, kLowQuality04, kNone };

// Whether a ground truth with the given best anchor overlap counts as
// recalled: kNone needs IoU >= 0.5, kLowQuality04 relaxes to >= 0.4, kAll
// accepts any positive overlap.
inline bool anchor_match(double max_iou, MatchPolicy policy) {
  switch (policy) {
    case MatchPolicy::kAll: return max_iou > 0.0;
    case MatchPolicy::kLowQuality04: return max_iou >= 0.4;
    case MatchPolicy::kNone: return max_iou >= 0.5;
  }
  return false;
}

// Best IoU between one box and the full anchor set of an image. Only anchors
// overlapping the box can contribute, so the scan enumerates just the grid
// centers whose anchor rectangle reaches it.
inline double max_anchor_iou(const Box& gt, int image_width, int image_height,
                             const AnchorConfig& cfg) {
  cfg.validate();
  if (image_width < 1 || image_height < 1)
    throw ValidationError("max_anchor_iou: image dimensions must be >= 1");
  double best = 0.0;
  for (std::size_t li = 0; li < cfg.strides.size(); ++li) {
    const int s = cfg.strides[li];
    const int half = s / 2;
    const GridShape shape = grid_shape(image_width, image_height, s);
    for (const AnchorShape& a : anchor_shapes(cfg, static_cast<int>(li))) {
      const double hw = a.width / 2.0;
      const double hh = a.height / 2.0;
      int ix0 = static_cast<int>(std::ceil((gt.x0 - hw - half) / s));
      int ix1 = static_cast<int>(std::floor((gt.x1 + hw - half) / s));
      int iy0 = static_cast<int>(std::ceil((gt.y0 - hh - half) / s));
      int iy1 = static_cast<int>(std::floor((gt.y1 + hh - half) / s));
      ix0 = std::max(ix0, 0);
      iy0 = std::max(iy0, 0);
      ix1 = std::min(ix1, shape.width - 1);
      iy1 = std::min(iy1, shape.height - 1);
      for (int iy = iy0; iy <= iy1; ++iy) {
        const double cy = half + 1.0 * iy * s;
        for (int ix = ix0; ix <= ix1; ++ix) {
          const double cx = half + 1.0 * ix * s;
          const Box anchor{cx - hw, cy - hh, cx + hw, cy + hh};
          best = std::max(best, iou(anchor, gt));
        }
      }
    }
  }
  return best;
}

}  // namespace fcos
