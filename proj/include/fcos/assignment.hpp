#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcos/error.hpp"
#include "fcos/geometry.hpp"
#include "fcos/parallel.hpp"

namespace fcos {

struct FpnLevel {
  std::string name;
  int stride = 0;
};

// Pyramid layout plus the assignment options. range_thresholds has one more
// entry than levels; level i regresses max side distances in
// (range_thresholds[i], range_thresholds[i+1]].
struct FpnConfig {
  std::vector<FpnLevel> levels;
  std::vector<double> range_thresholds;
  bool center_sampling = false;
  double center_sampling_radius = 1.5;
  bool normalize_targets = false;
  std::string single_level_mode;  // level name; empty uses all levels

  static FpnConfig coco_default() {
    FpnConfig cfg;
    cfg.levels = {{"P3", 8}, {"P4", 16}, {"P5", 32}, {"P6", 64}, {"P7", 128}};
    cfg.range_thresholds = {0.0, 64.0, 128.0, 256.0, 512.0,
                            std::numeric_limits<double>::infinity()};
    return cfg;
  }

  int level_index(const std::string& name) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i].name == name) return static_cast<int>(i);
    return -1;
  }

  // Collapses to the named single level with an unbounded range. Used for the
  // single-level ("no pyramid") studies.
  FpnConfig effective() const {
    if (single_level_mode.empty()) return *this;
    const int idx = level_index(single_level_mode);
    if (idx < 0)
      throw ValidationError("single_level_mode names unknown level '" +
                            single_level_mode + "'");
    FpnConfig out = *this;
    out.levels = {levels[idx]};
    out.range_thresholds = {0.0, std::numeric_limits<double>::infinity()};
    out.single_level_mode.clear();
    return out;
  }

  void validate() const {
    if (levels.empty()) throw ValidationError("fpn: no levels configured");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].stride < 1)
        throw ValidationError("fpn: stride must be >= 1 for level " +
                              levels[i].name);
      if (i > 0 && levels[i].stride <= levels[i - 1].stride)
        throw ValidationError("fpn: strides must be strictly increasing");
    }
    if (range_thresholds.size() != levels.size() + 1)
      throw ValidationError(
          "fpn: range_thresholds must have one more entry than levels");
    for (std::size_t i = 1; i < range_thresholds.size(); ++i)
      if (!(range_thresholds[i] > range_thresholds[i - 1]))
        throw ValidationError(
            "fpn: range_thresholds must be strictly increasing");
    if (!std::isinf(range_thresholds.back()))
      throw ValidationError("fpn: last range threshold must be +inf");
    if (center_sampling_radius <= 0.0)
      throw ValidationError("fpn: center_sampling_radius must be > 0");
    if (!single_level_mode.empty() && level_index(single_level_mode) < 0)
      throw ValidationError("fpn: single_level_mode names unknown level '" +
                            single_level_mode + "'");
  }
};

struct GridShape {
  int width = 0;
  int height = 0;
  long long cells() const { return 1LL * width * height; }
};

// ceil(dim / stride), so border pixels always have a covering cell.
inline GridShape grid_shape(int image_width, int image_height, int stride) {
  return {(image_width + stride - 1) / stride,
          (image_height + stride - 1) / stride};
}

// Feature-map cell (grid_x, grid_y) maps near the center of its receptive
// field: (floor(s/2) + x*s, floor(s/2) + y*s). Exact integer arithmetic.
inline std::pair<int, int> map_location(int stride, int grid_x, int grid_y) {
  return {stride / 2 + grid_x * stride, stride / 2 + grid_y * stride};
}

// Side distances from an in-box point: (x-x0, y-y0, x1-x, y1-y).
inline Ltrb encode_targets(double px, double py, const Box& b) {
  if (!b.contains(px, py))
    throw ValidationError("encode_targets: point lies outside the box");
  return {px - b.x0, py - b.y0, b.x1 - px, b.y1 - py};
}

// sqrt of the product of min/max side-distance ratios; 1 at the box center,
// 0 on the border. Degenerate (all-zero) input yields 0.
inline double centerness_target(const Ltrb& d) {
  const double lr_max = std::max(d.l, d.r);
  const double tb_max = std::max(d.t, d.b);
  if (lr_max <= 0.0 || tb_max <= 0.0) return 0.0;
  return std::sqrt((std::min(d.l, d.r) / lr_max) *
                   (std::min(d.t, d.b) / tb_max));
}

// Unique level whose half-open range (m_{i-1}, m_i] contains the max side
// distance; none when the distance is 0. Distances are in pixels regardless
// of the normalize_targets option.
inline std::optional<int> assign_level(const Ltrb& targets,
                                       const FpnConfig& cfg) {
  const double maxd = targets.max_component();
  if (maxd <= 0.0) return std::nullopt;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i)
    if (maxd > cfg.range_thresholds[i] && maxd <= cfg.range_thresholds[i + 1])
      return static_cast<int>(i);
  return std::nullopt;
}

// Central portion of a box eligible for positives under center sampling: the
// box intersected with a square of half-width radius_factor*stride around
// the box center.
inline Box center_sampling_region(const Box& b, int stride,
                                  double radius_factor) {
  if (radius_factor <= 0.0)
    throw ValidationError("center_sampling_region: radius_factor must be > 0");
  const double r = radius_factor * stride;
  const double cx = b.center_x();
  const double cy = b.center_y();
  return intersect_box(b, Box{cx - r, cy - r, cx + r, cy + r});
}

// One feature-map location's training target. Background locations have
// class_label 0 and zeroed regression/centerness.
struct LocationTarget {
  int level_index = 0;
  int grid_x = 0, grid_y = 0;
  double image_x = 0.0, image_y = 0.0;
  int class_label = 0;
  Ltrb regression;     // stride-normalized when normalize_targets is on
  double centerness = 0.0;
  int source_annotation = -1;
  bool is_ambiguous = false;
  bool ambiguous_cross_class = false;
};

struct ImageSample {
  int id = 0;
  int width = 0;
  int height = 0;
  std::vector<LabeledBox> gts;
};

namespace detail {

struct CellCandidate {
  int gt = -1;  // index into the image's gt vector; min area wins, ties by
                // annotation_index
  double gt_area = 0.0;
  int count = 0;
  int first_class = 0;
  bool cross_class = false;
};

struct LevelScan {
  GridShape shape;
  std::vector<CellCandidate> cells;  // row-major
  std::vector<long long> touched;    // cell indices with count > 0
};

struct ScanResult {
  std::vector<LevelScan> levels;
  long long skipped_zero_area = 0;
  long long total_locations = 0;
};

// Candidate scan, iterating ground truths rather than locations: each box
// touches only the grid cells whose mapped points it contains, which keeps
// dataset-scale statistics tractable.
inline ScanResult scan_candidates(int image_width, int image_height,
                                  std::span<const LabeledBox> gts,
                                  const FpnConfig& cfg, bool include_crowd) {
  ScanResult out;
  out.levels.resize(cfg.levels.size());
  for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
    auto& scan = out.levels[li];
    scan.shape = grid_shape(image_width, image_height, cfg.levels[li].stride);
    scan.cells.assign(static_cast<std::size_t>(scan.shape.cells()), {});
    out.total_locations += scan.shape.cells();
  }

  for (std::size_t g = 0; g < gts.size(); ++g) {
    const LabeledBox& gt = gts[g];
    if (gt.is_crowd && !include_crowd) continue;
    const double gt_area = area(gt.box);
    if (gt_area <= 0.0) {
      ++out.skipped_zero_area;
      continue;
    }
    for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
      auto& scan = out.levels[li];
      const int s = cfg.levels[li].stride;
      const int half = s / 2;
      const double m_lo = cfg.range_thresholds[li];
      const double m_hi = cfg.range_thresholds[li + 1];

      Box region = gt.box;
      if (cfg.center_sampling)
        region = center_sampling_region(gt.box, s, cfg.center_sampling_radius);

      // Grid cells whose mapped point falls inside the region (inclusive).
      int ix0 = static_cast<int>(std::ceil((region.x0 - half) / s));
      int ix1 = static_cast<int>(std::floor((region.x1 - half) / s));
      int iy0 = static_cast<int>(std::ceil((region.y0 - half) / s));
      int iy1 = static_cast<int>(std::floor((region.y1 - half) / s));
      ix0 = std::max(ix0, 0);
      iy0 = std::max(iy0, 0);
      ix1 = std::min(ix1, scan.shape.width - 1);
      iy1 = std::min(iy1, scan.shape.height - 1);

      for (int iy = iy0; iy <= iy1; ++iy) {
        const double py = half + 1.0 * iy * s;
        for (int ix = ix0; ix <= ix1; ++ix) {
          const double px = half + 1.0 * ix * s;
          const Ltrb d{px - gt.box.x0, py - gt.box.y0, gt.box.x1 - px,
                       gt.box.y1 - py};
          const double maxd = d.max_component();
          if (!(maxd > m_lo && maxd <= m_hi)) continue;

          const long long cell = 1LL * iy * scan.shape.width + ix;
          CellCandidate& c = scan.cells[static_cast<std::size_t>(cell)];
          if (c.count == 0) {
            scan.touched.push_back(cell);
            c.first_class = gt.class_id;
          } else if (gt.class_id != c.first_class) {
            c.cross_class = true;
          }
          ++c.count;
          if (c.gt < 0 || gt_area < c.gt_area ||
              (gt_area == c.gt_area &&
               gt.annotation_index < gts[c.gt].annotation_index)) {
            c.gt = static_cast<int>(g);
            c.gt_area = gt_area;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace detail

struct BuildStats {
  long long skipped_zero_area = 0;
};

// Full per-location target map: every grid location of every level appears
// exactly once, ordered by (level, grid_y, grid_x). Positives carry targets
// w.r.t. the minimal-area containing box whose range matches the level.
inline std::vector<LocationTarget> build_targets(
    int image_width, int image_height, std::span<const LabeledBox> gts,
    const FpnConfig& cfg, BuildStats* stats = nullptr,
    bool include_crowd = false) {
  if (image_width < 1 || image_height < 1)
    throw ValidationError("build_targets: image dimensions must be >= 1");
  const FpnConfig eff = cfg.effective();
  eff.validate();
  const auto scan =
      detail::scan_candidates(image_width, image_height, gts, eff, include_crowd);
  if (stats) stats->skipped_zero_area = scan.skipped_zero_area;

  std::vector<LocationTarget> out;
  out.reserve(static_cast<std::size_t>(scan.total_locations));
  for (std::size_t li = 0; li < scan.levels.size(); ++li) {
    const auto& level = scan.levels[li];
    const int s = eff.levels[li].stride;
    const int half = s / 2;
    for (int iy = 0; iy < level.shape.height; ++iy) {
      for (int ix = 0; ix < level.shape.width; ++ix) {
        const auto& c =
            level.cells[static_cast<std::size_t>(iy) * level.shape.width + ix];
        LocationTarget t;
        t.level_index = static_cast<int>(li);
        t.grid_x = ix;
        t.grid_y = iy;
        t.image_x = half + 1.0 * ix * s;
        t.image_y = half + 1.0 * iy * s;
        if (c.gt >= 0) {
          const LabeledBox& gt = gts[static_cast<std::size_t>(c.gt)];
          t.class_label = gt.class_id;
          Ltrb d = encode_targets(t.image_x, t.image_y, gt.box);
          t.centerness = centerness_target(d);
          if (eff.normalize_targets) {
            d.l /= s; d.t /= s; d.r /= s; d.b /= s;
          }
          t.regression = d;
          t.source_annotation = gt.annotation_index;
          t.is_ambiguous = c.count > 1;
          t.ambiguous_cross_class = c.cross_class;
        }
        out.push_back(t);
      }
    }
  }
  return out;
}

// Per-ground-truth recall flags: true when the box won at least one location
// during assignment. Skipped boxes (crowd, zero area) stay false.
inline std::vector<char> recalled_ground_truths(const ImageSample& sample,
                                                const FpnConfig& eff,
                                                bool include_crowd = false) {
  std::vector<char> recalled(sample.gts.size(), 0);
  const auto scan = detail::scan_candidates(sample.width, sample.height,
                                            sample.gts, eff, include_crowd);
  for (const auto& level : scan.levels)
    for (const long long cell : level.touched) {
      const auto& c = level.cells[static_cast<std::size_t>(cell)];
      if (c.gt >= 0) recalled[static_cast<std::size_t>(c.gt)] = 1;
    }
  return recalled;
}

struct AmbiguityCounts {
  long long positives = 0;
  long long ambiguous_all = 0;
  long long ambiguous_cross_class = 0;
  long long skipped_zero_area = 0;

  double ratio_all() const {
    return positives > 0 ? static_cast<double>(ambiguous_all) / positives : 0.0;
  }
  double ratio_cross_class() const {
    return positives > 0
               ? static_cast<double>(ambiguous_cross_class) / positives
               : 0.0;
  }
};

// Dataset-wide ambiguity counters. Aggregation is commutative counting, so
// the result is independent of the per-image parallelism.
inline AmbiguityCounts count_ambiguity(std::span<const ImageSample> samples,
                                       const FpnConfig& cfg,
                                       bool include_crowd = false,
                                       int threads = 1) {
  const FpnConfig eff = cfg.effective();
  eff.validate();
  std::vector<AmbiguityCounts> per_image(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto scan = detail::scan_candidates(
        samples[i].width, samples[i].height, samples[i].gts, eff, include_crowd);
    AmbiguityCounts& c = per_image[i];
    c.skipped_zero_area = scan.skipped_zero_area;
    for (const auto& level : scan.levels)
      for (const long long cell : level.touched) {
        const auto& cand = level.cells[static_cast<std::size_t>(cell)];
        ++c.positives;
        if (cand.count > 1) {
          ++c.ambiguous_all;
          if (cand.cross_class) ++c.ambiguous_cross_class;
        }
      }
  });
  AmbiguityCounts total;
  for (const auto& c : per_image) {
    total.positives += c.positives;
    total.ambiguous_all += c.ambiguous_all;
    total.ambiguous_cross_class += c.ambiguous_cross_class;
    total.skipped_zero_area += c.skipped_zero_area;
  }
  return total;
}

struct AmbiguityStats {
  double ambiguous_positive_ratio = 0.0;
  long long total_positives = 0;
};

// Ratio of positives contained in more than one candidate box (cross-class
// overlaps only when exclude_same_class is set) to all positives.
inline AmbiguityStats ambiguity_stats(std::span<const ImageSample> samples,
                                      const FpnConfig& cfg,
                                      bool exclude_same_class,
                                      bool include_crowd = false,
                                      int threads = 1) {
  if (samples.empty())
    throw ValidationError("ambiguity_stats: dataset is empty");
  const AmbiguityCounts c =
      count_ambiguity(samples, cfg, include_crowd, threads);
  return {exclude_same_class ? c.ratio_cross_class() : c.ratio_all(),
          c.positives};
}

}  // namespace fcos
