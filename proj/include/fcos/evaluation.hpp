#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "fcos/anchors.hpp"
#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/geometry.hpp"
#include "fcos/inference.hpp"
#include "fcos/parallel.hpp"

namespace fcos {

struct BprResult {
  long long recalled = 0;
  long long total = 0;
  double value() const {
    return total > 0 ? static_cast<double>(recalled) / total : 0.0;
  }
};

namespace detail {

inline bool considered(const LabeledBox& gt, bool include_crowd) {
  return include_crowd || !gt.is_crowd;
}

inline std::unordered_map<int, std::size_t> index_by_image_id(
    std::span<const ImageSample> samples) {
  std::unordered_map<int, std::size_t> by_id;
  by_id.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!by_id.emplace(samples[i].id, i).second)
      throw ValidationError("duplicate image id " +
                            std::to_string(samples[i].id));
  return by_id;
}

}  // namespace detail

// Fraction of ground-truth boxes that win at least one location during
// target assignment.
inline BprResult fcos_bpr(std::span<const ImageSample> samples,
                          const FpnConfig& cfg, bool include_crowd = false,
                          int threads = 1) {
  const FpnConfig eff = cfg.effective();
  eff.validate();
  std::vector<BprResult> per_image(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto recalled = recalled_ground_truths(samples[i], eff, include_crowd);
    BprResult& r = per_image[i];
    for (std::size_t g = 0; g < samples[i].gts.size(); ++g) {
      if (!detail::considered(samples[i].gts[g], include_crowd)) continue;
      ++r.total;
      if (recalled[g]) ++r.recalled;
    }
  });
  BprResult total;
  for (const auto& r : per_image) {
    total.recalled += r.recalled;
    total.total += r.total;
  }
  return total;
}

// Fraction of ground-truth boxes whose best anchor overlap passes the match
// policy.
inline BprResult anchor_bpr(std::span<const ImageSample> samples,
                            const AnchorConfig& cfg, MatchPolicy policy,
                            bool include_crowd = false, int threads = 1) {
  cfg.validate();
  std::vector<BprResult> per_image(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    BprResult& r = per_image[i];
    for (const LabeledBox& gt : samples[i].gts) {
      if (!detail::considered(gt, include_crowd)) continue;
      ++r.total;
      const double best =
          max_anchor_iou(gt.box, samples[i].width, samples[i].height, cfg);
      if (anchor_match(best, policy)) ++r.recalled;
    }
  });
  BprResult total;
  for (const auto& r : per_image) {
    total.recalled += r.recalled;
    total.total += r.total;
  }
  return total;
}

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
  double score = 0.0;
  long long tp = 0;  // cumulative true positives at this rank
};

struct PrCurve {
  std::vector<PrPoint> points;  // one per detection, rank order
  long long total_gt = 0;
};

namespace detail {

struct RankedDetection {
  const Detection* det = nullptr;
  std::size_t input_index = 0;
};

// Score descending, earlier input index on ties.
inline std::vector<RankedDetection> rank_detections(
    std::span<const Detection> dets) {
  std::vector<RankedDetection> ranked(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) ranked[i] = {&dets[i], i};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedDetection& a, const RankedDetection& b) {
                     return a.det->score > b.det->score;
                   });
  return ranked;
}

}  // namespace detail

// Precision/recall trace of greedy matching: detections are visited in
// descending score order and matched to the unmatched ground truth with the
// highest overlap at or above iou_threshold (annotation index breaks ties).
// Matching is per-class unless class_agnostic; crowd boxes are ignored
// unless include_crowd.
inline PrCurve pr_curve(std::span<const Detection> dets,
                        std::span<const ImageSample> samples,
                        double iou_threshold, bool class_agnostic = false,
                        bool include_crowd = false) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw ValidationError("pr_curve: iou_threshold must be in [0, 1]");
  const auto by_id = detail::index_by_image_id(samples);

  PrCurve curve;
  for (const auto& s : samples)
    for (const auto& gt : s.gts)
      if (detail::considered(gt, include_crowd)) ++curve.total_gt;

  std::vector<std::vector<char>> matched(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    matched[i].assign(samples[i].gts.size(), 0);

  const auto ranked = detail::rank_detections(dets);
  long long tp = 0;
  long long fp = 0;
  curve.points.reserve(ranked.size());
  for (const auto& rd : ranked) {
    const Detection& d = *rd.det;
    const auto it = by_id.find(d.image_id);
    if (it == by_id.end())
      throw ValidationError("pr_curve: detection references unknown image " +
                            std::to_string(d.image_id));
    const ImageSample& s = samples[it->second];
    int best_gt = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < s.gts.size(); ++g) {
      const LabeledBox& gt = s.gts[g];
      if (!detail::considered(gt, include_crowd)) continue;
      if (!class_agnostic && gt.class_id != d.class_id) continue;
      if (matched[it->second][g]) continue;
      const double v = iou(d.box, gt.box);
      if (v < iou_threshold) continue;
      if (v > best_iou ||
          (best_gt >= 0 && v == best_iou &&
           gt.annotation_index <
               s.gts[static_cast<std::size_t>(best_gt)].annotation_index)) {
        best_gt = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      matched[it->second][static_cast<std::size_t>(best_gt)] = 1;
      ++tp;
    } else {
      ++fp;
    }
    PrPoint p;
    p.tp = tp;
    p.score = d.score;
    p.precision = static_cast<double>(tp) / (tp + fp);
    p.recall = curve.total_gt > 0
                   ? static_cast<double>(tp) / curve.total_gt
                   : 0.0;
    curve.points.push_back(p);
  }
  return curve;
}

// 101-point interpolated average precision: at each recall grid value r the
// best precision among operating points whose recall reaches r (integer
// comparison, so grid membership is exact). Only operating points reachable
// by a score threshold count, so ranks inside a tied-score run are skipped
// except the last. Empty curves score 0.
inline double average_precision(const PrCurve& curve) {
  if (curve.total_gt <= 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i <= 100; ++i) {
    double best = 0.0;
    for (std::size_t k = 0; k < curve.points.size(); ++k) {
      if (k + 1 < curve.points.size() &&
          curve.points[k + 1].score == curve.points[k].score)
        continue;
      const PrPoint& p = curve.points[k];
      if (p.tp * 100 >= static_cast<long long>(i) * curve.total_gt)
        best = std::max(best, p.precision);
    }
    sum += best;
  }
  return sum / 101.0;
}

// Mean recall over the IoU grid 0.50:0.05:0.95 with at most max_dets
// detections kept per image (0 keeps all). Recall pools ground truths across
// classes and images.
inline double average_recall(std::span<const Detection> dets,
                             std::span<const ImageSample> samples,
                             int max_dets = 100, bool class_agnostic = false,
                             bool include_crowd = false) {
  const auto by_id = detail::index_by_image_id(samples);
  std::vector<std::vector<Detection>> per_image(samples.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto it = by_id.find(dets[i].image_id);
    if (it == by_id.end())
      throw ValidationError(
          "average_recall: detection references unknown image " +
          std::to_string(dets[i].image_id));
    per_image[it->second].push_back(dets[i]);
  }
  std::vector<Detection> kept;
  for (auto& dv : per_image) {
    std::stable_sort(dv.begin(), dv.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
    if (max_dets > 0 && dv.size() > static_cast<std::size_t>(max_dets))
      dv.resize(static_cast<std::size_t>(max_dets));
    kept.insert(kept.end(), dv.begin(), dv.end());
  }

  double sum = 0.0;
  int count = 0;
  for (int k = 10; k <= 19; ++k) {
    const double thr = k / 20.0;
    const PrCurve c =
        pr_curve(kept, samples, thr, class_agnostic, include_crowd);
    const double recall =
        c.points.empty() ? 0.0 : c.points.back().recall;
    sum += recall;
    ++count;
  }
  return sum / count;
}

struct ScatterPoint {
  double score = 0.0;  // fused or raw classification score
  double iou = 0.0;    // best overlap with any eligible ground truth
  int class_id = 0;
};

// Score-versus-localization scatter used to inspect the centerness branch:
// x is cls*centerness when fused (raw cls otherwise), y the detection's best
// IoU against the image's ground truths of its class (any class when
// class_agnostic). Points keep the detections' input order.
inline std::vector<ScatterPoint> centerness_scatter(
    std::span<const Detection> dets, std::span<const ImageSample> samples,
    bool fused, bool class_agnostic = false, bool include_crowd = false) {
  const auto by_id = detail::index_by_image_id(samples);
  std::vector<ScatterPoint> out;
  out.reserve(dets.size());
  for (const Detection& d : dets) {
    const auto it = by_id.find(d.image_id);
    if (it == by_id.end())
      throw ValidationError(
          "centerness_scatter: detection references unknown image " +
          std::to_string(d.image_id));
    ScatterPoint p;
    p.score = fused ? d.cls_score * d.centerness : d.cls_score;
    p.class_id = d.class_id;
    for (const LabeledBox& gt : samples[it->second].gts) {
      if (!detail::considered(gt, include_crowd)) continue;
      if (!class_agnostic && gt.class_id != d.class_id) continue;
      p.iou = std::max(p.iou, iou(d.box, gt.box));
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace fcos
