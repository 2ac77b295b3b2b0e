// Acceptance gate: one verdict line per criterion, exit 0 when nothing
// fails. Criteria needing the external validation annotation file (point it
// via FCOS_MINIVAL_JSON or argv[1]) are reported as SKIP when it is absent.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fcos/anchors.hpp"
#include "fcos/assignment.hpp"
#include "fcos/data_io.hpp"
#include "fcos/evaluation.hpp"
#include "fcos/gradcheck.hpp"
#include "fcos/inference.hpp"
#include "fcos/random.hpp"
#include "fcos/toy.hpp"
#include "oracles.hpp"

using namespace fcos;

namespace {

bool g_any_fail = false;

void report(const std::string& id, const std::string& status,
            const std::string& detail) {
  if (status == "FAIL") g_any_fail = true;
  std::cout << id << " [" << status << "] " << detail << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// ---- external dataset criteria ----------------------------------------

struct PinnedPct {
  const char* name;
  double expect;
  double tol;
};

std::vector<ImageSample> load_resized(const std::string& path) {
  Dataset ds = load_annotations(path);
  std::vector<ImageSample> out;
  out.reserve(ds.images.size());
  for (const ImageSample& img : ds.images)
    out.push_back(resize_sample(img, ResizeSpec{}));
  return out;
}

void criterion_recall_table(const std::string& data_path) {
  if (data_path.empty()) {
    report("C1", "SKIP",
           "recall table needs the external validation annotations; set "
           "FCOS_MINIVAL_JSON or pass the path as argv[1]");
    return;
  }
  constexpr double kBudgetSeconds = 300.0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = load_resized(data_path);

  FpnConfig pyramid = FpnConfig::coco_default();
  FpnConfig flat = pyramid;
  flat.single_level_mode = "P4";
  const AnchorConfig anchors = AnchorConfig::coco_default();

  const double got[5] = {
      100.0 * fcos_bpr(samples, flat).value(),
      100.0 * fcos_bpr(samples, pyramid).value(),
      100.0 * anchor_bpr(samples, anchors, MatchPolicy::kAll).value(),
      100.0 * anchor_bpr(samples, anchors, MatchPolicy::kLowQuality04).value(),
      100.0 * anchor_bpr(samples, anchors, MatchPolicy::kNone).value(),
  };
  const PinnedPct pin[5] = {
      {"fcos-nofpn", 95.55, 0.5}, {"fcos", 98.40, 0.3},
      {"anchors-all", 99.23, 0.3}, {"anchors-low04", 90.92, 1.0},
      {"anchors-none", 86.82, 1.0},
  };
  const double elapsed = seconds_since(t0);

  bool ok = elapsed <= kBudgetSeconds;
  std::string detail;
  for (int i = 0; i < 5; ++i) {
    const bool hit = std::abs(got[i] - pin[i].expect) <= pin[i].tol;
    ok = ok && hit;
    detail += std::string(pin[i].name) + "=" + fmt(got[i]) + " (want " +
              fmt(pin[i].expect) + "+-" + fmt(pin[i].tol) + ") ";
  }
  detail += "time=" + fmt(elapsed) + "s limit=" + fmt(kBudgetSeconds) + "s";
  report("C1", ok ? "PASS" : "FAIL", detail);
}

void criterion_ambiguity_table(const std::string& data_path) {
  if (data_path.empty()) {
    report("C2", "SKIP",
           "ambiguity table needs the external validation annotations; set "
           "FCOS_MINIVAL_JSON or pass the path as argv[1]");
    return;
  }
  const auto samples = load_resized(data_path);
  FpnConfig pyramid = FpnConfig::coco_default();
  FpnConfig flat = pyramid;
  flat.single_level_mode = "P4";

  const AmbiguityCounts flat_c = count_ambiguity(samples, flat);
  const AmbiguityCounts pyr_c = count_ambiguity(samples, pyramid);
  const double got[4] = {
      100.0 * flat_c.ratio_all(),
      100.0 * pyr_c.ratio_all(),
      100.0 * flat_c.ratio_cross_class(),
      100.0 * pyr_c.ratio_cross_class(),
  };
  const PinnedPct pin[4] = {
      {"nofpn-all", 23.16, 0.5}, {"fpn-all", 7.14, 0.5},
      {"nofpn-cross", 17.84, 0.5}, {"fpn-cross", 3.75, 0.5},
  };
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 4; ++i) {
    const bool hit = std::abs(got[i] - pin[i].expect) <= pin[i].tol;
    ok = ok && hit;
    detail += std::string(pin[i].name) + "=" + fmt(got[i]) + " (want " +
              fmt(pin[i].expect) + "+-" + fmt(pin[i].tol) + ") ";
  }
  report("C2", ok ? "PASS" : "FAIL", detail);
}

// ---- self-contained criteria -------------------------------------------

void criterion_gradients() {
  constexpr double kBudgetSeconds = 30.0;
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport rep = run_gradient_checks(7, 1000);
  const bool control = corrupted_gradients_detected(7);
  const double elapsed = seconds_since(t0);

  double worst = 0.0;
  long long points = 0;
  for (const auto& k : rep.kernels) {
    worst = std::max(worst, k.max_rel_err);
    points += k.points;
  }
  const bool ok = rep.all_pass && control && elapsed <= kBudgetSeconds;
  report("C3", ok ? "PASS" : "FAIL",
         "kernels=" + std::to_string(rep.kernels.size()) +
             " points=" + std::to_string(points) +
             " max_rel_err=" + fmt(worst) + " tol=" + fmt(rep.tolerance) +
             " negative_control=" + (control ? "detected" : "missed") +
             " time=" + fmt(elapsed) + "s limit=" + fmt(kBudgetSeconds) +
             "s");
}

void criterion_encode_decode() {
  constexpr double kTol = 1e-6;
  Rng rng(11);
  double worst = 0.0;
  int pairs = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const double x0 = rng.uniform(0.0, 1200.0);
    const double y0 = rng.uniform(0.0, 700.0);
    const Box b{x0, y0, x0 + rng.uniform(0.5, 130.0),
                y0 + rng.uniform(0.5, 130.0)};
    const double px = rng.uniform(b.x0, b.x1);
    const double py = rng.uniform(b.y0, b.y1);
    const Ltrb d = encode_targets(px, py, b);
    if (d.min_component() <= 0.0) continue;
    const bool normalize = trial % 2 == 0;
    const int stride = 8;
    const double scale = trial % 3 == 0 ? 2.0 : 1.0;
    const auto rawify = [&](double dist) {
      return std::log(normalize ? dist / stride : dist) / scale;
    };
    const double corners[4] = {
        px - decode_distance(rawify(d.l), scale, stride, normalize),
        py - decode_distance(rawify(d.t), scale, stride, normalize),
        px + decode_distance(rawify(d.r), scale, stride, normalize),
        py + decode_distance(rawify(d.b), scale, stride, normalize)};
    const double want[4] = {b.x0, b.y0, b.x1, b.y1};
    for (int k = 0; k < 4; ++k)
      worst = std::max(worst, std::abs(corners[k] - want[k]) /
                                  std::max(1.0, std::abs(want[k])));
    ++pairs;
  }

  // assignment against the location-by-location reference, all fields exact
  Rng srng(12);
  int scenes = 0;
  long long mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int w = srng.uniform_int(16, 64);
    const int h = srng.uniform_int(16, 64);
    std::vector<LabeledBox> gts;
    const int boxes = srng.uniform_int(1, 6);
    for (int g = 0; g < boxes; ++g) {
      LabeledBox gt;
      const double bx0 = srng.uniform(0.0, w * 0.9);
      const double by0 = srng.uniform(0.0, h * 0.9);
      const double bw =
          srng.uniform() < 0.05 ? 0.0 : srng.uniform(0.5, w - bx0);
      gt.box = {bx0, by0, bx0 + bw, by0 + srng.uniform(0.5, h - by0)};
      gt.class_id = srng.uniform_int(1, 3);
      gt.annotation_index = g;
      gt.is_crowd = srng.uniform() < 0.1;
      gts.push_back(gt);
    }
    FpnConfig cfg = FpnConfig::coco_default();
    cfg.center_sampling = srng.uniform() < 0.5;
    cfg.normalize_targets = srng.uniform() < 0.5;
    const bool include_crowd = srng.uniform() < 0.5;
    const auto got = build_targets(w, h, gts, cfg, nullptr, include_crowd);
    const auto want = oracle::reference_targets(w, h, gts, cfg, include_crowd);
    if (got.size() != want.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      const auto& a = got[i];
      const auto& b = want[i];
      const bool same =
          a.level_index == b.level_index && a.grid_x == b.grid_x &&
          a.grid_y == b.grid_y && a.image_x == b.image_x &&
          a.image_y == b.image_y && a.class_label == b.class_label &&
          a.regression.l == b.regression.l &&
          a.regression.t == b.regression.t &&
          a.regression.r == b.regression.r &&
          a.regression.b == b.regression.b && a.centerness == b.centerness &&
          a.source_annotation == b.source_annotation &&
          a.is_ambiguous == b.is_ambiguous &&
          a.ambiguous_cross_class == b.ambiguous_cross_class;
      if (!same) ++mismatches;
    }
    ++scenes;
  }

  const bool ok = worst <= kTol && pairs > 95000 && mismatches == 0;
  report("C4", ok ? "PASS" : "FAIL",
         "roundtrip_pairs=" + std::to_string(pairs) + " max_rel_err=" +
             fmt(worst) + " tol=" + fmt(kTol) +
             " assignment_scenes=" + std::to_string(scenes) +
             " field_mismatches=" + std::to_string(mismatches));
}

void criterion_ap_oracle() {
  Rng rng(41);
  int exact = 0;
  int total = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<ImageSample> samples;
    std::vector<Detection> dets;
    const int images = rng.uniform_int(1, 3);
    for (int i = 0; i < images; ++i) {
      ImageSample s;
      s.id = i + 1;
      s.width = 100;
      s.height = 100;
      const int boxes = rng.uniform_int(0, 6);
      for (int b = 0; b < boxes; ++b) {
        LabeledBox gt;
        const double x0 = rng.uniform(0.0, 70.0);
        const double y0 = rng.uniform(0.0, 70.0);
        gt.box = {x0, y0, x0 + rng.uniform(4.0, 28.0),
                  y0 + rng.uniform(4.0, 28.0)};
        gt.class_id = rng.uniform_int(1, 3);
        gt.annotation_index = b;
        gt.is_crowd = rng.uniform() < 0.1;
        s.gts.push_back(gt);
        if (rng.uniform() < 0.8) {
          Detection d;
          d.image_id = s.id;
          d.class_id = rng.uniform() < 0.8 ? gt.class_id : rng.uniform_int(1, 3);
          d.box = {std::max(0.0, gt.box.x0 + rng.uniform(-6.0, 6.0)),
                   std::max(0.0, gt.box.y0 + rng.uniform(-6.0, 6.0)), 0, 0};
          d.box.x1 = std::max(d.box.x0 + 1.0, gt.box.x1 + rng.uniform(-6.0, 6.0));
          d.box.y1 = std::max(d.box.y0 + 1.0, gt.box.y1 + rng.uniform(-6.0, 6.0));
          d.score = rng.uniform_int(1, 9) / 10.0;  // heavy ties
          d.cls_score = d.score;
          dets.push_back(d);
        }
      }
      const int noise = rng.uniform_int(0, 4);
      for (int n = 0; n < noise; ++n) {
        Detection d;
        d.image_id = s.id;
        d.class_id = rng.uniform_int(1, 3);
        const double x0 = rng.uniform(0.0, 80.0);
        const double y0 = rng.uniform(0.0, 80.0);
        d.box = {x0, y0, x0 + rng.uniform(2.0, 18.0),
                 y0 + rng.uniform(2.0, 18.0)};
        d.score = rng.uniform_int(1, 9) / 10.0;
        d.cls_score = d.score;
        dets.push_back(d);
      }
      samples.push_back(s);
    }
    const double thr = rng.uniform() < 0.5 ? 0.5 : 0.75;
    const bool agnostic = rng.uniform() < 0.3;
    const bool crowd = rng.uniform() < 0.3;
    const double ap =
        average_precision(pr_curve(dets, samples, thr, agnostic, crowd));
    const double ref = oracle::reference_average_precision(dets, samples, thr,
                                                           agnostic, crowd);
    if (ap == ref) ++exact;
    ++total;
  }

  // anchor recall ordering across match policies
  Rng arng(31);
  int ordered = 0;
  int datasets = 0;
  const AnchorConfig anchors = AnchorConfig::coco_default();
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ImageSample> samples;
    const int images = arng.uniform_int(1, 4);
    for (int i = 0; i < images; ++i) {
      ImageSample s;
      s.id = i + 1;
      s.width = arng.uniform_int(64, 220);
      s.height = arng.uniform_int(64, 220);
      const int boxes = arng.uniform_int(1, 6);
      for (int b = 0; b < boxes; ++b) {
        LabeledBox gt;
        const double x0 = arng.uniform(0.0, s.width * 0.9);
        const double y0 = arng.uniform(0.0, s.height * 0.9);
        gt.box = {x0, y0, x0 + arng.uniform(0.5, s.width - x0),
                  y0 + arng.uniform(0.5, s.height - y0)};
        gt.class_id = arng.uniform_int(1, 3);
        gt.annotation_index = b;
        s.gts.push_back(gt);
      }
      samples.push_back(s);
    }
    const auto all = anchor_bpr(samples, anchors, MatchPolicy::kAll);
    const auto low = anchor_bpr(samples, anchors, MatchPolicy::kLowQuality04);
    const auto none = anchor_bpr(samples, anchors, MatchPolicy::kNone);
    if (all.recalled >= low.recalled && low.recalled >= none.recalled)
      ++ordered;
    ++datasets;
  }

  const bool ok = exact == total && ordered == datasets;
  report("C5", ok ? "PASS" : "FAIL",
         "ap_exact=" + std::to_string(exact) + "/" + std::to_string(total) +
             " policy_ordered=" + std::to_string(ordered) + "/" +
             std::to_string(datasets));
}

void criterion_nms_and_determinism() {
  Rng rng(17);
  int idempotent = 0, bounded = 0, scale_stable = 0, repeat_stable = 0;
  const int kTrials = 50;
  const double thr = 0.5;
  for (int trial = 0; trial < kTrials; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 120; ++i) {
      Detection d;
      const double x0 = rng.uniform(0.0, 90.0);
      const double y0 = rng.uniform(0.0, 90.0);
      d.box = {x0, y0, x0 + rng.uniform(2.0, 30.0),
               y0 + rng.uniform(2.0, 30.0)};
      d.score = rng.uniform_int(1, 5) / 10.0 + rng.uniform() * 0.05;
      d.cls_score = d.score;
      d.class_id = rng.uniform_int(1, 3);
      d.image_id = i;  // input tag to observe ordering
      dets.push_back(d);
    }
    const auto once = nms(dets, thr);
    const auto twice = nms(once, thr);
    const auto again = nms(dets, thr);
    auto scaled = dets;
    for (auto& d : scaled) d.score *= 0.37;
    const auto kept_scaled = nms(scaled, thr);

    const auto same_tags = [](const std::vector<Detection>& a,
                              const std::vector<Detection>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].image_id != b[i].image_id) return false;
      return true;
    };
    if (same_tags(once, twice)) ++idempotent;
    if (same_tags(once, again)) ++repeat_stable;
    if (same_tags(once, kept_scaled)) ++scale_stable;

    bool pairs_ok = true;
    for (std::size_t i = 0; i < once.size(); ++i)
      for (std::size_t j = i + 1; j < once.size(); ++j)
        if (once[i].class_id == once[j].class_id &&
            iou(once[i].box, once[j].box) > thr)
          pairs_ok = false;
    if (pairs_ok) ++bounded;
  }

  // thread-count independence of the parallel analyses
  Rng srng(5);
  std::vector<ImageSample> samples;
  for (int i = 0; i < 16; ++i) {
    ImageSample s;
    s.id = i + 1;
    s.width = 96;
    s.height = 96;
    for (int b = 0; b < 4; ++b) {
      LabeledBox gt;
      const double x0 = srng.uniform(0.0, 60.0);
      const double y0 = srng.uniform(0.0, 60.0);
      gt.box = {x0, y0, x0 + srng.uniform(1.0, 30.0),
                y0 + srng.uniform(1.0, 30.0)};
      gt.class_id = srng.uniform_int(1, 3);
      gt.annotation_index = b;
      s.gts.push_back(gt);
    }
    samples.push_back(s);
  }
  const FpnConfig cfg = FpnConfig::coco_default();
  const auto b1 = fcos_bpr(samples, cfg, false, 1);
  const auto b4 = fcos_bpr(samples, cfg, false, 4);
  const auto a1 = count_ambiguity(samples, cfg, false, 1);
  const auto a4 = count_ambiguity(samples, cfg, false, 4);
  const bool threads_ok = b1.recalled == b4.recalled && b1.total == b4.total &&
                          a1.positives == a4.positives &&
                          a1.ambiguous_all == a4.ambiguous_all &&
                          a1.ambiguous_cross_class == a4.ambiguous_cross_class;

  const bool ok = idempotent == kTrials && bounded == kTrials &&
                  scale_stable == kTrials && repeat_stable == kTrials &&
                  threads_ok;
  report("C6", ok ? "PASS" : "FAIL",
         "idempotent=" + std::to_string(idempotent) + "/" +
             std::to_string(kTrials) + " kept_pairs_bounded=" +
             std::to_string(bounded) + "/" + std::to_string(kTrials) +
             " scale_invariant=" + std::to_string(scale_stable) + "/" +
             std::to_string(kTrials) + " repeat_stable=" +
             std::to_string(repeat_stable) + "/" + std::to_string(kTrials) +
             " threads_match=" + (threads_ok ? "yes" : "no"));
}

void criterion_toy_training() {
  constexpr double kBudgetSeconds = 120.0;
  const auto t0 = std::chrono::steady_clock::now();
  ToyConfig cfg;  // seed 1, 200 epochs, defaults throughout
  const TrainReport rep = train(cfg);
  const double elapsed = seconds_since(t0);

  std::vector<double> totals;
  for (const LossReport& r : rep.series) totals.push_back(r.total);
  const bool monotone = smoothed_monotone_decreasing(totals, 10);
  const bool iou_ok = rep.mean_best_iou >= 0.9;
  const bool fusion_ok = rep.spearman_fused + 1e-9 >= rep.spearman_unfused;
  const bool grad_ok = rep.grad_check.passed;
  const bool ok = monotone && iou_ok && fusion_ok && grad_ok &&
                  elapsed <= kBudgetSeconds;
  report("C7", ok ? "PASS" : "FAIL",
         std::string("loss_monotone=") + (monotone ? "yes" : "no") +
             " mean_best_iou=" + fmt(rep.mean_best_iou) +
             " (min 0.9) spearman_fused=" + fmt(rep.spearman_fused) +
             " spearman_unfused=" + fmt(rep.spearman_unfused) +
             " head_gradcheck_max_rel_err=" + fmt(rep.grad_check.max_rel_error) +
             " (tol 1e-5) time=" + fmt(elapsed) + "s limit=" +
             fmt(kBudgetSeconds) + "s");
}

void criterion_out_of_scope() {
  report("C8", "SKIP",
         "not reproducible without trained networks: full-detector average "
         "precision tables, improvement percentages tied to trained models, "
         "and region-proposal recall comparisons; the mathematical "
         "counterparts (assignment, losses, decoding, matching) are covered "
         "by C3-C7");
}

}  // namespace

int main(int argc, char** argv) {
  std::string data_path;
  if (argc > 1) data_path = argv[1];
  if (data_path.empty())
    if (const char* env = std::getenv("FCOS_MINIVAL_JSON"); env && *env)
      data_path = env;

  try {
    criterion_recall_table(data_path);
    criterion_ambiguity_table(data_path);
    criterion_gradients();
    criterion_encode_decode();
    criterion_ap_oracle();
    criterion_nms_and_determinism();
    criterion_toy_training();
    criterion_out_of_scope();
  } catch (const std::exception& e) {
    std::cout << "ABORT [FAIL] unexpected exception: " << e.what() << "\n";
    g_any_fail = true;
  }

  std::cout << (g_any_fail ? "RESULT: FAIL" : "RESULT: OK") << "\n";
  return g_any_fail ? 1 : 0;
}
