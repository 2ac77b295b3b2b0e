#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fcos/anchors.hpp"
#include "fcos/evaluation.hpp"
#include "fcos/random.hpp"
#include "oracles.hpp"

using namespace fcos;

TEST_CASE("anchor_shapes sweeps ratios and scales at constant area") {
  const AnchorConfig cfg = AnchorConfig::coco_default();
  const auto shapes = anchor_shapes(cfg, 0);
  REQUIRE(shapes.size() == 9);

  // ratio 1, scale 1 is the plain base box
  bool found_square = false;
  for (const auto& s : shapes)
    if (s.width == Catch::Approx(32.0) && s.height == Catch::Approx(32.0))
      found_square = true;
  CHECK(found_square);

  // the ratio trades width for height at constant area
  for (std::size_t r = 0; r < cfg.aspect_ratios.size(); ++r)
    for (std::size_t s = 0; s < cfg.octave_scales.size(); ++s) {
      const auto& shape = shapes[r * cfg.octave_scales.size() + s];
      const double expect_area =
          32.0 * cfg.octave_scales[s] * 32.0 * cfg.octave_scales[s];
      CHECK(shape.width * shape.height == Catch::Approx(expect_area));
      CHECK(shape.height / shape.width ==
            Catch::Approx(cfg.aspect_ratios[r]));
    }

  const auto p7 = anchor_shapes(cfg, 4);
  CHECK(p7[3].width == Catch::Approx(512.0));  // ratio 1, scale 1

  CHECK_THROWS_AS(anchor_shapes(cfg, 5), ValidationError);
  CHECK_THROWS_AS(anchor_shapes(cfg, -1), ValidationError);
}

TEST_CASE("anchor config validation") {
  AnchorConfig cfg = AnchorConfig::coco_default();
  cfg.base_sizes.pop_back();
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = AnchorConfig::coco_default();
  cfg.strides[1] = 8;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = AnchorConfig::coco_default();
  cfg.aspect_ratios = {0.5, -1.0};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = AnchorConfig::coco_default();
  cfg.octave_scales.clear();
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("a box coinciding with an anchor reaches overlap one") {
  const AnchorConfig cfg = AnchorConfig::coco_default();
  // stride-8 centers sit at 4 + 8k; a 32x32 anchor at (28, 28) covers this
  const Box gt{12.0, 12.0, 44.0, 44.0};
  CHECK(max_anchor_iou(gt, 64, 64, cfg) == 1.0);
}

TEST_CASE("match policies use the documented thresholds") {
  CHECK_FALSE(anchor_match(0.0, MatchPolicy::kAll));
  CHECK(anchor_match(1e-9, MatchPolicy::kAll));
  CHECK(anchor_match(0.39, MatchPolicy::kAll));

  CHECK_FALSE(anchor_match(0.39, MatchPolicy::kLowQuality04));
  CHECK(anchor_match(0.4, MatchPolicy::kLowQuality04));
  CHECK(anchor_match(0.49, MatchPolicy::kLowQuality04));

  CHECK_FALSE(anchor_match(0.49, MatchPolicy::kNone));
  CHECK(anchor_match(0.5, MatchPolicy::kNone));
  CHECK(anchor_match(0.93, MatchPolicy::kNone));
}

TEST_CASE("windowed anchor scan matches full enumeration exactly") {
  const AnchorConfig cfg = AnchorConfig::coco_default();
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = rng.uniform_int(40, 160);
    const int h = rng.uniform_int(40, 160);
    const double x0 = rng.uniform(0.0, w * 0.8);
    const double y0 = rng.uniform(0.0, h * 0.8);
    const Box gt{x0, y0, x0 + rng.uniform(1.0, w - x0),
                 y0 + rng.uniform(1.0, h - y0)};
    // both sides evaluate iou() over the same anchor set, so the best values
    // must agree bit for bit
    CHECK(max_anchor_iou(gt, w, h, cfg) ==
          oracle::reference_max_anchor_iou(gt, w, h, cfg));
  }
}

TEST_CASE("recall never drops when the match policy loosens") {
  const AnchorConfig cfg = AnchorConfig::coco_default();
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ImageSample> samples;
    const int images = rng.uniform_int(1, 4);
    for (int i = 0; i < images; ++i) {
      ImageSample s;
      s.id = i + 1;
      s.width = rng.uniform_int(64, 220);
      s.height = rng.uniform_int(64, 220);
      const int boxes = rng.uniform_int(1, 6);
      for (int b = 0; b < boxes; ++b) {
        LabeledBox gt;
        const double x0 = rng.uniform(0.0, s.width * 0.9);
        const double y0 = rng.uniform(0.0, s.height * 0.9);
        gt.box = {x0, y0, x0 + rng.uniform(0.5, s.width - x0),
                  y0 + rng.uniform(0.5, s.height - y0)};
        gt.class_id = rng.uniform_int(1, 3);
        gt.annotation_index = b;
        gt.is_crowd = rng.uniform() < 0.1;
        s.gts.push_back(gt);
      }
      samples.push_back(s);
    }
    const auto all = anchor_bpr(samples, cfg, MatchPolicy::kAll);
    const auto low = anchor_bpr(samples, cfg, MatchPolicy::kLowQuality04);
    const auto none = anchor_bpr(samples, cfg, MatchPolicy::kNone);
    CHECK(all.total == low.total);
    CHECK(low.total == none.total);
    CHECK(all.recalled >= low.recalled);
    CHECK(low.recalled >= none.recalled);
  }
}
