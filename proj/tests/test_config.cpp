#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "fcos/config.hpp"

using namespace fcos;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {
const std::string kData = TEST_DATA_DIR;
}

TEST_CASE("an empty config keeps the defaults") {
  const RunConfig cfg = parse_config("", "t");
  CHECK(cfg.fpn.levels.size() == 5);
  CHECK(cfg.fpn.levels[0].name == "P3");
  CHECK(cfg.fpn.range_thresholds.front() == 0.0);
  CHECK(std::isinf(cfg.fpn.range_thresholds.back()));
  CHECK(cfg.inference.score_threshold == 0.05);
  CHECK(cfg.threads == 1);
  CHECK(cfg.resize_enabled);
  CHECK(cfg.out_dir == ".");
  cfg.validate();
}

TEST_CASE("a full config round trips every section") {
  const std::string text = R"(# sample configuration
[fpn]
strides = [8, 16]
range_thresholds = [0, 64, inf]
center_sampling = true
center_sampling_radius = 2.5
normalize_targets = true

[inference]
score_threshold = 0.1
pre_nms_top_k = 50
nms_iou = 0.5
class_agnostic_nms = true
fuse_centerness = false
max_detections = 10

[loss]
lambda = 2
use_centerness = false
use_giou = true
gamma = 1.5
alpha = 0.3

[resize]
enabled = false
shorter = 600
cap = 1000

[run]
threads = 4
out_dir = "results" # trailing comment
)";
  const RunConfig cfg = parse_config(text, "t");
  REQUIRE(cfg.fpn.levels.size() == 2);
  CHECK(cfg.fpn.levels[0].name == "P3");
  CHECK(cfg.fpn.levels[0].stride == 8);
  CHECK(cfg.fpn.levels[1].name == "P4");
  REQUIRE(cfg.fpn.range_thresholds.size() == 3);
  CHECK(cfg.fpn.range_thresholds[1] == 64.0);
  CHECK(std::isinf(cfg.fpn.range_thresholds[2]));
  CHECK(cfg.fpn.center_sampling);
  CHECK(cfg.fpn.center_sampling_radius == 2.5);
  CHECK(cfg.fpn.normalize_targets);

  CHECK(cfg.inference.score_threshold == 0.1);
  CHECK(cfg.inference.pre_nms_top_k == 50);
  CHECK(cfg.inference.nms_iou == 0.5);
  CHECK(cfg.inference.class_agnostic_nms);
  CHECK_FALSE(cfg.inference.fuse_centerness);
  CHECK(cfg.inference.max_detections == 10);

  CHECK(cfg.loss.lambda == 2.0);
  CHECK_FALSE(cfg.loss.use_centerness);
  CHECK(cfg.loss.use_giou);
  CHECK(cfg.loss.focal.gamma == 1.5);
  CHECK(cfg.loss.focal.alpha == 0.3);

  CHECK_FALSE(cfg.resize_enabled);
  CHECK(cfg.resize.shorter == 600);
  CHECK(cfg.resize.cap == 1000);

  CHECK(cfg.threads == 4);
  CHECK(cfg.out_dir == "results");
  cfg.validate();
}

TEST_CASE("non power-of-two strides get generic level names") {
  const RunConfig cfg = parse_config(
      "[fpn]\nstrides = [12, 24]\nrange_thresholds = [0, 100, inf]\n", "t");
  REQUIRE(cfg.fpn.levels.size() == 2);
  CHECK(cfg.fpn.levels[0].name == "L0");
  CHECK(cfg.fpn.levels[1].name == "L1");
  CHECK(cfg.fpn.levels[1].stride == 24);
}

TEST_CASE("single level selection parses") {
  const RunConfig cfg = parse_config("[fpn]\nsingle_level = \"P4\"\n", "t");
  CHECK(cfg.fpn.single_level_mode == "P4");
  const FpnConfig eff = cfg.fpn.effective();
  CHECK(eff.levels.size() == 1);
  CHECK(eff.levels[0].stride == 16);
}

TEST_CASE("config errors carry the line number") {
  REQUIRE_THROWS_MATCHES(parse_config("[fpn]\nbogus = 1\n", "t"), ParseError,
                         MessageMatches(ContainsSubstring(
                             "t:2: unknown key 'bogus' in [fpn]")));
  REQUIRE_THROWS_MATCHES(
      parse_config("\n\n[nope]\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("t:3: unknown section [nope]")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn]\ncenter_sampling = yes\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("t:2") &&
                     ContainsSubstring("expected true or false")));
  REQUIRE_THROWS_MATCHES(
      parse_config("x = 1\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("outside any section")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[run]\nout_dir = results\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("expected a quoted string")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn]\nstrides = 8\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("expected an array")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn]\nstrides = [8, a]\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("expected a number")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn]\n= 1\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("empty key")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn]\ncenter_sampling =\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("empty value")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[fpn\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("unterminated section header")));
  REQUIRE_THROWS_MATCHES(
      parse_config("[inference]\nnope = 1\n", "t"), ParseError,
      MessageMatches(ContainsSubstring("unknown key 'nope' in [inference]")));
}

TEST_CASE("validate rejects out-of-range values after parsing") {
  RunConfig cfg = parse_config("[loss]\nlambda = -1\n", "t");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = parse_config("[inference]\nnms_iou = 1.5\n", "t");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = parse_config("[run]\nthreads = -2\n", "t");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = parse_config("[fpn]\nrange_thresholds = [0, 64]\n", "t");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("missing config files raise an io error") {
  CHECK_THROWS_AS(load_config(kData + "/no_such_config.toml"), IoError);
}
