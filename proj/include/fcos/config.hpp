#pragma once

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "fcos/assignment.hpp"
#include "fcos/data_io.hpp"
#include "fcos/error.hpp"
#include "fcos/inference.hpp"
#include "fcos/losses.hpp"

namespace fcos {

// Everything the command-line tool can configure, merged from defaults, an
// optional config file and flag overrides.
struct RunConfig {
  FpnConfig fpn = FpnConfig::coco_default();
  InferenceConfig inference;
  LossOptions loss;
  ResizeSpec resize;
  bool resize_enabled = true;
  int threads = 1;  // 0 picks the hardware concurrency
  std::string out_dir = ".";

  void validate() const {
    fpn.validate();
    resize.validate();
    loss.focal.validate();
    if (loss.lambda < 0.0)
      throw ValidationError("config: loss.lambda must be >= 0");
    if (inference.score_threshold < 0.0 || inference.score_threshold > 1.0)
      throw ValidationError(
          "config: inference.score_threshold must be in [0, 1]");
    if (inference.nms_iou < 0.0 || inference.nms_iou > 1.0)
      throw ValidationError("config: inference.nms_iou must be in [0, 1]");
    if (inference.pre_nms_top_k < 0)
      throw ValidationError("config: inference.pre_nms_top_k must be >= 0");
    if (inference.max_detections < 0)
      throw ValidationError("config: inference.max_detections must be >= 0");
    if (threads < 0)
      throw ValidationError("config: threads must be >= 0");
    if (out_dir.empty())
      throw ValidationError("config: out_dir must not be empty");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

struct TomlContext {
  std::string origin;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(origin + ":" + std::to_string(line) + ": " + msg);
  }
};

inline double parse_number(const std::string& tok, const TomlContext& ctx) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    ctx.fail("expected a number, got '" + tok + "'");
  return v;
}

inline bool parse_bool(const std::string& tok, const TomlContext& ctx) {
  if (tok == "true") return true;
  if (tok == "false") return false;
  ctx.fail("expected true or false, got '" + tok + "'");
}

inline std::string parse_string(const std::string& tok,
                                const TomlContext& ctx) {
  if (tok.size() < 2 || tok.front() != '"' || tok.back() != '"')
    ctx.fail("expected a quoted string, got '" + tok + "'");
  return tok.substr(1, tok.size() - 2);
}

inline std::vector<double> parse_array(const std::string& tok,
                                       const TomlContext& ctx) {
  if (tok.size() < 2 || tok.front() != '[' || tok.back() != ']')
    ctx.fail("expected an array, got '" + tok + "'");
  std::vector<double> out;
  std::string body = tok.substr(1, tok.size() - 2);
  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t comma = body.find(',', pos);
    const std::string item =
        trim(comma == std::string::npos ? body.substr(pos)
                                        : body.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(parse_number(item, ctx));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::string level_name(int stride, int index) {
  if (stride > 0 && (stride & (stride - 1)) == 0) {
    int log2 = 0;
    for (int s = stride; s > 1; s >>= 1) ++log2;
    return "P" + std::to_string(log2);
  }
  return "L" + std::to_string(index);
}

}  // namespace detail

// Minimal TOML subset: [section] headers, key = value lines, # comments.
// Values are booleans, numbers (inf allowed), quoted strings and flat arrays
// of numbers. Unknown sections or keys are reported with their line number.
inline RunConfig parse_config(const std::string& text,
                              const std::string& origin) {
  RunConfig cfg;
  detail::TomlContext ctx{origin, 0};
  std::string section;
  std::vector<double> pending_strides;
  bool have_strides = false;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line =
        nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    ++ctx.line;
    line = detail::trim(detail::strip_comment(line));
    if (!line.empty()) {
      if (line.front() == '[') {
        if (line.back() != ']') ctx.fail("unterminated section header");
        section = detail::trim(line.substr(1, line.size() - 2));
        if (section != "fpn" && section != "inference" && section != "loss" &&
            section != "resize" && section != "run")
          ctx.fail("unknown section [" + section + "]");
      } else {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) ctx.fail("expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) ctx.fail("empty key");
        if (val.empty()) ctx.fail("empty value for '" + key + "'");

        if (section == "fpn") {
          if (key == "strides") {
            pending_strides = detail::parse_array(val, ctx);
            have_strides = true;
          } else if (key == "range_thresholds") {
            cfg.fpn.range_thresholds = detail::parse_array(val, ctx);
          } else if (key == "center_sampling") {
            cfg.fpn.center_sampling = detail::parse_bool(val, ctx);
          } else if (key == "center_sampling_radius") {
            cfg.fpn.center_sampling_radius = detail::parse_number(val, ctx);
          } else if (key == "normalize_targets") {
            cfg.fpn.normalize_targets = detail::parse_bool(val, ctx);
          } else if (key == "single_level") {
            cfg.fpn.single_level_mode = detail::parse_string(val, ctx);
          } else {
            ctx.fail("unknown key '" + key + "' in [fpn]");
          }
        } else if (section == "inference") {
          if (key == "score_threshold") {
            cfg.inference.score_threshold = detail::parse_number(val, ctx);
          } else if (key == "pre_nms_top_k") {
            cfg.inference.pre_nms_top_k =
                static_cast<int>(detail::parse_number(val, ctx));
          } else if (key == "nms_iou") {
            cfg.inference.nms_iou = detail::parse_number(val, ctx);
          } else if (key == "class_agnostic_nms") {
            cfg.inference.class_agnostic_nms = detail::parse_bool(val, ctx);
          } else if (key == "fuse_centerness") {
            cfg.inference.fuse_centerness = detail::parse_bool(val, ctx);
          } else if (key == "max_detections") {
            cfg.inference.max_detections =
                static_cast<int>(detail::parse_number(val, ctx));
          } else {
            ctx.fail("unknown key '" + key + "' in [inference]");
          }
        } else if (section == "loss") {
          if (key == "lambda") {
            cfg.loss.lambda = detail::parse_number(val, ctx);
          } else if (key == "use_centerness") {
            cfg.loss.use_centerness = detail::parse_bool(val, ctx);
          } else if (key == "use_giou") {
            cfg.loss.use_giou = detail::parse_bool(val, ctx);
          } else if (key == "gamma") {
            cfg.loss.focal.gamma = detail::parse_number(val, ctx);
          } else if (key == "alpha") {
            cfg.loss.focal.alpha = detail::parse_number(val, ctx);
          } else {
            ctx.fail("unknown key '" + key + "' in [loss]");
          }
        } else if (section == "resize") {
          if (key == "enabled") {
            cfg.resize_enabled = detail::parse_bool(val, ctx);
          } else if (key == "shorter") {
            cfg.resize.shorter = static_cast<int>(detail::parse_number(val, ctx));
          } else if (key == "cap") {
            cfg.resize.cap = static_cast<int>(detail::parse_number(val, ctx));
          } else {
            ctx.fail("unknown key '" + key + "' in [resize]");
          }
        } else if (section == "run") {
          if (key == "threads") {
            cfg.threads = static_cast<int>(detail::parse_number(val, ctx));
          } else if (key == "out_dir") {
            cfg.out_dir = detail::parse_string(val, ctx);
          } else {
            ctx.fail("unknown key '" + key + "' in [run]");
          }
        } else {
          ctx.fail("key '" + key + "' outside any section");
        }
      }
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }

  if (have_strides) {
    cfg.fpn.levels.clear();
    for (std::size_t i = 0; i < pending_strides.size(); ++i) {
      const int s = static_cast<int>(pending_strides[i]);
      cfg.fpn.levels.push_back(
          {detail::level_name(s, static_cast<int>(i)), s});
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  return parse_config(detail::read_file(path), path);
}

}  // namespace fcos
