#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fcos/assignment.hpp"
#include "fcos/error.hpp"
#include "fcos/evaluation.hpp"
#include "fcos/geometry.hpp"
#include "fcos/inference.hpp"

namespace fcos {

struct CategoryRecord {
  int id = 0;
  std::string name;
};

struct Dataset {
  std::vector<ImageSample> images;
  std::vector<CategoryRecord> categories;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

inline nlohmann::json parse_json(const std::string& text,
                                 const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

inline double number_field(const nlohmann::json& j, const char* key,
                           const std::string& where) {
  if (!j.contains(key))
    throw ValidationError(where + ": missing " + key);
  if (!j[key].is_number())
    throw ValidationError(where + ": " + key + " must be a number");
  return j[key].get<double>();
}

}  // namespace detail

// Annotation file in the common detection JSON layout: "images" with id,
// width, height; "annotations" with image_id, category_id, bbox [x, y, w, h]
// and optional iscrowd; optional "categories". Box order within an image
// follows the annotations array; zero-area boxes are kept (assignment skips
// them), negative sizes are rejected.
inline Dataset parse_annotations(const std::string& text,
                                 const std::string& origin) {
  const nlohmann::json j = detail::parse_json(text, origin);
  if (!j.is_object() || !j.contains("images") || !j["images"].is_array())
    throw ValidationError(origin + ": missing images array");
  if (!j.contains("annotations") || !j["annotations"].is_array())
    throw ValidationError(origin + ": missing annotations array");

  Dataset ds;
  std::unordered_map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < j["images"].size(); ++i) {
    const auto& rec = j["images"][i];
    const std::string where = "image record " + std::to_string(i);
    if (!rec.is_object()) throw ValidationError(where + ": not an object");
    ImageSample s;
    s.id = static_cast<int>(detail::number_field(rec, "id", where));
    s.width = static_cast<int>(detail::number_field(rec, "width", where));
    s.height = static_cast<int>(detail::number_field(rec, "height", where));
    if (s.width < 1 || s.height < 1)
      throw ValidationError(where + ": width and height must be >= 1");
    if (!by_id.emplace(s.id, ds.images.size()).second)
      throw ValidationError(where + ": duplicate image id " +
                            std::to_string(s.id));
    ds.images.push_back(std::move(s));
  }

  for (std::size_t i = 0; i < j["annotations"].size(); ++i) {
    const auto& rec = j["annotations"][i];
    std::string where = "annotation record " + std::to_string(i);
    if (rec.is_object() && rec.contains("id") && rec["id"].is_number())
      where = "annotation id " +
              std::to_string(rec["id"].get<long long>());
    if (!rec.is_object()) throw ValidationError(where + ": not an object");
    const int image_id =
        static_cast<int>(detail::number_field(rec, "image_id", where));
    const auto it = by_id.find(image_id);
    if (it == by_id.end())
      throw ValidationError(where + ": unknown image_id " +
                            std::to_string(image_id));
    if (!rec.contains("bbox") || !rec["bbox"].is_array() ||
        rec["bbox"].size() != 4)
      throw ValidationError(where + ": bbox must be an array of 4 numbers");
    double xywh[4];
    for (int k = 0; k < 4; ++k) {
      if (!rec["bbox"][static_cast<std::size_t>(k)].is_number())
        throw ValidationError(where + ": bbox must be an array of 4 numbers");
      xywh[k] = rec["bbox"][static_cast<std::size_t>(k)].get<double>();
    }
    if (xywh[2] < 0.0 || xywh[3] < 0.0)
      throw ValidationError(where + ": bbox has negative size");
    LabeledBox gt;
    gt.box = Box::from_xywh(xywh[0], xywh[1], xywh[2], xywh[3]);
    gt.class_id =
        static_cast<int>(detail::number_field(rec, "category_id", where));
    gt.is_crowd = rec.value("iscrowd", 0) != 0;
    ImageSample& img = ds.images[it->second];
    gt.annotation_index = static_cast<int>(img.gts.size());
    img.gts.push_back(gt);
  }

  if (j.contains("categories") && j["categories"].is_array()) {
    for (std::size_t i = 0; i < j["categories"].size(); ++i) {
      const auto& rec = j["categories"][i];
      const std::string where = "category record " + std::to_string(i);
      CategoryRecord c;
      c.id = static_cast<int>(detail::number_field(rec, "id", where));
      c.name = rec.value("name", "");
      ds.categories.push_back(std::move(c));
    }
  }
  return ds;
}

inline Dataset load_annotations(const std::string& path) {
  return parse_annotations(detail::read_file(path), path);
}

// Detection results as a JSON array of {image_id, category_id,
// bbox [x, y, w, h], score, centerness}. score is the ranking score
// (centerness-fused when fusion was enabled).
inline std::string detections_to_json(std::span<const Detection> dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Detection& d : dets) {
    nlohmann::json rec;
    rec["image_id"] = d.image_id;
    rec["category_id"] = d.class_id;
    rec["bbox"] = {d.box.x0, d.box.y0, d.box.width(), d.box.height()};
    rec["score"] = d.score;
    rec["centerness"] = d.centerness;
    arr.push_back(std::move(rec));
  }
  return arr.dump(2) + "\n";
}

inline void save_detections(const std::string& path,
                            std::span<const Detection> dets) {
  detail::write_file(path, detections_to_json(dets));
}

// centerness defaults to 1 when absent; the classification score is
// recovered as score / centerness (0 when centerness is 0) and clamped to
// [0, 1]. Scores outside [0, 1] are rejected.
inline std::vector<Detection> parse_detections(const std::string& text,
                                               const std::string& origin) {
  const nlohmann::json j = detail::parse_json(text, origin);
  if (!j.is_array())
    throw ValidationError(origin + ": detections must be a JSON array");
  std::vector<Detection> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& rec = j[i];
    const std::string where = "detection record " + std::to_string(i);
    if (!rec.is_object()) throw ValidationError(where + ": not an object");
    Detection d;
    d.image_id =
        static_cast<int>(detail::number_field(rec, "image_id", where));
    d.class_id =
        static_cast<int>(detail::number_field(rec, "category_id", where));
    if (!rec.contains("bbox") || !rec["bbox"].is_array() ||
        rec["bbox"].size() != 4)
      throw ValidationError(where + ": bbox must be an array of 4 numbers");
    double xywh[4];
    for (int k = 0; k < 4; ++k) {
      if (!rec["bbox"][static_cast<std::size_t>(k)].is_number())
        throw ValidationError(where + ": bbox must be an array of 4 numbers");
      xywh[k] = rec["bbox"][static_cast<std::size_t>(k)].get<double>();
    }
    if (xywh[2] < 0.0 || xywh[3] < 0.0)
      throw ValidationError(where + ": bbox has negative size");
    d.box = Box::from_xywh(xywh[0], xywh[1], xywh[2], xywh[3]);
    d.score = detail::number_field(rec, "score", where);
    if (d.score < 0.0 || d.score > 1.0)
      throw ValidationError(where + ": score outside [0, 1]");
    d.centerness = rec.contains("centerness")
                       ? detail::number_field(rec, "centerness", where)
                       : 1.0;
    if (d.centerness < 0.0 || d.centerness > 1.0)
      throw ValidationError(where + ": centerness outside [0, 1]");
    d.cls_score = d.centerness > 0.0
                      ? std::clamp(d.score / d.centerness, 0.0, 1.0)
                      : 0.0;
    out.push_back(d);
  }
  return out;
}

inline std::vector<Detection> load_detections(const std::string& path) {
  return parse_detections(detail::read_file(path), path);
}

// Shorter-side resize with a longer-side cap: scale = min(shorter/min(w,h),
// cap/max(w,h)), output dimensions rounded to the nearest integer, floored
// at 1.
struct ResizeSpec {
  int shorter = 800;
  int cap = 1333;

  void validate() const {
    if (shorter < 1 || cap < 1)
      throw ValidationError("resize: shorter and cap must be >= 1");
  }
};

inline double resize_scale(int width, int height, const ResizeSpec& spec) {
  spec.validate();
  if (width < 1 || height < 1)
    throw ValidationError("resize_scale: image dimensions must be >= 1");
  const double lo = std::min(width, height);
  const double hi = std::max(width, height);
  return std::min(spec.shorter / lo, spec.cap / hi);
}

inline std::pair<int, int> resize_dims(int width, int height,
                                       const ResizeSpec& spec) {
  const double s = resize_scale(width, height, spec);
  const int w = std::max(1, static_cast<int>(std::lround(width * s)));
  const int h = std::max(1, static_cast<int>(std::lround(height * s)));
  return {w, h};
}

// Scales dimensions and boxes by the common factor; boxes are clipped to the
// rounded output size.
inline ImageSample resize_sample(const ImageSample& in,
                                 const ResizeSpec& spec) {
  const double s = resize_scale(in.width, in.height, spec);
  const auto [w, h] = resize_dims(in.width, in.height, spec);
  ImageSample out = in;
  out.width = w;
  out.height = h;
  for (LabeledBox& gt : out.gts) {
    gt.box.x0 = std::clamp(gt.box.x0 * s, 0.0, 1.0 * w);
    gt.box.y0 = std::clamp(gt.box.y0 * s, 0.0, 1.0 * h);
    gt.box.x1 = std::clamp(gt.box.x1 * s, 0.0, 1.0 * w);
    gt.box.y1 = std::clamp(gt.box.y1 * s, 0.0, 1.0 * h);
  }
  return out;
}

// %.6g rendering shared by the CSV and SVG emitters so output bytes are
// reproducible.
inline std::string format_g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string csv_join(std::span<const std::string> cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

// "score,precision,recall" rows in rank order, preceded by the virtual
// (1, 1, 0) starting point.
inline std::string pr_curve_csv(const PrCurve& curve) {
  std::string out = "score,precision,recall\n";
  out += "1,1,0\n";
  for (const PrPoint& p : curve.points) {
    const std::string cells[] = {format_g6(p.score), format_g6(p.precision),
                                 format_g6(p.recall)};
    out += csv_join(cells);
  }
  return out;
}

inline std::string scatter_csv(std::span<const ScatterPoint> points) {
  std::string out = "score,iou,class_id\n";
  for (const ScatterPoint& p : points) {
    const std::string cells[] = {format_g6(p.score), format_g6(p.iou),
                                 std::to_string(p.class_id)};
    out += csv_join(cells);
  }
  return out;
}

namespace detail {

struct SvgFrame {
  static constexpr double kWidth = 640.0;
  static constexpr double kHeight = 480.0;
  static constexpr double kMargin = 56.0;

  static double px(double x) {  // unit x to pixel
    return kMargin + x * (kWidth - 2 * kMargin);
  }
  static double py(double y) {  // unit y to pixel, origin bottom-left
    return kHeight - kMargin - y * (kHeight - 2 * kMargin);
  }

  static std::string open(const std::string& x_label,
                          const std::string& y_label) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
         "height=\"480\" viewBox=\"0 0 640 480\">\n";
    s += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double v = i / 4.0;
      s += "<line x1=\"" + format_g6(px(v)) + "\" y1=\"" + format_g6(py(0)) +
           "\" x2=\"" + format_g6(px(v)) + "\" y2=\"" + format_g6(py(1)) +
           "\" stroke=\"#dddddd\"/>\n";
      s += "<line x1=\"" + format_g6(px(0)) + "\" y1=\"" + format_g6(py(v)) +
           "\" x2=\"" + format_g6(px(1)) + "\" y2=\"" + format_g6(py(v)) +
           "\" stroke=\"#dddddd\"/>\n";
      s += "<text x=\"" + format_g6(px(v)) + "\" y=\"" +
           format_g6(py(0) + 18) +
           "\" font-size=\"12\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\">" +
           format_g6(v) + "</text>\n";
      s += "<text x=\"" + format_g6(px(0) - 10) + "\" y=\"" +
           format_g6(py(v) + 4) +
           "\" font-size=\"12\" text-anchor=\"end\" "
           "font-family=\"sans-serif\">" +
           format_g6(v) + "</text>\n";
    }
    s += "<rect x=\"" + format_g6(px(0)) + "\" y=\"" + format_g6(py(1)) +
         "\" width=\"" + format_g6(px(1) - px(0)) + "\" height=\"" +
         format_g6(py(0) - py(1)) + "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<text x=\"" + format_g6((px(0) + px(1)) / 2) + "\" y=\"" +
         format_g6(kHeight - 12) +
         "\" font-size=\"14\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\">" +
         x_label + "</text>\n";
    s += "<text x=\"16\" y=\"" + format_g6((py(0) + py(1)) / 2) +
         "\" font-size=\"14\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" transform=\"rotate(-90 16 " +
         format_g6((py(0) + py(1)) / 2) + ")\">" + y_label + "</text>\n";
    return s;
  }
};

}  // namespace detail

inline std::string svg_pr_curve(const PrCurve& curve) {
  using F = detail::SvgFrame;
  std::string s = F::open("recall", "precision");
  std::string pts = format_g6(F::px(0)) + "," + format_g6(F::py(1));
  for (const PrPoint& p : curve.points)
    pts += " " + format_g6(F::px(p.recall)) + "," +
           format_g6(F::py(p.precision));
  s += "<polyline points=\"" + pts +
       "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n";
  s += "</svg>\n";
  return s;
}

inline std::string svg_scatter(std::span<const ScatterPoint> points,
                               const std::string& x_label) {
  using F = detail::SvgFrame;
  std::string s = F::open(x_label, "best IoU");
  for (const ScatterPoint& p : points)
    s += "<circle cx=\"" + format_g6(F::px(std::clamp(p.score, 0.0, 1.0))) +
         "\" cy=\"" + format_g6(F::py(std::clamp(p.iou, 0.0, 1.0))) +
         "\" r=\"2\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
  s += "</svg>\n";
  return s;
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  detail::write_file(path, content);
}

}  // namespace fcos
