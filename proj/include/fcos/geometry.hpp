#pragma once

#include <algorithm>
#include <cmath>

namespace fcos {

// Axis-aligned box over continuous pixel coordinates, half-open [x0,x1) x [y0,y1).
// Area uses raw coordinate differences; there is no "+1" pixel convention.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }

  bool valid() const {
    return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) &&
           std::isfinite(y1) && x1 >= x0 && y1 >= y0;
  }

  // Containment is inclusive of the boundary, so side distances stay >= 0
  // exactly at the border.
  bool contains(double px, double py) const {
    return px >= x0 && px <= x1 && py >= y0 && py <= y1;
  }

  static Box from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }
};

inline double area(const Box& b) {
  return b.width() * b.height();
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

// Intersection over union; 0 when the union has zero area.
inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Smallest axis-aligned box containing both inputs.
inline Box enclosing_box(const Box& a, const Box& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0),
          std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

// Intersection as a box; collapses to a degenerate box on an empty overlap.
inline Box intersect_box(const Box& a, const Box& b) {
  Box r{std::max(a.x0, b.x0), std::max(a.y0, b.y0),
        std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  if (r.x1 < r.x0) r.x1 = r.x0;
  if (r.y1 < r.y0) r.y1 = r.y0;
  return r;
}

// Ground-truth annotation. class_id >= 1; 0 is reserved for background.
struct LabeledBox {
  Box box;
  int class_id = 1;
  int annotation_index = 0;
  bool is_crowd = false;
};

// Distances from a point to the four sides of a box (left, top, right, bottom).
struct Ltrb {
  double l = 0.0, t = 0.0, r = 0.0, b = 0.0;

  double max_component() const {
    return std::max(std::max(l, t), std::max(r, b));
  }
  double min_component() const {
    return std::min(std::min(l, t), std::min(r, b));
  }
};

}  // namespace fcos
