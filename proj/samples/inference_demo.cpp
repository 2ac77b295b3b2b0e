// Hand-crafts raw predictions around one box, decodes them and runs NMS.

#include <cmath>
#include <iostream>

#include "fcos/inference.hpp"

int main() {
  using namespace fcos;

  const FpnConfig cfg = FpnConfig::coco_default();
  const Box truth{30.0, 20.0, 90.0, 70.0};

  LevelPredictions level;
  level.level_index = 0;  // stride 8
  level.shape = grid_shape(128, 128, 8);
  level.cells.resize(static_cast<std::size_t>(level.shape.cells()));

  for (int iy = 0; iy < level.shape.height; ++iy) {
    for (int ix = 0; ix < level.shape.width; ++ix) {
      auto& cell =
          level.cells[static_cast<std::size_t>(iy) * level.shape.width + ix];
      cell.class_probs = {0.01};
      const auto [px, py] = map_location(8, ix, iy);
      if (!truth.contains(px, py)) continue;
      cell.class_probs = {0.85};
      cell.regression_raw = {std::log(px - truth.x0), std::log(py - truth.y0),
                             std::log(truth.x1 - px), std::log(truth.y1 - py)};
      const Ltrb d{1.0 * px - truth.x0, 1.0 * py - truth.y0,
                   truth.x1 - px, truth.y1 - py};
      cell.centerness = centerness_target(d);
    }
  }

  const InferenceConfig inf;
  const auto dets = run_inference({&level, 1}, cfg, 128, 128, inf);
  for (const auto& d : dets)
    std::cout << "class=" << d.class_id << " score=" << d.score << " box=["
              << d.box.x0 << ", " << d.box.y0 << ", " << d.box.x1 << ", "
              << d.box.y1 << "] iou_with_truth=" << iou(d.box, truth) << "\n";
  std::cout << "kept " << dets.size() << " detections\n";
  return 0;
}
