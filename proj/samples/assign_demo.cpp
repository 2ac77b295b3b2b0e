// Builds the target map for a small two-box scene and prints the positive
// locations of every pyramid level.

#include <iostream>

#include "fcos/assignment.hpp"

int main() {
  using namespace fcos;

  const FpnConfig cfg = FpnConfig::coco_default();
  std::vector<LabeledBox> gts;
  gts.push_back({Box{40.0, 40.0, 200.0, 160.0}, 1, 0, false});
  gts.push_back({Box{90.0, 60.0, 140.0, 110.0}, 2, 1, false});

  BuildStats stats;
  const auto targets = build_targets(256, 256, gts, cfg, &stats);

  for (const auto& t : targets) {
    if (t.class_label == 0) continue;
    std::cout << cfg.levels[static_cast<std::size_t>(t.level_index)].name
              << " (" << t.image_x << ", " << t.image_y << ")"
              << " class=" << t.class_label << " ltrb=[" << t.regression.l
              << ", " << t.regression.t << ", " << t.regression.r << ", "
              << t.regression.b << "]"
              << " centerness=" << t.centerness
              << (t.is_ambiguous ? " ambiguous" : "") << "\n";
  }
  std::cout << "skipped zero-area boxes: " << stats.skipped_zero_area << "\n";
  return 0;
}
