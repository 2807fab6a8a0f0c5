#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlvr/rng.hpp"

namespace rlvr {

// 32x32 cell grid rendered to a 64x64 scalar raster (2x2 pixel glyph per
// cell). Cell code 0 = empty, otherwise (shape-1)*4 + color, shape in 1..8,
// color in 1..4. Objects are rectangular blobs of one code placed with a
// one-cell margin, so connected components recover the generator's instances
// exactly and every derived ground truth can be recomputed from the grid.
struct Scene {
  static constexpr int kGrid = 32;
  static constexpr int kCellPx = 2;
  static constexpr int kRaster = kGrid * kCellPx;  // 64

  std::vector<uint8_t> cells;  // kGrid*kGrid codes
  uint64_t seed = 0;

  uint8_t at(int r, int c) const { return cells[static_cast<size_t>(r) * kGrid + c]; }

  static int shape_of(uint8_t code) { return code == 0 ? 0 : (code - 1) / 4 + 1; }  // 1..8
  static int color_of(uint8_t code) { return code == 0 ? 0 : (code - 1) % 4 + 1; }  // 1..4
  static uint8_t code_of(int shape, int color) {
    return static_cast<uint8_t>((shape - 1) * 4 + color);
  }

  std::vector<double> render() const;  // kRaster*kRaster values in [0,1]

  // Cell count per shape, index 1..8 (index 0 unused).
  std::vector<int> shape_cell_counts() const;
  // Instance (connected component) count per shape, index 1..8.
  std::vector<int> shape_instance_counts() const;

  // Dominant shape by cell count, ties to the lowest shape index.
  int dominant_shape() const;
  std::string scene_class() const;  // name of dominant shape

  // building+road cells strictly exceeding field+tree cells.
  bool is_urban() const;
};

struct SceneInstance {
  int shape = 0, color = 0;
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // inclusive cell bounds
  int cell_count = 0;
};

// Connected components (4-adjacency over equal codes), in row-major discovery
// order.
std::vector<SceneInstance> scene_instances(const Scene& scene);

// Tight bounds of an instance on the 0-1000 normalized pixel-edge scale.
struct CellBounds {
  int x_min, y_min, x_max, y_max;
};
CellBounds instance_bounds_0_1000(const SceneInstance& inst);

// Deterministic scene from seed. Theme shape drawn from a skewed prior
// (imbalanced scene classes, like real overhead-imagery datasets); theme
// cells strictly dominate every distractor shape.
Scene generate_scene(uint64_t seed);

}  // namespace rlvr
