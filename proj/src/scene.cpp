#include "rlvr/scene.hpp"

#include <algorithm>
#include <cmath>

#include "rlvr/vocab.hpp"

namespace rlvr {

namespace {

// 2x2 binary glyph per shape (row-major), index = shape-1. The odd-weight
// code: every pair of shapes differs in at least two pixels, so patch
// statistics separate them cleanly.
constexpr double kGlyph[8][4] = {
    {1, 0, 0, 0},  // tank
    {0, 1, 0, 0},  // plane
    {0, 0, 1, 0},  // ship
    {0, 0, 0, 1},  // building
    {1, 1, 1, 0},  // tree
    {1, 1, 0, 1},  // field
    {1, 0, 1, 1},  // road
    {0, 1, 1, 1},  // pond
};

double color_intensity(int color) { return 0.55 + 0.15 * (color - 1); }

constexpr int kShapeCount = 8;

// Theme prior, indexed by shape-1 (tank, plane, ship, building, tree, field,
// road, pond). Skewed on purpose: scene classes are imbalanced.
constexpr double kThemeWeights[kShapeCount] = {0.07, 0.08, 0.10, 0.26, 0.18, 0.14, 0.11, 0.06};

}  // namespace

std::vector<double> Scene::render() const {
  std::vector<double> raster(static_cast<size_t>(kRaster) * kRaster, 0.0);
  for (int r = 0; r < kGrid; ++r) {
    for (int c = 0; c < kGrid; ++c) {
      const uint8_t code = at(r, c);
      if (code == 0) continue;
      const int shape = shape_of(code);
      const double inten = color_intensity(color_of(code));
      const double* g = kGlyph[shape - 1];
      for (int dr = 0; dr < kCellPx; ++dr)
        for (int dc = 0; dc < kCellPx; ++dc)
          raster[static_cast<size_t>(r * kCellPx + dr) * kRaster + (c * kCellPx + dc)] =
              g[dr * kCellPx + dc] * inten;
    }
  }
  return raster;
}

std::vector<int> Scene::shape_cell_counts() const {
  std::vector<int> counts(kShapeCount + 1, 0);
  for (uint8_t code : cells)
    if (code != 0) ++counts[shape_of(code)];
  return counts;
}

std::vector<int> Scene::shape_instance_counts() const {
  std::vector<int> counts(kShapeCount + 1, 0);
  for (const auto& inst : scene_instances(*this)) ++counts[inst.shape];
  return counts;
}

int Scene::dominant_shape() const {
  const auto counts = shape_cell_counts();
  int best = 1;
  for (int s = 2; s <= kShapeCount; ++s)
    if (counts[s] > counts[best]) best = s;
  return best;
}

std::string Scene::scene_class() const { return shape_names()[dominant_shape() - 1]; }

bool Scene::is_urban() const {
  const auto counts = shape_cell_counts();
  // shapes: 4=building, 7=road, 6=field, 5=tree
  return counts[4] + counts[7] > counts[6] + counts[5];
}

std::vector<SceneInstance> scene_instances(const Scene& scene) {
  const int n = Scene::kGrid;
  std::vector<int> mark(static_cast<size_t>(n) * n, 0);
  std::vector<SceneInstance> out;
  std::vector<int> stack;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int idx = r * n + c;
      const uint8_t code = scene.cells[idx];
      if (code == 0 || mark[idx]) continue;
      SceneInstance inst;
      inst.shape = Scene::shape_of(code);
      inst.color = Scene::color_of(code);
      inst.r0 = inst.r1 = r;
      inst.c0 = inst.c1 = c;
      stack.assign(1, idx);
      mark[idx] = 1;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++inst.cell_count;
        const int cr = cur / n, cc = cur % n;
        inst.r0 = std::min(inst.r0, cr);
        inst.r1 = std::max(inst.r1, cr);
        inst.c0 = std::min(inst.c0, cc);
        inst.c1 = std::max(inst.c1, cc);
        const int nb[4] = {cur - n, cur + n, cur - 1, cur + 1};
        const bool ok[4] = {cr > 0, cr < n - 1, cc > 0, cc < n - 1};
        for (int k = 0; k < 4; ++k) {
          if (!ok[k]) continue;
          if (!mark[nb[k]] && scene.cells[nb[k]] == code) {
            mark[nb[k]] = 1;
            stack.push_back(nb[k]);
          }
        }
      }
      out.push_back(inst);
    }
  }
  return out;
}

CellBounds instance_bounds_0_1000(const SceneInstance& inst) {
  const auto edge = [](int px) {
    return static_cast<int>(std::lround(1000.0 * px / Scene::kRaster));
  };
  CellBounds b;
  b.x_min = edge(inst.c0 * Scene::kCellPx);
  b.x_max = edge((inst.c1 + 1) * Scene::kCellPx);
  b.y_min = edge(inst.r0 * Scene::kCellPx);
  b.y_max = edge((inst.r1 + 1) * Scene::kCellPx);
  return b;
}

namespace {

// Places a w×h block of `code` keeping a one-cell margin from everything
// already placed. Returns false if no free spot was found in the attempts.
bool place_block(Scene& scene, std::vector<uint8_t>& blocked, Rng& rng, int w, int h,
                 uint8_t code) {
  const int n = Scene::kGrid;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int r = static_cast<int>(rng.below(n - h + 1));
    const int c = static_cast<int>(rng.below(n - w + 1));
    bool free = true;
    for (int rr = r; rr < r + h && free; ++rr)
      for (int cc = c; cc < c + w && free; ++cc)
        if (blocked[static_cast<size_t>(rr) * n + cc]) free = false;
    if (!free) continue;
    for (int rr = r; rr < r + h; ++rr)
      for (int cc = c; cc < c + w; ++cc)
        scene.cells[static_cast<size_t>(rr) * n + cc] = code;
    for (int rr = std::max(0, r - 1); rr < std::min(n, r + h + 1); ++rr)
      for (int cc = std::max(0, c - 1); cc < std::min(n, c + w + 1); ++cc)
        blocked[static_cast<size_t>(rr) * n + cc] = 1;
    return true;
  }
  return false;
}

}  // namespace

Scene generate_scene(uint64_t seed) {
  Scene scene;
  scene.seed = seed;
  scene.cells.assign(static_cast<size_t>(Scene::kGrid) * Scene::kGrid, 0);
  std::vector<uint8_t> blocked(scene.cells.size(), 0);
  Rng rng = Rng(seed).fork(0x5ce9e);

  std::vector<double> weights(kThemeWeights, kThemeWeights + kShapeCount);
  const int theme = static_cast<int>(rng.pick_weighted(weights)) + 1;

  // Theme saturation keeps the dominant shape readable from patch statistics
  // anywhere in the image, the way a land-cover class reads from texture.
  const int theme_instances = 20 + static_cast<int>(rng.below(6));  // 20..25
  int theme_cells = 0;
  for (int i = 0; i < theme_instances; ++i) {
    const int w = 3 + static_cast<int>(rng.below(3));
    const int h = 3 + static_cast<int>(rng.below(3));
    const int color = 1 + static_cast<int>(rng.below(4));
    if (place_block(scene, blocked, rng, w, h, Scene::code_of(theme, color)))
      theme_cells += w * h;
  }

  // Distractors stay strictly below the theme's cell count.
  for (int shape = 1; shape <= kShapeCount; ++shape) {
    if (shape == theme) continue;
    int cells = 0;
    const int want = static_cast<int>(rng.below(3));  // 0..2 instances
    for (int i = 0; i < want; ++i) {
      const int w = 2 + static_cast<int>(rng.below(2));
      const int h = 2 + static_cast<int>(rng.below(2));
      if (cells + w * h >= theme_cells) break;
      const int color = 1 + static_cast<int>(rng.below(4));
      if (place_block(scene, blocked, rng, w, h, Scene::code_of(shape, color))) cells += w * h;
    }
  }
  return scene;
}

}  // namespace rlvr
