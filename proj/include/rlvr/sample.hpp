#pragma once

#include <array>
#include <optional>
#include <string>

#include "rlvr/scene.hpp"

namespace rlvr {

enum class TaskKind { CLS, VQA, VG };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct BBox;  // rewards.hpp

// One training/eval case: a scene, a fully rendered user prompt, and the
// verifiable ground truth (answer word for CLS/VQA, box for VG).
struct Sample {
  std::string id;
  TaskKind kind = TaskKind::CLS;
  Scene scene;
  std::string prompt_text;
  std::string truth_text;  // CLS/VQA answer word; for VG the "[[x, y, x, y]]" string
  // VG only: tight object bounds on the 0-1000 scale (x_min, y_min, x_max, y_max).
  std::optional<std::array<int, 4>> truth_box;

  // Ground truth wrapped in the tag structure; scores accuracy 1 by construction.
  std::string reference_completion_text() const;
};

}  // namespace rlvr
