#pragma once

#include <array>
#include <optional>
#include <string>

#include "rlvr/sample.hpp"

namespace rlvr {

// Axis-aligned box on the 0-1000 normalized scale. Construction enforces
// 0 <= min <= max <= 1000 on both axes.
struct BBox {
  int x_min, y_min, x_max, y_max;

  BBox(int x0, int y0, int x1, int y1);
  static BBox from_array(const std::array<int, 4>& a) { return BBox(a[0], a[1], a[2], a[3]); }

  // Model outputs are clamped into range and min/max-ordered instead of being
  // rejected, so the grounding signal stays dense.
  static BBox canonicalize(long x0, long y0, long x1, long y1);
};

struct RewardConfig {
  double iou_hi = 0.7;
  double iou_lo = 0.4;
  double format_weight = 1.0;
  double accuracy_weight = 1.0;
  bool case_fold = true;
  bool trim = true;

  void validate() const;
  std::string to_kv() const;                     // human-readable key = value block
  static RewardConfig from_kv(const std::string& text);
};

struct RewardBreakdown {
  double format = 0.0;    // {0, 1}
  double accuracy = 0.0;  // [0, 1]
  double total = 0.0;     // format_weight*format + accuracy_weight*accuracy
};

struct ParsedOutput {
  std::optional<std::string> reasoning_text;
  std::optional<std::string> answer_text;
  std::optional<BBox> bbox;
};

// 1 iff the text is exactly one <reasoning>...</reasoning> block followed by
// one <answer>...</answer> block, anything inside, at most whitespace outside.
// Never throws, any input scores.
int verify_format(const std::string& text);

// Extracts the first answer (and reasoning) block's inner text and attempts a
// "[[int, int, int, int]]" box parse on the answer. Never throws.
ParsedOutput parse_answer(const std::string& text);

int exact_match_reward(const std::string& pred, const std::string& truth,
                       const RewardConfig& cfg);

double iou(const BBox& a, const BBox& b);

// v >= hi -> 1; lo <= v < hi -> v; v < lo -> 0. Both bounds inclusive on the
// rewarding side: v == lo earns v, v == hi earns 1.
double quantized_iou_reward(double v, const RewardConfig& cfg);

RewardBreakdown score(const Sample& sample, const std::string& completion_text,
                      const RewardConfig& cfg);

std::string normalize_answer(const std::string& s, const RewardConfig& cfg);

}  // namespace rlvr
