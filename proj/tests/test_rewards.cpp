#include <doctest.h>

#include <string>
#include <algorithm>
#include <stdexcept>

#include "rlvr/rewards.hpp"
#include "rlvr/rng.hpp"

using namespace rlvr;

namespace {

Sample cls_sample(const std::string& truth) {
  Sample s;
  s.kind = TaskKind::CLS;
  s.truth_text = truth;
  return s;
}

Sample vg_sample(int x0, int y0, int x1, int y1) {
  Sample s;
  s.kind = TaskKind::VG;
  s.truth_box = {{x0, y0, x1, y1}};
  s.truth_text = "[[" + std::to_string(x0) + ", " + std::to_string(y0) + ", " +
                 std::to_string(x1) + ", " + std::to_string(y1) + "]]";
  return s;
}

// Structural oracle: enumerate tag sequences; valid iff the four tags appear
// once each, in canonical order, with nothing but whitespace outside them.
std::string tags_in_order(const std::vector<std::string>& seq) {
  std::string out;
  for (const auto& t : seq) out += t + " x ";
  return out;
}

}  // namespace

TEST_CASE("verify_format accepts the canonical structure") {
  CHECK(verify_format("<reasoning>two fields</reasoning><answer>farmland</answer>") == 1);
  CHECK(verify_format("  <reasoning> r </reasoning> <answer> a </answer>  ") == 1);
  CHECK(verify_format("<reasoning></reasoning><answer></answer>") == 1);  // content-irrespective
}

TEST_CASE("verify_format rejects missing, reordered, nested, duplicated tags") {
  CHECK(verify_format("farmland") == 0);
  CHECK(verify_format("<answer>yes</answer><reasoning>x</reasoning>") == 0);  // order violation
  CHECK(verify_format("<reasoning>r</reasoning>") == 0);
  CHECK(verify_format("<answer>a</answer>") == 0);
  CHECK(verify_format("<reasoning>r</reasoning><answer>a</answer><answer>b</answer>") == 0);
  CHECK(verify_format("<reasoning><reasoning>r</reasoning></reasoning><answer>a</answer>") == 0);
  CHECK(verify_format("junk <reasoning>r</reasoning><answer>a</answer>") == 0);
  CHECK(verify_format("<reasoning>r</reasoning> mid <answer>a</answer>") == 0);
  CHECK(verify_format("<reasoning>r</reasoning><answer>a</answer> tail") == 0);
  CHECK(verify_format("") == 0);

  // permutation sweep against the structural oracle
  const std::vector<std::string> tags = {"<reasoning>", "</reasoning>", "<answer>", "</answer>"};
  std::vector<int> idx = {0, 1, 2, 3};
  do {
    std::vector<std::string> seq;
    for (int i : idx) seq.push_back(tags[i]);
    const bool canonical = idx == std::vector<int>{0, 1, 2, 3};
    CHECK(verify_format(tags_in_order(seq) == "" ? "" : tags_in_order(seq)) == 0);
    std::string tight = seq[0] + "r" + seq[1] + seq[2] + "a" + seq[3];
    CHECK(verify_format(tight) == (canonical ? 1 : 0));
  } while (std::next_permutation(idx.begin(), idx.end()));
}

TEST_CASE("verify_format implies an extractable answer") {
  const std::string text = "<reasoning>r</reasoning><answer> ship </answer>";
  REQUIRE(verify_format(text) == 1);
  CHECK(parse_answer(text).answer_text.has_value());
}

TEST_CASE("parse_answer basics") {
  auto p = parse_answer("<reasoning>r</reasoning><answer> Yes </answer>");
  REQUIRE(p.answer_text.has_value());
  CHECK(*p.answer_text == "Yes");  // pre-normalization
  REQUIRE(p.reasoning_text.has_value());
  CHECK(*p.reasoning_text == "r");

  auto box = parse_answer("<answer>[[100, 200, 300, 400]]</answer>");
  REQUIRE(box.bbox.has_value());
  CHECK(box.bbox->x_min == 100);
  CHECK(box.bbox->y_min == 200);
  CHECK(box.bbox->x_max == 300);
  CHECK(box.bbox->y_max == 400);

  auto bad = parse_answer("<answer>[[100, 200, 300]]</answer>");
  CHECK(!bad.bbox.has_value());
  CHECK(*bad.answer_text == "[[100, 200, 300]]");  // arity violation keeps the text

  CHECK(!parse_answer("no tags at all").answer_text.has_value());
  // spaced box text, as decoded token streams produce it
  auto spaced = parse_answer("<answer> [[ 100 , 200 , 300 , 400 ]] </answer>");
  CHECK(spaced.bbox.has_value());
}

TEST_CASE("predicted boxes canonicalize instead of failing") {
  auto p = parse_answer("<answer>[[1200, -5, 100, 400]]</answer>");
  REQUIRE(p.bbox.has_value());
  CHECK(p.bbox->x_min == 100);   // clamped to 1000 then ordered
  CHECK(p.bbox->x_max == 1000);
  CHECK(p.bbox->y_min == 0);
  CHECK(p.bbox->y_max == 400);
}

TEST_CASE("exact match with normalization") {
  RewardConfig cfg;
  CHECK(exact_match_reward("farmland", "farmland", cfg) == 1);
  CHECK(exact_match_reward("  YES ", "yes", cfg) == 1);
  CHECK(exact_match_reward("rural", "urban", cfg) == 0);
  RewardConfig strict;
  strict.case_fold = false;
  strict.trim = false;
  CHECK(exact_match_reward("YES", "yes", strict) == 0);
  CHECK_THROWS_AS(exact_match_reward("x", "", cfg), std::invalid_argument);
}

TEST_CASE("iou identities and hand-computed overlap") {
  const BBox a(0, 0, 200, 200), b(100, 0, 300, 200);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(BBox(0, 0, 100, 100), BBox(500, 500, 600, 600)) == 0.0);
  // intersection 100*200, union 2*(200*200)-100*200 -> 1/3
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(iou(a, b) == iou(b, a));
  // zero-area boxes: union 0 -> 0
  CHECK(iou(BBox(5, 5, 5, 5), BBox(5, 5, 5, 5)) == 0.0);
  CHECK_THROWS_AS(BBox(10, 0, 5, 100), std::invalid_argument);
}

TEST_CASE("iou symmetry property on random boxes") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    const auto mk = [&] {
      int x0 = static_cast<int>(rng.below(1001)), x1 = static_cast<int>(rng.below(1001));
      int y0 = static_cast<int>(rng.below(1001)), y1 = static_cast<int>(rng.below(1001));
      return BBox(std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1));
    };
    const BBox a = mk(), b = mk();
    CHECK(iou(a, b) == iou(b, a));
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("quantized IoU reward rule and boundaries") {
  RewardConfig cfg;
  CHECK(quantized_iou_reward(0.75, cfg) == 1.0);
  CHECK(quantized_iou_reward(0.5, cfg) == 0.5);
  CHECK(quantized_iou_reward(0.39, cfg) == 0.0);
  CHECK(quantized_iou_reward(0.4, cfg) == 0.4);  // inclusive lower bound earns v
  CHECK(quantized_iou_reward(0.7, cfg) == 1.0);  // inclusive upper rule
  CHECK_THROWS_AS(quantized_iou_reward(1.5, cfg), std::invalid_argument);
  CHECK_THROWS_AS(quantized_iou_reward(-0.1, cfg), std::invalid_argument);
}

TEST_CASE("quantizer is monotone and idempotent on its output regions") {
  RewardConfig cfg;
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = i / 1000.0;
    const double q = quantized_iou_reward(v, cfg);
    CHECK(q >= prev);
    prev = q;
    CHECK(quantized_iou_reward(q, cfg) == q);  // idempotent
  }
}

TEST_CASE("score composes format and accuracy independently") {
  RewardConfig cfg;
  Sample vg = vg_sample(100, 200, 300, 400);
  const auto perfect =
      score(vg, "<reasoning>r</reasoning><answer>[[100, 200, 300, 400]]</answer>", cfg);
  CHECK(perfect.format == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.total == 2.0);

  // correct label, missing reasoning tags: rewards are independent signals
  const auto label_only = score(cls_sample("farmland"), "<answer>farmland</answer>", cfg);
  CHECK(label_only.format == 0.0);
  CHECK(label_only.accuracy == 1.0);
  CHECK(label_only.total == 1.0);

  const auto empty = score(cls_sample("farmland"), "", cfg);
  CHECK(empty.format == 0.0);
  CHECK(empty.accuracy == 0.0);
  CHECK(empty.total == 0.0);
}

TEST_CASE("score applies the quantizer to VG accuracy") {
  RewardConfig cfg;
  Sample vg = vg_sample(0, 0, 200, 200);
  // iou 1/3 < 0.4 -> 0
  const auto low = score(vg, "<reasoning>r</reasoning><answer>[[100, 0, 300, 200]]</answer>", cfg);
  CHECK(low.accuracy == 0.0);
  CHECK(low.total == 1.0);
  // iou 0.5 in the pass-through band -> exact value
  const auto mid = score(vg, "<reasoning>r</reasoning><answer>[[0, 0, 200, 100]]</answer>", cfg);
  CHECK(mid.accuracy == 0.5);
}

TEST_CASE("score never throws on arbitrary bytes (fuzz)") {
  RewardConfig cfg;
  Sample s = cls_sample("ship");
  Sample vg = vg_sample(0, 0, 500, 500);
  Rng rng(4242);
  const std::string alphabet = "<>/reasoninganswer[],0123456789 \t\n\xc3\xa9\xff";
  for (int i = 0; i < 20000; ++i) {
    std::string text;
    const int len = static_cast<int>(rng.below(80));
    for (int j = 0; j < len; ++j) text += alphabet[rng.below(alphabet.size())];
    CHECK_NOTHROW(score(s, text, cfg));
    CHECK_NOTHROW(score(vg, text, cfg));
    const auto bd = score(s, text, cfg);
    CHECK(bd.total == cfg.format_weight * bd.format + cfg.accuracy_weight * bd.accuracy);
  }
}

TEST_CASE("reward config round-trips through its key-value form") {
  RewardConfig cfg;
  cfg.iou_hi = 0.8;
  cfg.iou_lo = 0.3;
  cfg.accuracy_weight = 2.0;
  cfg.case_fold = false;
  const RewardConfig back = RewardConfig::from_kv(cfg.to_kv());
  CHECK(back.iou_hi == cfg.iou_hi);
  CHECK(back.iou_lo == cfg.iou_lo);
  CHECK(back.accuracy_weight == cfg.accuracy_weight);
  CHECK(back.case_fold == cfg.case_fold);
  CHECK_THROWS_AS(RewardConfig::from_kv("iou_lo = 0.9\niou_hi = 0.2\n"), std::invalid_argument);
}
