#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "rlvr/eval.hpp"
#include "rlvr/ioutil.hpp"
#include "rlvr/trainer.hpp"

using namespace rlvr;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

PolicyConfig tiny_config(uint64_t seed = 1) {
  PolicyConfig cfg;
  cfg.embed_dim = 12;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.max_seq_len = 96;
  cfg.patch_count = 16;
  cfg.seed = seed;
  return cfg;
}

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rlvr_ev_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("oracle completion source scores perfectly on every metric") {
  const auto eval_set = render_pool(60, 910);
  const CompletionFn oracle = [](const Sample& s, int) {
    return s.reference_completion_text();
  };
  const EvalReport rep = evaluate_with(oracle, eval_set, RewardConfig{}, "oracle-set", 0);
  REQUIRE(rep.cls_accuracy.has_value());
  REQUIRE(rep.vqa_accuracy.has_value());
  REQUIRE(rep.vg_precision_at_50.has_value());
  CHECK(*rep.cls_accuracy == 1.0);
  CHECK(*rep.vqa_accuracy == 1.0);
  CHECK(*rep.vg_precision_at_50 == 1.0);
  CHECK(rep.format_rate == 1.0);
  CHECK(rep.mean_total_reward == 2.0);
  CHECK(rep.unparseable == 0);
  CHECK(rep.n_cls + rep.n_vqa + rep.n_vg == 60);
}

TEST_CASE("an untrained policy sits at chance on CLS (binomial 3-sigma)") {
  Policy policy(tiny_config(5150), vocab());
  const auto cls_set = filter_by_kind(render_pool(1536, 911), TaskKind::CLS);
  REQUIRE(cls_set.size() == 512);
  const EvalReport rep = evaluate(policy, cls_set, RewardConfig{}, 1.0, 99, 32, "cls-set", 0);
  REQUIRE(rep.cls_accuracy.has_value());
  const double p = 1.0 / 8.0;
  const double sigma = std::sqrt(p * (1 - p) / 512);
  CHECK(std::abs(*rep.cls_accuracy - p) <= 3 * sigma);
  CHECK(!rep.vqa_accuracy.has_value());      // kind absent -> not applicable, not zero
  CHECK(!rep.vg_precision_at_50.has_value());
}

TEST_CASE("VG precision threshold: iou 0.49 misses, 0.51 hits") {
  Sample vg;
  vg.id = "t";
  vg.kind = TaskKind::VG;
  vg.truth_box = {{0, 0, 1000, 490}};  // pred [[0,0,1000,1000]] -> iou 0.49
  vg.truth_text = "[[0, 0, 1000, 490]]";
  Sample vg2 = vg;
  vg2.truth_box = {{0, 0, 1000, 510}};  // -> iou 0.51
  const CompletionFn fullbox = [](const Sample&, int) {
    return std::string("<reasoning>r</reasoning><answer>[[0, 0, 1000, 1000]]</answer>");
  };
  const EvalReport miss = evaluate_with(fullbox, {vg}, RewardConfig{}, "a", 0);
  CHECK(*miss.vg_precision_at_50 == 0.0);
  const EvalReport hit = evaluate_with(fullbox, {vg2}, RewardConfig{}, "a", 0);
  CHECK(*hit.vg_precision_at_50 == 1.0);
}

TEST_CASE("evaluate is a pure function of (policy, eval_set, seed)") {
  Policy policy(tiny_config(31), vocab());
  const auto eval_set = render_pool(48, 912);
  const EvalReport a = evaluate(policy, eval_set, RewardConfig{}, 1.0, 7, 32, "s", 0);
  const EvalReport b = evaluate(policy, eval_set, RewardConfig{}, 1.0, 7, 32, "s", 0);
  CHECK(a.mean_total_reward == b.mean_total_reward);
  CHECK(a.format_rate == b.format_rate);
  CHECK(a.cls_accuracy == b.cls_accuracy);
  const EvalReport c = evaluate(policy, eval_set, RewardConfig{}, 1.0, 8, 32, "s", 0);
  CHECK(a.eval_seed != c.eval_seed);
}

TEST_CASE("precision recomputed from the prediction log matches the report") {
  Policy policy(tiny_config(32), vocab());
  const auto vg_set = filter_by_kind(render_pool(90, 913), TaskKind::VG);
  std::vector<PredictionLog> log;
  const EvalReport rep = evaluate(policy, vg_set, RewardConfig{}, 1.0, 5, 40, "s", 0, &log);
  REQUIRE(log.size() == vg_set.size());
  int hits = 0;
  for (const auto& row : log)
    if (row.iou_value && *row.iou_value >= 0.5) ++hits;
  CHECK(*rep.vg_precision_at_50 == doctest::Approx(double(hits) / vg_set.size()).epsilon(1e-12));
}

TEST_CASE("report JSON round-trips") {
  EvalReport r;
  r.checkpoint_step = 5;
  r.cls_accuracy = 0.75;
  r.format_rate = 0.9;
  r.mean_total_reward = 1.5;
  r.n_cls = 10;
  r.eval_set_id = "abc";
  const EvalReport back = EvalReport::from_json(r.to_json());
  CHECK(back.checkpoint_step == 5);
  CHECK(back.cls_accuracy == 0.75);
  CHECK(!back.vqa_accuracy.has_value());
  CHECK(back.eval_set_id == "abc");
}

TEST_CASE("sweep picks the best step per metric with earliest-step ties") {
  // two checkpoints from a short training run
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.group_size = 2;
  cfg.max_new_tokens = 24;
  cfg.total_steps = 2;
  cfg.checkpoint_every = 1;
  cfg.lr = 1e-3;
  cfg.seed = 77;
  cfg.policy = tiny_config(77);
  const auto pool = render_pool(24, 914);
  FewShotSpec spec;
  spec.n_cls = 2;
  spec.seed = 3;
  const Dataset ds = duplicate_to_batch(sample_fewshot(pool, spec), 8);
  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("sweep");
  train(policy, ds, cfg, dir);

  const auto eval_set = render_pool(24, 915);
  const SweepResult sw = sweep(dir, eval_set, vocab(), RewardConfig{}, 1.0, 9, 32, "es");
  CHECK(sw.reports.size() == 3);  // steps 0, 1, 2
  CHECK(sw.reports.front().checkpoint_step == 0);
  CHECK(sw.reports.back().checkpoint_step == 2);
  for (const auto& [metric, step] : sw.best_step_by_metric) {
    // the chosen step must actually attain the maximum, earliest on ties
    double best = -1;
    int earliest = -1;
    for (const auto& r : sw.reports) {
      double v = -1;
      if (metric == "cls_accuracy") v = r.cls_accuracy.value_or(-1);
      else if (metric == "vqa_accuracy") v = r.vqa_accuracy.value_or(-1);
      else if (metric == "vg_precision_at_50") v = r.vg_precision_at_50.value_or(-1);
      else if (metric == "format_rate") v = r.format_rate;
      else v = r.mean_total_reward;
      if (v > best) {
        best = v;
        earliest = r.checkpoint_step;
      }
    }
    CHECK(step == earliest);
  }
  CHECK_THROWS_AS(sweep(temp_dir("empty"), eval_set, vocab(), RewardConfig{}, 1.0, 9, 32, "es"),
                  std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("compare: self-comparison has zero deltas; mismatched sets warn") {
  EvalReport r;
  r.cls_accuracy = 0.5;
  r.vqa_accuracy = 0.25;
  r.format_rate = 1.0;
  r.mean_total_reward = 1.25;
  r.eval_set_id = "same";
  const CompareResult cr = compare({r, r}, {"a", "b"});
  CHECK(cr.warning.empty());
  CHECK(cr.table_csv.find("(") == std::string::npos);
  CHECK(cr.table_csv.find(",0.5,0") != std::string::npos);  // value, zero delta

  EvalReport other = r;
  other.eval_set_id = "different";
  const CompareResult warned = compare({r, other}, {"a", "b"});
  CHECK(!warned.warning.empty());
  CHECK(warned.table_text.find("warning") != std::string::npos);
  CHECK_THROWS_AS(compare({r}, {"a"}), std::invalid_argument);
}

TEST_CASE("prediction log writes in the sample line format") {
  std::vector<PredictionLog> log(2);
  log[0].id = "x";
  log[0].completion = "<answer>ship</answer>";
  log[0].reward.total = 1.0;
  log[1].id = "y";
  log[1].iou_value = 0.75;
  const std::string path = temp_dir("log") + "/pred.jsonl";
  save_prediction_log(path, log);
  const std::string body = read_file(path);
  CHECK(body.find("\"type\":\"predictions\"") != std::string::npos);
  CHECK(body.find("\"id\":\"x\"") != std::string::npos);
  CHECK(body.find("\"iou\":0.75") != std::string::npos);
}
