#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rlvr/policy.hpp"
#include "rlvr/rewards.hpp"
#include "rlvr/taskgen.hpp"

namespace rlvr {

struct EvalReport {
  int checkpoint_step = -1;
  std::optional<double> cls_accuracy;         // absent when the kind is absent
  std::optional<double> vqa_accuracy;
  std::optional<double> vg_precision_at_50;   // fraction of VG samples with IoU >= 0.5
  double format_rate = 0.0;
  double mean_total_reward = 0.0;
  int n_cls = 0, n_vqa = 0, n_vg = 0;
  int unparseable = 0;  // no extractable answer (format failures vs wrong answers stay separate)
  uint64_t eval_seed = 0;
  std::string eval_set_id;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

struct PredictionLog {
  std::string id;
  std::string completion;
  RewardBreakdown reward;
  std::optional<double> iou_value;  // VG only
};

// Anything that turns a sample into completion text; the policy path and the
// test oracle both fit.
using CompletionFn = std::function<std::string(const Sample&, int index)>;

EvalReport evaluate_with(const CompletionFn& complete, const std::vector<Sample>& eval_set,
                         const RewardConfig& reward_cfg, const std::string& eval_set_id,
                         int checkpoint_step, std::vector<PredictionLog>* log = nullptr);

// One sampled completion per item at eval temperature (paper setting: 1) with
// a fixed seed; deterministic given (checkpoint, eval_set, seed).
EvalReport evaluate(const Policy& policy, const std::vector<Sample>& eval_set,
                    const RewardConfig& reward_cfg, double temperature, uint64_t eval_seed,
                    int max_new_tokens, const std::string& eval_set_id = "",
                    int checkpoint_step = -1, std::vector<PredictionLog>* log = nullptr);

void save_prediction_log(const std::string& path, const std::vector<PredictionLog>& log);

struct SweepResult {
  std::vector<EvalReport> reports;                 // ascending checkpoint step
  std::map<std::string, int> best_step_by_metric;  // ties -> earliest step
  std::string table_text;
};

// Evaluates every ckpt_*.bin in the directory.
SweepResult sweep(const std::string& checkpoint_dir, const std::vector<Sample>& eval_set,
                  const Vocabulary& vocab, const RewardConfig& reward_cfg, double temperature,
                  uint64_t eval_seed, int max_new_tokens, const std::string& eval_set_id = "");

struct CompareResult {
  std::string table_text;  // aligned, deltas vs the first report
  std::string table_csv;
  std::string warning;     // non-empty when eval-set ids differ
};

CompareResult compare(const std::vector<EvalReport>& reports,
                      const std::vector<std::string>& labels);

}  // namespace rlvr
