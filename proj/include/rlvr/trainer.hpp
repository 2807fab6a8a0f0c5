#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlvr/grpo.hpp"
#include "rlvr/taskgen.hpp"

namespace rlvr {

struct TrainConfig {
  int batch_size = 128;
  int group_size = 4;
  double train_temperature = 0.9;
  double lr = 1e-4;  // from-scratch toy default; set 1e-6 for the reference setting
  double beta = 0.001;
  double clip_eps = 0.2;
  int max_new_tokens = 64;
  int total_steps = 1000;
  int checkpoint_every = 100;
  int grad_accum = 1;  // in [1,8]; partitions the batch sum, result unchanged
  uint64_t seed = 0;
  double std_floor = 1e-6;
  PolicyConfig policy;
  RewardConfig reward;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);

  GrpoConfig grpo() const { return {beta, clip_eps, std_floor, train_temperature}; }
};

struct MetricsRow {
  int step = 0;
  double mean_total_reward = 0.0;
  double mean_format_reward = 0.0;
  double mean_accuracy_reward = 0.0;
  double mean_completion_length = 0.0;
  double mean_kl = 0.0;
  double pg_loss = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_header();
std::string metrics_row_csv(const MetricsRow& row);
std::vector<MetricsRow> load_metrics(const std::string& path);

struct TrainResult {
  int steps_run = 0;
  bool halted_nonfinite = false;
  std::string metrics_path;
  std::vector<std::string> checkpoint_paths;
  std::vector<MetricsRow> metrics;
};

// One training run. Writes out_dir/metrics.csv, ckpt_STEP.bin at step 0,
// every checkpoint_every steps, and on non-finite halt (plus a diagnostics
// file). Fully deterministic given (seed, config, dataset): rollout RNG
// streams derive from (seed, step, slot, draw) counters, and all reductions
// run in fixed order. wall_ms is the one clock-dependent column.
TrainResult train(Policy& policy, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir);

// Continues a checkpointed run; reproduces the unbroken trajectory exactly
// (parameters, Adam moments, and RNG basis all restore from the file).
// `cfg` may change hyperparameters (e.g. beta); the RNG seed comes from the
// checkpoint.
TrainResult resume(const std::string& checkpoint_path, const Dataset& dataset, TrainConfig cfg,
                   const std::string& out_dir, const Vocabulary& vocab);

// Samples, scores and groups one batch of rollouts (step is an RNG key).
std::vector<RolloutGroup> rollout_batch(const Policy& policy, const Dataset& dataset,
                                        const TrainConfig& cfg, int step,
                                        std::vector<RewardBreakdown>* breakdowns = nullptr);

std::string checkpoint_name(int step);

}  // namespace rlvr
