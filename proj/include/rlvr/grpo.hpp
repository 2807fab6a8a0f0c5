#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rlvr/checkpoint.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rewards.hpp"

namespace rlvr {

// The G rollouts for one prompt; the unit advantages are normalized over.
// Sampling-time log-probs live in each Completion (the "old" side of the
// clipped ratio).
struct RolloutGroup {
  int prompt_id = 0;
  const Sample* sample = nullptr;
  std::vector<Completion> completions;
  std::vector<double> rewards;  // RewardBreakdown totals, aligned with completions
  // Optional cached reference-prefix pass (the reference never changes, so
  // the trainer builds these once per run).
  RolloutPrefixPtr ref_prefix;
};

struct AdvantageSet {
  std::vector<double> advantages;
};

// A_i = (r_i - mean) / max(std, std_floor), population std; all-equal groups
// short-circuit to exact zeros. Throws for fewer than two rewards.
AdvantageSet group_advantages(const std::vector<double>& rewards, double std_floor = 1e-6);

struct LossTerms {
  double pg_loss = 0.0;
  double kl_loss = 0.0;
  double total = 0.0;  // pg_loss + beta * kl_loss
  double beta = 0.0;
};

struct GrpoConfig {
  double beta = 0.001;
  double clip_eps = 0.2;
  double std_floor = 1e-6;
  double temperature = 0.9;  // distribution both rollout and update evaluate
};

// Thrown when a step produces a non-finite loss; parameters are untouched.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- per-completion loss terms on a tape ------------------------------
// Clipped surrogate, mean over the completion's tokens:
//   -mean_t min(rho*A, clip(rho, 1-eps, 1+eps)*A),  rho = exp(new - old)
ad::TensorPtr pg_term(ad::Tape* tape, const ad::TensorPtr& new_logprobs,
                      const std::vector<double>& old_logprobs, double advantage,
                      double clip_eps);

// k3 estimator on sampled tokens, mean over the completion's tokens:
//   mean_t exp(ref-new) - (ref-new) - 1   (non-negative, zero iff equal)
ad::TensorPtr kl_term(ad::Tape* tape, const ad::TensorPtr& new_logprobs,
                      const std::vector<double>& ref_logprobs);

// ---- batch forms (mean over completions of the terms above) -----------
ad::TensorPtr pg_loss(ad::Tape* tape, const std::vector<ad::TensorPtr>& new_logprobs,
                      const std::vector<std::vector<double>>& old_logprobs,
                      const std::vector<double>& advantages, double clip_eps);
ad::TensorPtr kl_penalty(ad::Tape* tape, const std::vector<ad::TensorPtr>& new_logprobs,
                         const std::vector<std::vector<double>>& ref_logprobs);

// Adam with bias correction. Moment layout mirrors the ParamSet.
struct OptimState {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  uint64_t step = 0;
  std::vector<std::pair<std::string, std::vector<double>>> m, v;

  static OptimState init(const ParamSet& params, double lr);
  // One update from the accumulated grads; zeroes grads afterwards.
  void apply(ParamSet& params);

  OptimMoments moments() const;
  void load_moments(const ParamSet& params, const OptimMoments& mm);
};

// Accumulates d(total)/d(params) into policy.params() grads (does not zero
// them first) and returns the loss terms. Completions are processed by a
// worker pool in fixed-size chunks; per-slot gradients reduce in completion
// order, so results do not depend on the thread count.
LossTerms grpo_backward(Policy& policy, const Policy& reference,
                        const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg);

// Loss values only (no tape, no gradient); same arithmetic as grpo_backward.
LossTerms grpo_loss_value(const Policy& policy, const Policy& reference,
                          const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg);

// Full step: backward + finite check + Adam update. Throws NumericError on a
// non-finite loss and leaves parameters unchanged.
LossTerms grpo_step(Policy& policy, const Policy& reference,
                    const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg,
                    OptimState& opt);

}  // namespace rlvr
