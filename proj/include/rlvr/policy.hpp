#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/grammar.hpp"
#include "rlvr/rng.hpp"
#include "rlvr/tensor.hpp"
#include "rlvr/vocab.hpp"

namespace rlvr {

struct PolicyConfig {
  int embed_dim = 24;
  int num_layers = 2;
  int num_heads = 2;
  int max_seq_len = 128;
  int patch_count = 16;  // perfect square whose grid divides the raster
  uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return embed_dim / num_heads; }
};

struct Completion {
  std::vector<int> token_ids;        // ends with EOS unless the budget ran out
  std::string text;                  // decode(token_ids)
  std::vector<double> token_logprobs;  // under the sampling-time policy, all <= 0
  int length() const { return static_cast<int>(token_ids.size()); }
};

// Named parameter tensors in a fixed order (checkpoint layout order).
struct ParamSet {
  std::vector<std::pair<std::string, ad::TensorPtr>> entries;

  ad::TensorPtr find(const std::string& name) const;
  ParamSet clone(bool requires_grad) const;
  void zero_grads();
  size_t total_params() const;
  // Adds `other`'s grads into this set's grads (same layout required).
  void accumulate_grads_from(const ParamSet& other);
};

// Cached forward pass over a (image, prompt) prefix: per-layer KV state plus
// the last row's head output. Valid only while the parameters it was built
// from are unchanged; duplicated batch slots and the frozen reference reuse it.
class RolloutPrefix;
using RolloutPrefixPtr = std::shared_ptr<const RolloutPrefix>;

// Toy vision-language policy: linear patch encoder whose visual tokens are
// prepended to the prompt, a pre-norm transformer decoder with learned
// positions, weight-tied output head, and grammar-constrained sampling. One
// distribution is used everywhere at a given temperature: sampling records
// log-probabilities of softmax(masked logits / T), and the teacher-forced
// log_probs path evaluates exactly the same distribution.
class Policy {
 public:
  Policy(PolicyConfig cfg, const Vocabulary& vocab);

  const PolicyConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return *vocab_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Deep copy with gradients disabled; the frozen reference policy.
  Policy clone_frozen() const;

  // Patch projection of a raster: [patch_count × embed_dim], on the tape.
  ad::TensorPtr encode_image(ad::Tape* tape, const ParamSet& params,
                             const std::vector<double>& raster) const;
  ad::TensorPtr encode_image(ad::Tape* tape, const std::vector<double>& raster) const {
    return encode_image(tape, params_, raster);
  }

  // G completions sampled at `temperature` (0 = greedy argmax) under the
  // prompt's answer grammar. `stream` should be forked per (step, prompt).
  // Pass a prefix built by make_prefix() to skip the shared prefix pass.
  std::vector<Completion> sample(const std::vector<int>& prompt_tokens,
                                 const std::vector<double>& raster, int group_size,
                                 double temperature, int max_new_tokens, Rng stream,
                                 const RolloutPrefix* prefix = nullptr) const;

  RolloutPrefixPtr make_prefix(const std::vector<int>& prompt_tokens,
                               const std::vector<double>& raster) const;

  // Teacher-forced log-prob values from a cached prefix (incremental path,
  // no tape). Matches log_probs() on the same parameters.
  std::vector<double> log_probs_values_prefix(const RolloutPrefix& prefix,
                                              const std::vector<int>& completion_ids,
                                              double temperature) const;

  // Teacher-forced per-token log-probabilities of `completion_ids`, as a
  // rank-1 tensor on the tape. Matches sample()'s token_logprobs when
  // parameters and temperature are unchanged.
  ad::TensorPtr log_probs(ad::Tape* tape, const ParamSet& params,
                          const std::vector<int>& prompt_tokens,
                          const std::vector<double>& raster,
                          const std::vector<int>& completion_ids, double temperature) const;
  ad::TensorPtr log_probs(ad::Tape* tape, const std::vector<int>& prompt_tokens,
                          const std::vector<double>& raster,
                          const std::vector<int>& completion_ids, double temperature) const {
    return log_probs(tape, params_, prompt_tokens, raster, completion_ids, temperature);
  }

  // Teacher-forced log-probs for a whole rollout group on one tape, sharing
  // the (image, prompt) prefix forward across the group's completions. Values
  // equal per-completion log_probs calls exactly.
  std::vector<ad::TensorPtr> log_probs_group(ad::Tape* tape, const ParamSet& params,
                                             const std::vector<int>& prompt_tokens,
                                             const std::vector<double>& raster,
                                             const std::vector<std::vector<int>>& completions,
                                             double temperature) const;

  // Value-only variant (no tape), e.g. for the frozen reference.
  std::vector<double> log_probs_values(const std::vector<int>& prompt_tokens,
                                       const std::vector<double>& raster,
                                       const std::vector<int>& completion_ids,
                                       double temperature) const;

  std::vector<int> encode_prompt(const std::string& prompt_text) const {
    return vocab_->encode(prompt_text);
  }

  uint64_t step_counter = 0;  // persisted in checkpoints

 private:
  void init_params_();
  std::vector<std::vector<double>> raster_patches_(const std::vector<double>& raster) const;

  PolicyConfig cfg_;
  const Vocabulary* vocab_;
  ParamSet params_;
};

}  // namespace rlvr
