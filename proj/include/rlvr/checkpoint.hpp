#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/policy.hpp"

namespace rlvr {

// Corrupted or tampered artifact (integrity hash mismatch).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Self-describing checkpoint container (see docs/checkpoint_format.md):
//   magic "RLVRCKP1" | u64 header length | JSON header | f64 payload | u64 FNV-1a
// The header lists config, vocabulary, step counter, run seed, and every
// tensor's name/shape in payload order. load(save(x)) is byte identity;
// a corrupted file fails the integrity hash and is refused.
struct Checkpoint {
  PolicyConfig config;
  std::vector<std::string> vocab_tokens;
  uint64_t step = 0;
  uint64_t run_seed = 0;  // RNG basis; counter streams re-derive from (seed, step, ...)
  std::vector<std::pair<std::string, ad::TensorPtr>> tensors;  // params then optimizer moments
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Policy + optional Adam moments ("adam_m."/"adam_v." prefixes) + step.
struct OptimMoments {
  uint64_t adam_step = 0;
  std::vector<std::pair<std::string, std::vector<double>>> m, v;
};

Checkpoint make_checkpoint(const Policy& policy, uint64_t step, uint64_t run_seed,
                           const OptimMoments* moments = nullptr);
Policy restore_policy(const Checkpoint& ck, const Vocabulary& vocab);
OptimMoments restore_moments(const Checkpoint& ck);
bool has_moments(const Checkpoint& ck);

}  // namespace rlvr
