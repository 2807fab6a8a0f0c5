#include "rlvr/grpo.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rlvr {

using ad::Tape;
using ad::TensorPtr;

namespace {

// Fixed chunk width for the gradient worker pool. Grads reduce one chunk at a
// time in completion order; the constant (not the thread count) fixes the
// floating-point reduction order.
constexpr int kGradChunk = 16;

}  // namespace

AdvantageSet group_advantages(const std::vector<double>& rewards, double std_floor) {
  const int g = static_cast<int>(rewards.size());
  if (g < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  AdvantageSet out;
  out.advantages.assign(g, 0.0);
  const auto [mn, mx] = std::minmax_element(rewards.begin(), rewards.end());
  if (*mn == *mx) return out;  // degenerate group: exact zeros
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(var / g), std_floor);
  for (int i = 0; i < g; ++i) out.advantages[i] = (rewards[i] - mean) / sd;
  return out;
}

TensorPtr pg_term(Tape* tape, const TensorPtr& new_logprobs,
                  const std::vector<double>& old_logprobs, double advantage, double clip_eps) {
  if (new_logprobs->data.size() != old_logprobs.size())
    throw std::invalid_argument("pg_term: token sequences misaligned");
  const int n = static_cast<int>(old_logprobs.size());
  TensorPtr ratio = ad::exp_op(tape, ad::add_flat(tape, new_logprobs, old_logprobs, -1.0));
  TensorPtr t1 = ad::scale(tape, ratio, advantage);
  TensorPtr t2 = ad::scale(tape, ad::clamp(tape, ratio, 1.0 - clip_eps, 1.0 + clip_eps),
                           advantage);
  TensorPtr obj = ad::minimum(tape, t1, t2);
  return ad::scale(tape, ad::sum(tape, obj), -1.0 / n);
}

TensorPtr kl_term(Tape* tape, const TensorPtr& new_logprobs,
                  const std::vector<double>& ref_logprobs) {
  if (new_logprobs->data.size() != ref_logprobs.size())
    throw std::invalid_argument("kl_term: token sequences misaligned");
  const int n = static_cast<int>(ref_logprobs.size());
  // t = ref - new; k3 = exp(t) - t - 1
  TensorPtr t = ad::add_flat(tape, ad::scale(tape, new_logprobs, -1.0), ref_logprobs, 1.0);
  TensorPtr k3 = ad::add_const(tape, ad::sub(tape, ad::exp_op(tape, t), t), -1.0);
  return ad::scale(tape, ad::sum(tape, k3), 1.0 / n);
}

TensorPtr pg_loss(Tape* tape, const std::vector<TensorPtr>& new_logprobs,
                  const std::vector<std::vector<double>>& old_logprobs,
                  const std::vector<double>& advantages, double clip_eps) {
  if (new_logprobs.empty() || new_logprobs.size() != old_logprobs.size() ||
      new_logprobs.size() != advantages.size())
    throw std::invalid_argument("pg_loss: completion lists misaligned");
  TensorPtr acc = ad::make_scalar(0.0);
  for (size_t i = 0; i < new_logprobs.size(); ++i)
    acc = ad::add(tape, acc, pg_term(tape, new_logprobs[i], old_logprobs[i], advantages[i],
                                     clip_eps));
  return ad::scale(tape, acc, 1.0 / static_cast<double>(new_logprobs.size()));
}

TensorPtr kl_penalty(Tape* tape, const std::vector<TensorPtr>& new_logprobs,
                     const std::vector<std::vector<double>>& ref_logprobs) {
  if (new_logprobs.empty() || new_logprobs.size() != ref_logprobs.size())
    throw std::invalid_argument("kl_penalty: completion lists misaligned");
  TensorPtr acc = ad::make_scalar(0.0);
  for (size_t i = 0; i < new_logprobs.size(); ++i)
    acc = ad::add(tape, acc, kl_term(tape, new_logprobs[i], ref_logprobs[i]));
  return ad::scale(tape, acc, 1.0 / static_cast<double>(new_logprobs.size()));
}

OptimState OptimState::init(const ParamSet& params, double lr_in) {
  OptimState s;
  s.lr = lr_in;
  for (const auto& [name, t] : params.entries) {
    s.m.emplace_back(name, std::vector<double>(t->data.size(), 0.0));
    s.v.emplace_back(name, std::vector<double>(t->data.size(), 0.0));
  }
  return s;
}

void OptimState::apply(ParamSet& params) {
  ++step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < params.entries.size(); ++i) {
    auto& t = params.entries[i].second;
    if (t->grad.empty()) t->ensure_grad();
    auto& mi = m[i].second;
    auto& vi = v[i].second;
    for (size_t j = 0; j < t->data.size(); ++j) {
      const double g = t->grad[j];
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g;
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g * g;
      t->data[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + eps);
    }
  }
  params.zero_grads();
}

OptimMoments OptimState::moments() const {
  OptimMoments mm;
  mm.adam_step = step;
  mm.m = m;
  mm.v = v;
  return mm;
}

void OptimState::load_moments(const ParamSet& params, const OptimMoments& mm) {
  step = mm.adam_step;
  m.clear();
  v.clear();
  for (const auto& [name, t] : params.entries) {
    const auto find = [&](const auto& list) -> const std::vector<double>* {
      for (const auto& [n, data] : list)
        if (n == name) return &data;
      return nullptr;
    };
    const auto* md = find(mm.m);
    const auto* vd = find(mm.v);
    if (!md || !vd || md->size() != t->data.size() || vd->size() != t->data.size())
      throw std::runtime_error("optimizer moments do not match parameter layout: " + name);
    m.emplace_back(name, *md);
    v.emplace_back(name, *vd);
  }
}

namespace {

LossTerms grpo_run(Policy& policy, const Policy& reference,
                   const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg,
                   bool with_grads) {
  if (batch.empty()) throw std::invalid_argument("grpo: empty batch");

  const int n_groups = static_cast<int>(batch.size());
  std::vector<std::vector<double>> advantages(n_groups);
  int n_items = 0;
  for (int gi = 0; gi < n_groups; ++gi) {
    const auto& group = batch[gi];
    if (group.completions.size() != group.rewards.size())
      throw std::invalid_argument("grpo: group rewards misaligned with completions");
    advantages[gi] = group_advantages(group.rewards, cfg.std_floor).advantages;
    n_items += static_cast<int>(group.completions.size());
  }
  const double inv_n = 1.0 / n_items;

  std::vector<std::vector<int>> prompt_tok(n_groups);
  std::vector<std::vector<double>> rasters(n_groups);
  for (int gi = 0; gi < n_groups; ++gi) {
    prompt_tok[gi] = policy.encode_prompt(batch[gi].sample->prompt_text);
    rasters[gi] = batch[gi].sample->scene.render();
  }

  const int n_slots = with_grads ? std::min(kGradChunk, n_groups) : 0;
  std::vector<ParamSet> slot_params;
  slot_params.reserve(n_slots);
  for (int s = 0; s < n_slots; ++s) slot_params.push_back(policy.params().clone(true));

  std::vector<std::vector<double>> pg_vals(n_groups), kl_vals(n_groups);

  // One tape per group: the group's completions share the prefix forward.
  const auto run_group = [&](int gi, const ParamSet& pset, Tape* tape) {
    const RolloutGroup& group = batch[gi];
    const int g = static_cast<int>(group.completions.size());
    std::vector<std::vector<int>> ids(g);
    for (int j = 0; j < g; ++j) ids[j] = group.completions[j].token_ids;
    const auto new_lps =
        policy.log_probs_group(tape, pset, prompt_tok[gi], rasters[gi], ids, cfg.temperature);

    pg_vals[gi].resize(g);
    kl_vals[gi].resize(g);
    TensorPtr contrib;
    for (int j = 0; j < g; ++j) {
      const std::vector<double> ref_lp =
          group.ref_prefix
              ? reference.log_probs_values_prefix(*group.ref_prefix, ids[j], cfg.temperature)
              : reference.log_probs_values(prompt_tok[gi], rasters[gi], ids[j], cfg.temperature);
      TensorPtr pg = pg_term(tape, new_lps[j], group.completions[j].token_logprobs,
                             advantages[gi][j], cfg.clip_eps);
      TensorPtr kl = kl_term(tape, new_lps[j], ref_lp);
      pg_vals[gi][j] = pg->scalar();
      kl_vals[gi][j] = kl->scalar();
      if (tape) {
        TensorPtr part =
            ad::add(tape, ad::scale(tape, pg, inv_n), ad::scale(tape, kl, cfg.beta * inv_n));
        contrib = contrib ? ad::add(tape, contrib, part) : part;
      }
    }
    if (tape) tape->backward(contrib);
  };

  if (!with_grads) {
    for (int gi = 0; gi < n_groups; ++gi) run_group(gi, policy.params(), nullptr);
  } else {
    std::exception_ptr failure = nullptr;
    for (int start = 0; start < n_groups; start += n_slots) {
      const int count = std::min(n_slots, n_groups - start);
#pragma omp parallel for schedule(static)
      for (int s = 0; s < count; ++s) {
        try {
          Tape tape;
          run_group(start + s, slot_params[s], &tape);
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);
      // fixed-order reduction, then clear slot grads for the next chunk
      for (int s = 0; s < count; ++s) {
        policy.params().accumulate_grads_from(slot_params[s]);
        slot_params[s].zero_grads();
      }
    }
  }

  LossTerms terms;
  terms.beta = cfg.beta;
  for (int gi = 0; gi < n_groups; ++gi)
    for (size_t j = 0; j < pg_vals[gi].size(); ++j) {
      terms.pg_loss += pg_vals[gi][j] * inv_n;
      terms.kl_loss += kl_vals[gi][j] * inv_n;
    }
  terms.total = terms.pg_loss + cfg.beta * terms.kl_loss;
  return terms;
}

}  // namespace

LossTerms grpo_backward(Policy& policy, const Policy& reference,
                        const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg) {
  return grpo_run(policy, reference, batch, cfg, true);
}

LossTerms grpo_loss_value(const Policy& policy, const Policy& reference,
                          const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg) {
  return grpo_run(const_cast<Policy&>(policy), reference, batch, cfg, false);
}

LossTerms grpo_step(Policy& policy, const Policy& reference,
                    const std::vector<RolloutGroup>& batch, const GrpoConfig& cfg,
                    OptimState& opt) {
  policy.params().zero_grads();
  const LossTerms terms = grpo_backward(policy, reference, batch, cfg);
  if (!std::isfinite(terms.total)) {
    policy.params().zero_grads();
    std::ostringstream msg;
    msg << "non-finite loss: pg=" << terms.pg_loss << " kl=" << terms.kl_loss
        << " beta=" << cfg.beta << "; parameters left unchanged";
    throw NumericError(msg.str());
  }
  opt.apply(policy.params());
  return terms;
}

}  // namespace rlvr
