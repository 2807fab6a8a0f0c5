#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/taskgen.hpp"

using namespace rlvr;
using ad::Tape;
using ad::TensorPtr;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

PolicyConfig tiny_config(uint64_t seed = 1) {
  PolicyConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.max_seq_len = 96;
  cfg.patch_count = 16;
  cfg.seed = seed;
  return cfg;
}

// One-parameter softmax policy over two tokens: logits (theta, 0).
// Returns the tape-tracked log-prob of `token` as a rank-1 tensor.
TensorPtr toy_lp(Tape* tape, const TensorPtr& theta, int token) {
  auto logits = ad::concat_cols(tape, {ad::slice_rows(tape, theta, 0, 1),
                                       ad::make_tensor({1, 1}, {0.0})});
  return ad::pick(tape, ad::log_softmax(tape, logits), {token});
}

std::vector<RolloutGroup> rollout_two_groups(const Policy& policy, uint64_t pool_seed,
                                             const std::vector<double>& rewards) {
  static std::vector<Sample> keep;
  const auto pool = render_pool(6, pool_seed);
  keep = pool;
  std::vector<RolloutGroup> batch;
  for (int gi = 0; gi < 2; ++gi) {
    RolloutGroup g;
    g.prompt_id = gi;
    g.sample = &keep[gi];
    g.completions = policy.sample(policy.encode_prompt(keep[gi].prompt_text),
                                  keep[gi].scene.render(), 2, 0.9, 24, Rng(pool_seed + gi));
    g.rewards = {rewards[gi * 2], rewards[gi * 2 + 1]};
    batch.push_back(std::move(g));
  }
  return batch;
}

}  // namespace

TEST_CASE("group advantages: hand arithmetic") {
  const auto a = group_advantages({1, 0, 0, 1}, 1e-6).advantages;
  CHECK(a == std::vector<double>{1, -1, -1, 1});  // mean 0.5, population std 0.5

  const auto b = group_advantages({2, 0}, 1e-6).advantages;
  CHECK(b == std::vector<double>{1, -1});

  for (double c : {0.0, 1.0, -3.5})
    CHECK(group_advantages({c, c, c, c}, 1e-6).advantages == std::vector<double>(4, 0.0));

  CHECK_THROWS_AS(group_advantages({1.0}, 1e-6), std::invalid_argument);
}

TEST_CASE("group advantages: normalization, shift and scale invariance") {
  Rng rng(64);
  for (int trial = 0; trial < 2000; ++trial) {
    const int g = 2 << rng.below(3);  // 2, 4, 8
    // reward-plausible grid: format {0,1} + accuracy {0, 0.4..0.7, 1}
    std::vector<double> rewards(g);
    for (auto& r : rewards) r = rng.below(2) + 0.1 * rng.below(11);
    const auto adv = group_advantages(rewards, 1e-6).advantages;
    const auto [mn, mx] = std::minmax_element(rewards.begin(), rewards.end());
    if (*mn == *mx) {
      CHECK(adv == std::vector<double>(g, 0.0));
      continue;
    }
    double mean = 0, sq = 0;
    for (double a : adv) mean += a;
    mean /= g;
    for (double a : adv) sq += (a - mean) * (a - mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(sq / g) - 1.0) < 1e-8);

    std::vector<double> shifted = rewards, scaled = rewards;
    for (auto& r : shifted) r += 17.25;
    for (auto& r : scaled) r *= 3.5;
    const auto adv_s = group_advantages(shifted, 1e-6).advantages;
    const auto adv_m = group_advantages(scaled, 1e-6).advantages;
    for (int i = 0; i < g; ++i) {
      CHECK(std::abs(adv[i] - adv_s[i]) < 1e-10);
      CHECK(std::abs(adv[i] - adv_m[i]) < 1e-10);
    }
  }
}

TEST_CASE("pg loss: zero advantage, REINFORCE equivalence, clip rule") {
  SUBCASE("new == old with zero advantages gives zero loss and zero gradient") {
    auto theta = ad::make_param({1, 1}, {0.3});
    Tape tape;
    auto lp = toy_lp(&tape, theta, 0);
    auto loss = pg_loss(&tape, {lp}, {{lp->data[0]}}, {0.0}, 0.2);
    CHECK(loss->scalar() == 0.0);
    tape.backward(loss);
    CHECK(theta->grad[0] == 0.0);
  }

  SUBCASE("on-policy loss value is -mean(A); gradient equals REINFORCE") {
    auto theta = ad::make_param({1, 1}, {0.4});
    // completion 1: token 0 with A=+1; completion 2: token 1 with A=-1
    Tape tape;
    auto lp0 = toy_lp(&tape, theta, 0);
    auto lp1 = toy_lp(&tape, theta, 1);
    auto loss = pg_loss(&tape, {lp0, lp1}, {{lp0->data[0]}, {lp1->data[0]}}, {1.0, -1.0}, 0.2);
    CHECK(std::abs(loss->scalar()) < 1e-15);  // -mean(A) = 0
    tape.backward(loss);
    const double analytic = theta->grad[0];

    // independent REINFORCE oracle: -mean(A * log pi)
    auto theta2 = ad::make_param({1, 1}, {0.4});
    Tape t2;
    auto r0 = ad::scale(&t2, toy_lp(&t2, theta2, 0), 1.0);
    auto r1 = ad::scale(&t2, toy_lp(&t2, theta2, 1), -1.0);
    auto reinforce = ad::scale(&t2, ad::add(&t2, r0, r1), -0.5);
    t2.backward(reinforce);
    CHECK(analytic == doctest::Approx(theta2->grad[0]).epsilon(1e-12));
  }

  SUBCASE("clip: rho 1.5, eps 0.2, A +1 selects the clipped 1.2") {
    auto x = ad::make_param({1}, {0.0});
    Tape tape;
    auto new_lp = ad::add_const(&tape, x, std::log(1.5));  // rho = exp(new - 0) = 1.5
    auto term = pg_term(&tape, new_lp, {0.0}, 1.0, 0.2);
    CHECK(term->scalar() == doctest::Approx(-1.2).epsilon(1e-12));
  }

  SUBCASE("misaligned lengths are a contract error") {
    auto x = ad::make_param({2}, {0.0, 0.0});
    CHECK_THROWS_AS(pg_term(nullptr, x, {0.0}, 1.0, 0.2), std::invalid_argument);
  }
}

TEST_CASE("kl estimator: zero at equality, closed form, non-negativity") {
  auto x = ad::make_param({3}, {-1.0, -2.0, -0.5});
  CHECK(kl_term(nullptr, x, {-1.0, -2.0, -0.5})->scalar() == 0.0);

  // ref - new = 1 at one token -> e - 2
  auto one = ad::make_param({1}, {-2.0});
  CHECK(kl_term(nullptr, one, {-1.0})->scalar() ==
        doctest::Approx(std::exp(1.0) - 2.0).epsilon(1e-12));

  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double nv = -rng.uniform() * 4.0;
    const double rv = -rng.uniform() * 4.0;
    auto t = ad::make_tensor({1}, {nv});
    CHECK(kl_term(nullptr, t, {rv})->scalar() >= 0.0);
  }

  CHECK_THROWS_AS(kl_term(nullptr, x, {0.0}), std::invalid_argument);
}

TEST_CASE("kl gradient flows through new log-probs") {
  Rng rng(6);
  auto x = ad::make_param({5}, {-0.5, -1.0, -2.0, -0.1, -3.0});
  const std::vector<double> ref = {-1.0, -0.5, -2.5, -0.2, -2.0};
  Tape tape;
  tape.backward(kl_term(&tape, x, ref));
  CHECK(fd::check_grads([&] { return kl_term(nullptr, x, ref)->scalar(); }, {{"x", x}}, 1e-6,
                        1e-6, 1e-9)
            .empty());
}

TEST_CASE("adam update matches the pencil-and-paper one-parameter derivation") {
  // Policy: softmax over two tokens with logits (theta, 0), theta = 0.
  // Group: G=2, token 0 rewarded 2, token 1 rewarded 0 -> advantages (+1, -1).
  // On-policy (rho = 1): d(total)/d(theta)
  //   = -0.5 * [ +1 * (1 - sigma(0)) + (-1) * (-sigma(0)) ] = -0.5
  auto theta = ad::make_param({1, 1}, {0.0});
  Tape tape;
  auto lp0 = toy_lp(&tape, theta, 0);
  auto lp1 = toy_lp(&tape, theta, 1);
  auto loss = pg_loss(&tape, {lp0, lp1}, {{lp0->data[0]}, {lp1->data[0]}}, {1.0, -1.0}, 0.2);
  tape.backward(loss);
  const double g = theta->grad[0];
  CHECK(g == doctest::Approx(-0.5).epsilon(1e-12));

  ParamSet params;
  params.entries.emplace_back("theta", theta);
  OptimState opt = OptimState::init(params, 0.1);
  opt.apply(params);

  // Adam, step 1: m = (1-b1)g, v = (1-b2)g^2; mhat = g, vhat = g^2;
  // theta <- 0 - lr * g / (|g| + eps)
  const double m = 0.9 * 0.0 + (1.0 - 0.9) * g;
  const double v = 0.999 * 0.0 + (1.0 - 0.999) * g * g;
  const double expected = 0.0 - 0.1 * (m / (1.0 - 0.9)) / (std::sqrt(v / (1.0 - 0.999)) + 1e-8);
  CHECK(theta->data[0] == expected);  // same arithmetic, bitwise
  CHECK(theta->data[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(opt.step == 1);
  CHECK(theta->grad[0] == 0.0);  // grads cleared after the update
}

TEST_CASE("grpo_step: equal-reward batch leaves parameters exactly unchanged") {
  Policy policy(tiny_config(9), vocab());
  const Policy reference = policy.clone_frozen();
  auto batch = rollout_two_groups(policy, 100, {1.0, 1.0, 2.0, 2.0});
  const auto before = policy.params().clone(false);
  GrpoConfig cfg;
  OptimState opt = OptimState::init(policy.params(), 1e-3);
  const LossTerms terms = grpo_step(policy, reference, batch, cfg, opt);
  CHECK(terms.pg_loss == 0.0);
  for (size_t i = 0; i < before.entries.size(); ++i)
    CHECK(policy.params().entries[i].second->data == before.entries[i].second->data);
}

TEST_CASE("loss is linear in beta") {
  Policy policy(tiny_config(10), vocab());
  // perturb away from the reference so the KL term is non-zero
  Policy reference = policy.clone_frozen();
  for (auto& [name, t] : policy.params().entries)
    for (auto& v : t->data) v += 1e-3;
  auto batch = rollout_two_groups(policy, 200, {2.0, 0.0, 1.0, 0.0});

  GrpoConfig c0;
  c0.beta = 0.0;
  GrpoConfig c1;
  c1.beta = 0.001;
  const LossTerms t0 = grpo_loss_value(policy, reference, batch, c0);
  const LossTerms t1 = grpo_loss_value(policy, reference, batch, c1);
  CHECK(t0.pg_loss == t1.pg_loss);
  CHECK(t0.kl_loss == t1.kl_loss);
  CHECK(t1.kl_loss > 0.0);
  CHECK(t1.total - t0.total == doctest::Approx(0.001 * t1.kl_loss).epsilon(1e-12));
  CHECK(t1.total == t1.pg_loss + t1.beta * t1.kl_loss);
}

TEST_CASE("end-to-end GRPO gradient passes the finite-difference oracle (small)") {
  Policy policy(tiny_config(12), vocab());
  const Policy reference = policy.clone_frozen();
  auto batch = rollout_two_groups(policy, 300, {2.0, 0.0, 0.0, 1.0});
  GrpoConfig cfg;

  policy.params().zero_grads();
  grpo_backward(policy, reference, batch, cfg);
  const auto loss_fn = [&] { return grpo_loss_value(policy, reference, batch, cfg).total; };
  const auto bad = fd::check_grads_sampled(loss_fn, policy.params().entries, 80, 2718, 1e-5,
                                           1e-4, 1e-7);
  CHECK(bad.empty());
}

TEST_CASE("gradient accumulation across backward calls is additive") {
  Policy policy(tiny_config(13), vocab());
  const Policy reference = policy.clone_frozen();
  auto batch = rollout_two_groups(policy, 400, {2.0, 0.0, 1.0, 0.0});
  GrpoConfig cfg;

  policy.params().zero_grads();
  grpo_backward(policy, reference, batch, cfg);
  const auto once = policy.params().clone(false);
  grpo_backward(policy, reference, batch, cfg);
  for (size_t i = 0; i < once.entries.size(); ++i) {
    const auto& g1 = policy.params().entries[i].second->grad;
    const auto& g0 = once.entries[i].second->grad;
    for (size_t j = 0; j < g0.size(); ++j)
      CHECK(g1[j] == doctest::Approx(2.0 * g0[j]).epsilon(1e-12));
  }
}

TEST_CASE("grpo results are identical with one worker thread and many") {
  Policy p1(tiny_config(14), vocab());
  Policy p2(tiny_config(14), vocab());
  const Policy ref = p1.clone_frozen();
  auto batch = rollout_two_groups(p1, 500, {2.0, 0.0, 1.0, 0.0});
  GrpoConfig cfg;

  ad::set_max_threads(1);
  p1.params().zero_grads();
  grpo_backward(p1, ref, batch, cfg);
  ad::set_max_threads(0);
  p2.params().zero_grads();
  grpo_backward(p2, ref, batch, cfg);
  for (size_t i = 0; i < p1.params().entries.size(); ++i)
    CHECK(p1.params().entries[i].second->grad == p2.params().entries[i].second->grad);
}
