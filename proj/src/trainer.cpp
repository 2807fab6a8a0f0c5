#include "rlvr/trainer.hpp"

#include <omp.h>

#include <chrono>
#include <map>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rlvr/ioutil.hpp"

namespace rlvr {

using nlohmann::json;

namespace {

constexpr uint64_t kRolloutDomain = 0x6011a7;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_checkpoint_file(const std::string& out_dir, const Policy& policy, int step,
                           uint64_t run_seed, const OptimState* opt,
                           std::vector<std::string>& paths) {
  OptimMoments mm;
  const OptimMoments* mp = nullptr;
  if (opt) {
    mm = opt->moments();
    mp = &mm;
  }
  const std::string path = out_dir + "/" + checkpoint_name(step);
  save_checkpoint(path, make_checkpoint(policy, static_cast<uint64_t>(step), run_seed, mp));
  paths.push_back(path);
}

TrainResult train_loop(Policy& policy, const Policy& reference, const Dataset& dataset,
                       const TrainConfig& cfg, const std::string& out_dir, int start_step,
                       OptimState& opt, uint64_t run_seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  // The reference is frozen, so its prefix passes are computed once per run.
  std::map<std::string, RolloutPrefixPtr> ref_prefixes;
  for (const auto& s : dataset.samples)
    if (!ref_prefixes.count(s.id))
      ref_prefixes[s.id] =
          reference.make_prefix(reference.encode_prompt(s.prompt_text), s.scene.render());

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.csv";
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics_path);
  metrics << metrics_header() << "\n";
  metrics.flush();

  // Step-0 checkpoint doubles as the frozen reference snapshot.
  write_checkpoint_file(out_dir, policy, start_step, run_seed, &opt, result.checkpoint_paths);

  const GrpoConfig gcfg = cfg.grpo();
  for (int step = start_step + 1; step <= cfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RewardBreakdown> breakdowns;
    TrainConfig step_cfg = cfg;
    step_cfg.seed = run_seed;
    auto groups = rollout_batch(policy, dataset, step_cfg, step, &breakdowns);
    for (auto& g : groups) g.ref_prefix = ref_prefixes.at(g.sample->id);

    MetricsRow row;
    row.step = step;
    double total = 0.0, fmt = 0.0, acc = 0.0, len = 0.0;
    int n = 0;
    for (size_t gi = 0; gi < groups.size(); ++gi)
      for (size_t j = 0; j < groups[gi].completions.size(); ++j) {
        const auto& bd = breakdowns[gi * cfg.group_size + j];
        total += bd.total;
        fmt += bd.format;
        acc += bd.accuracy;
        len += groups[gi].completions[j].length();
        ++n;
      }
    row.mean_total_reward = total / n;
    row.mean_format_reward = fmt / n;
    row.mean_accuracy_reward = acc / n;
    row.mean_completion_length = len / n;

    try {
      const LossTerms terms = grpo_step(policy, reference, groups, gcfg, opt);
      row.mean_kl = terms.kl_loss;
      row.pg_loss = terms.pg_loss;
    } catch (const NumericError& e) {
      // Halt visibly: checkpoint the exact pre-update state plus a diagnostic
      // dump so instabilities stay observable.
      json diag;
      diag["step"] = step;
      diag["error"] = e.what();
      diag["mean_total_reward"] = row.mean_total_reward;
      write_file(out_dir + "/nonfinite_diagnostics.json", diag.dump(2));
      write_checkpoint_file(out_dir, policy, step, run_seed, &opt, result.checkpoint_paths);
      result.halted_nonfinite = true;
      result.steps_run = step - start_step - 1;
      return result;
    }

    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    metrics << metrics_row_csv(row) << "\n";
    metrics.flush();
    result.metrics.push_back(row);

    policy.step_counter = static_cast<uint64_t>(step);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      write_checkpoint_file(out_dir, policy, step, run_seed, &opt, result.checkpoint_paths);
  }
  result.steps_run = cfg.total_steps - start_step;
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || group_size < 1 || total_steps < 0 || checkpoint_every < 1 ||
      max_new_tokens < 1)
    throw std::invalid_argument("TrainConfig: counts must be positive");
  if (grad_accum < 1 || grad_accum > 8)
    throw std::invalid_argument("TrainConfig: grad_accum must be in [1,8]");
  if (batch_size % grad_accum != 0)
    throw std::invalid_argument("TrainConfig: batch_size must divide by grad_accum");
  if (train_temperature < 0.0 || lr <= 0.0 || beta < 0.0 || clip_eps <= 0.0)
    throw std::invalid_argument("TrainConfig: bad hyperparameter");
  policy.validate();
  reward.validate();
}

std::string TrainConfig::to_json() const {
  json j;
  j["batch_size"] = batch_size;
  j["group_size"] = group_size;
  j["train_temperature"] = train_temperature;
  j["lr"] = lr;
  j["beta"] = beta;
  j["clip_eps"] = clip_eps;
  j["max_new_tokens"] = max_new_tokens;
  j["total_steps"] = total_steps;
  j["checkpoint_every"] = checkpoint_every;
  j["grad_accum"] = grad_accum;
  j["seed"] = seed;
  j["std_floor"] = std_floor;
  j["policy"] = {{"embed_dim", policy.embed_dim},     {"num_layers", policy.num_layers},
                 {"num_heads", policy.num_heads},     {"max_seq_len", policy.max_seq_len},
                 {"patch_count", policy.patch_count}, {"seed", policy.seed}};
  j["reward"] = {{"iou_hi", reward.iou_hi},
                 {"iou_lo", reward.iou_lo},
                 {"format_weight", reward.format_weight},
                 {"accuracy_weight", reward.accuracy_weight},
                 {"case_fold", reward.case_fold},
                 {"trim", reward.trim}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.group_size = j.value("group_size", c.group_size);
  c.train_temperature = j.value("train_temperature", c.train_temperature);
  c.lr = j.value("lr", c.lr);
  c.beta = j.value("beta", c.beta);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.seed = j.value("seed", c.seed);
  c.std_floor = j.value("std_floor", c.std_floor);
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    c.policy.embed_dim = p.value("embed_dim", c.policy.embed_dim);
    c.policy.num_layers = p.value("num_layers", c.policy.num_layers);
    c.policy.num_heads = p.value("num_heads", c.policy.num_heads);
    c.policy.max_seq_len = p.value("max_seq_len", c.policy.max_seq_len);
    c.policy.patch_count = p.value("patch_count", c.policy.patch_count);
    c.policy.seed = p.value("seed", c.policy.seed);
  }
  if (j.contains("reward")) {
    const auto& r = j["reward"];
    c.reward.iou_hi = r.value("iou_hi", c.reward.iou_hi);
    c.reward.iou_lo = r.value("iou_lo", c.reward.iou_lo);
    c.reward.format_weight = r.value("format_weight", c.reward.format_weight);
    c.reward.accuracy_weight = r.value("accuracy_weight", c.reward.accuracy_weight);
    c.reward.case_fold = r.value("case_fold", c.reward.case_fold);
    c.reward.trim = r.value("trim", c.reward.trim);
  }
  return c;
}

std::string metrics_header() {
  return "step,mean_total_reward,mean_format_reward,mean_accuracy_reward,"
         "mean_completion_length,mean_kl,pg_loss,wall_ms";
}

std::string metrics_row_csv(const MetricsRow& r) {
  std::ostringstream out;
  out << r.step << ',' << fmt_double(r.mean_total_reward) << ',' << fmt_double(r.mean_format_reward)
      << ',' << fmt_double(r.mean_accuracy_reward) << ',' << fmt_double(r.mean_completion_length)
      << ',' << fmt_double(r.mean_kl) << ',' << fmt_double(r.pg_loss) << ','
      << fmt_double(r.wall_ms);
  return out.str();
}

std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != metrics_header())
    throw std::runtime_error(path + ": bad metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    std::istringstream ls(line);
    char comma;
    ls >> r.step >> comma >> r.mean_total_reward >> comma >> r.mean_format_reward >> comma >>
        r.mean_accuracy_reward >> comma >> r.mean_completion_length >> comma >> r.mean_kl >>
        comma >> r.pg_loss >> comma >> r.wall_ms;
    if (ls.fail()) throw std::runtime_error(path + ": bad metrics row: " + line);
    rows.push_back(r);
  }
  return rows;
}

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06d.bin", step);
  return buf;
}

std::vector<RolloutGroup> rollout_batch(const Policy& policy, const Dataset& dataset,
                                        const TrainConfig& cfg, int step,
                                        std::vector<RewardBreakdown>* breakdowns) {
  const int b = static_cast<int>(dataset.samples.size());
  std::vector<RolloutGroup> groups(b);
  std::vector<RewardBreakdown> bds(static_cast<size_t>(b) * cfg.group_size);

  // Prompt/raster per slot; duplicated slots share one prefix pass per step
  // but still sample independently.
  std::vector<std::vector<int>> prompt_tok(b);
  std::vector<std::vector<double>> rasters(b);
  std::vector<RolloutPrefixPtr> prefixes(b);
  std::map<std::string, int> first_slot;
  for (int i = 0; i < b; ++i) {
    prompt_tok[i] = policy.encode_prompt(dataset.samples[i].prompt_text);
    rasters[i] = dataset.samples[i].scene.render();
    const auto [it, inserted] = first_slot.emplace(dataset.samples[i].id, i);
    prefixes[i] = inserted ? policy.make_prefix(prompt_tok[i], rasters[i]) : prefixes[it->second];
  }

  const Rng base = Rng(cfg.seed).fork(kRolloutDomain).fork(static_cast<uint64_t>(step));
  std::exception_ptr failure = nullptr;
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < b; ++i) {
    try {
      RolloutGroup& g = groups[i];
      g.prompt_id = i;
      g.sample = &dataset.samples[i];
      g.completions = policy.sample(prompt_tok[i], rasters[i], cfg.group_size,
                                    cfg.train_temperature, cfg.max_new_tokens,
                                    base.fork(static_cast<uint64_t>(i)), prefixes[i].get());
      g.rewards.resize(cfg.group_size);
      for (int j = 0; j < cfg.group_size; ++j) {
        const RewardBreakdown bd = score(*g.sample, g.completions[j].text, cfg.reward);
        bds[static_cast<size_t>(i) * cfg.group_size + j] = bd;
        g.rewards[j] = bd.total;
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (breakdowns) *breakdowns = std::move(bds);
  return groups;
}

TrainResult train(Policy& policy, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  if (static_cast<int>(dataset.samples.size()) != cfg.batch_size)
    throw std::invalid_argument("train: dataset length " +
                                std::to_string(dataset.samples.size()) +
                                " != batch_size " + std::to_string(cfg.batch_size) +
                                " (duplicate_to_batch first)");
  const Policy reference = policy.clone_frozen();
  OptimState opt = OptimState::init(policy.params(), cfg.lr);
  return train_loop(policy, reference, dataset, cfg, out_dir, 0, opt, cfg.seed);
}

TrainResult resume(const std::string& checkpoint_path, const Dataset& dataset, TrainConfig cfg,
                   const std::string& out_dir, const Vocabulary& vocab) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  Policy policy = restore_policy(ck, vocab);
  cfg.policy = ck.config;
  cfg.seed = ck.run_seed;  // trajectory continuity
  cfg.validate();
  if (static_cast<int>(dataset.samples.size()) != cfg.batch_size)
    throw std::invalid_argument("resume: dataset length != batch_size");

  // Reference = the run's initial parameters, reconstructed from the config
  // seed (identical to the step-0 snapshot).
  const Policy reference = Policy(ck.config, vocab).clone_frozen();
  OptimState opt = OptimState::init(policy.params(), cfg.lr);
  if (has_moments(ck)) opt.load_moments(policy.params(), restore_moments(ck));
  return train_loop(policy, reference, dataset, cfg, out_dir, static_cast<int>(ck.step), opt,
                    ck.run_seed);
}

}  // namespace rlvr
