#include "rlvr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rlvr/checkpoint.hpp"
#include "rlvr/eval.hpp"
#include "rlvr/ioutil.hpp"
#include "rlvr/plot.hpp"
#include "rlvr/prompts.hpp"
#include "rlvr/taskgen.hpp"
#include "rlvr/trainer.hpp"

namespace rlvr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const Vocabulary& global_vocab() {
  static const Vocabulary vocab;
  return vocab;
}

std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("RLVR_OUT_ROOT");
  if (root && *root && !path.empty() && !fs::path(path).is_absolute())
    return (fs::path(root) / path).string();
  return path;
}

void require_input(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing input: " + path);
}

void refuse_overwrite(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw std::invalid_argument("output exists, pass --force to overwrite: " + path);
}

void write_manifest(const std::string& dir_or_file, const std::string& command,
                    const std::vector<std::string>& argv, json extra) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["timestamp_utc"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  for (auto& [k, v] : extra.items()) m[k] = v;
  const fs::path base(dir_or_file);
  const std::string path = fs::is_directory(base) ? (base / "manifest.json").string()
                                                  : dir_or_file + ".manifest.json";
  write_file(path, m.dump(2));
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stod(part));
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> out;
  std::istringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stoull(part));
  return out;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(part);
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{
      "Few-shot RL with verifiable rewards on a synthetic scene-understanding task family.\n"
      "Exit codes: 0 ok, 2 usage, 3 missing input, 4 integrity failure, 5 numeric failure."};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (0 = hardware default)");

  // ---- gen-pool ----
  auto* gen = app.add_subcommand("gen-pool", "generate a sample pool");
  int pool_size = 2000;
  uint64_t pool_seed = 7;
  std::string pool_out;
  bool pool_force = false;
  std::string system_prompt_kind = "basic";
  gen->add_option("--size", pool_size, "number of samples")->required();
  gen->add_option("--seed", pool_seed, "pool seed")->required();
  gen->add_option("--out", pool_out, "output pool file")->required();
  gen->add_flag("--force", pool_force, "overwrite existing output");
  gen->add_option("--system-prompt", system_prompt_kind, "basic|detailed");

  // ---- sample-fewshot ----
  auto* few = app.add_subcommand("sample-fewshot", "draw a few-shot dataset from a pool");
  std::string few_pool, few_out, few_preset;
  int n_vqa = 0, n_cls = 0, n_vg = 0, few_batch = 128;
  uint64_t few_seed = 0;
  bool few_force = false;
  few->add_option("--pool", few_pool, "input pool file")->required();
  few->add_option("--out", few_out, "output dataset file")->required();
  few->add_option("--preset", few_preset, "named mix (pi1C, pi8VC, pi128VCG, ...)");
  few->add_option("--vqa", n_vqa, "VQA examples");
  few->add_option("--cls", n_cls, "CLS examples");
  few->add_option("--vg", n_vg, "VG examples");
  few->add_option("--seed", few_seed, "draw seed")->required();
  few->add_option("--batch", few_batch, "duplicate up to this batch size");
  few->add_flag("--force", few_force, "overwrite existing output");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "run GRPO training");
  std::string tr_dataset, tr_out, tr_config, tr_resume;
  TrainConfig tcfg;
  tr->add_option("--dataset", tr_dataset, "dataset file")->required();
  tr->add_option("--out", tr_out, "output run directory")->required();
  tr->add_option("--config", tr_config, "JSON config file (flags override it)");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  auto* o_steps = tr->add_option("--steps", tcfg.total_steps, "total training steps");
  auto* o_lr = tr->add_option("--lr", tcfg.lr, "Adam learning rate");
  auto* o_beta = tr->add_option("--beta", tcfg.beta, "KL penalty weight");
  auto* o_seed = tr->add_option("--seed", tcfg.seed, "run seed");
  auto* o_batch = tr->add_option("--batch", tcfg.batch_size, "batch size");
  auto* o_group = tr->add_option("--group", tcfg.group_size, "rollouts per prompt");
  auto* o_temp = tr->add_option("--temperature", tcfg.train_temperature, "rollout temperature");
  auto* o_maxnew = tr->add_option("--max-new-tokens", tcfg.max_new_tokens, "completion budget");
  auto* o_ckpt = tr->add_option("--checkpoint-every", tcfg.checkpoint_every, "checkpoint cadence");
  auto* o_accum = tr->add_option("--grad-accum", tcfg.grad_accum, "gradient accumulation steps");
  auto* o_embed = tr->add_option("--embed-dim", tcfg.policy.embed_dim, "policy width");
  auto* o_layers = tr->add_option("--layers", tcfg.policy.num_layers, "decoder layers");
  auto* o_heads = tr->add_option("--heads", tcfg.policy.num_heads, "attention heads");
  auto* o_pseed = tr->add_option("--policy-seed", tcfg.policy.seed, "parameter init seed");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on an eval set");
  std::string ev_ckpt, ev_ckpt_dir, ev_set, ev_out;
  double ev_temp = 1.0;
  uint64_t ev_seed = 1234;
  int ev_maxnew = 64;
  ev->add_option("--ckpt", ev_ckpt, "single checkpoint file");
  ev->add_option("--ckpt-dir", ev_ckpt_dir, "directory of checkpoints (sweep)");
  ev->add_option("--eval-set", ev_set, "eval pool/dataset file")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--temperature", ev_temp, "sampling temperature");
  ev->add_option("--seed", ev_seed, "eval seed");
  ev->add_option("--max-new-tokens", ev_maxnew, "completion budget");

  // ---- ablate-beta ----
  auto* ab = app.add_subcommand("ablate-beta", "paired-seed KL-weight ablation");
  std::string ab_dataset, ab_set, ab_out, ab_betas = "0.001,0.04", ab_seeds = "1,2,3";
  int ab_steps = 200;
  TrainConfig ab_cfg;
  ab->add_option("--dataset", ab_dataset, "dataset file")->required();
  ab->add_option("--eval-set", ab_set, "eval set file")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--betas", ab_betas, "comma-separated KL weights");
  ab->add_option("--seeds", ab_seeds, "comma-separated paired seeds");
  ab->add_option("--steps", ab_steps, "steps per run");
  ab->add_option("--lr", ab_cfg.lr, "Adam learning rate");
  ab->add_option("--max-new-tokens", ab_cfg.max_new_tokens, "completion budget");
  ab->add_option("--batch", ab_cfg.batch_size, "batch size");

  // ---- plot ----
  auto* pl = app.add_subcommand("plot", "render metric curves to SVG");
  std::string pl_metrics, pl_out,
      pl_columns = "mean_total_reward,mean_completion_length,mean_kl";
  pl->add_option("--metrics", pl_metrics, "metrics.csv from a run")->required();
  pl->add_option("--out", pl_out, "output SVG file")->required();
  pl->add_option("--columns", pl_columns, "comma-separated metric columns");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  ad::set_max_threads(threads);
  const auto& vocab = global_vocab();

  try {
    if (*gen) {
      if (pool_size < 3) throw std::invalid_argument("--size must be at least 3");
      const std::string out = resolve_out(pool_out);
      refuse_overwrite(out, pool_force);
      const std::string system_prompt = system_prompt_kind == "detailed"
                                            ? prompts::kDetailedSystemPrompt
                                            : prompts::kBasicSystemPrompt;
      const auto pool = render_pool(pool_size, pool_seed);
      if (!fs::path(out).parent_path().empty())
        fs::create_directories(fs::path(out).parent_path());
      save_pool(out, pool, pool_seed, system_prompt);
      write_manifest(out, "gen-pool", args,
                     json{{"size", pool_size},
                          {"seed", pool_seed},
                          {"output", out},
                          {"output_hash", file_hash_hex(out)}});
      std::cout << "wrote " << pool.size() << " samples to " << out << "\n";
      return kExitOk;
    }

    if (*few) {
      require_input(few_pool);
      const std::string out = resolve_out(few_out);
      refuse_overwrite(out, few_force);
      SampleFileHeader hdr;
      const auto pool = load_samples(few_pool, &hdr);
      FewShotSpec spec;
      if (!few_preset.empty()) {
        spec = preset_spec(few_preset, few_seed);
      } else {
        spec.n_vqa = n_vqa;
        spec.n_cls = n_cls;
        spec.n_vg = n_vg;
        spec.seed = few_seed;
      }
      Dataset ds = sample_fewshot(pool, spec);
      ds.pool_id = file_hash_hex(few_pool);
      ds = duplicate_to_batch(ds, few_batch);
      if (!fs::path(out).parent_path().empty())
        fs::create_directories(fs::path(out).parent_path());
      save_dataset(out, ds, hdr.system_prompt);
      write_manifest(out, "sample-fewshot", args,
                     json{{"pool", few_pool},
                          {"pool_hash", ds.pool_id},
                          {"n_vqa", spec.n_vqa},
                          {"n_cls", spec.n_cls},
                          {"n_vg", spec.n_vg},
                          {"seed", spec.seed},
                          {"batch", few_batch},
                          {"output", out}});
      std::cout << "wrote dataset (" << spec.n_vqa << " VQA, " << spec.n_cls << " CLS, "
                << spec.n_vg << " VG, duplicated to " << ds.samples.size() << ") to " << out
                << "\n";
      return kExitOk;
    }

    if (*tr) {
      require_input(tr_dataset);
      const std::string out = resolve_out(tr_out);
      TrainConfig cfg;
      if (!tr_config.empty()) {
        require_input(tr_config);
        cfg = TrainConfig::from_json(read_file(tr_config));
      }
      // precedence: flags > config file > defaults
      if (o_steps->count()) cfg.total_steps = tcfg.total_steps;
      if (o_lr->count()) cfg.lr = tcfg.lr;
      if (o_beta->count()) cfg.beta = tcfg.beta;
      if (o_seed->count()) cfg.seed = tcfg.seed;
      if (o_batch->count()) cfg.batch_size = tcfg.batch_size;
      if (o_group->count()) cfg.group_size = tcfg.group_size;
      if (o_temp->count()) cfg.train_temperature = tcfg.train_temperature;
      if (o_maxnew->count()) cfg.max_new_tokens = tcfg.max_new_tokens;
      if (o_ckpt->count()) cfg.checkpoint_every = tcfg.checkpoint_every;
      if (o_accum->count()) cfg.grad_accum = tcfg.grad_accum;
      if (o_embed->count()) cfg.policy.embed_dim = tcfg.policy.embed_dim;
      if (o_layers->count()) cfg.policy.num_layers = tcfg.policy.num_layers;
      if (o_heads->count()) cfg.policy.num_heads = tcfg.policy.num_heads;
      if (o_pseed->count()) cfg.policy.seed = tcfg.policy.seed;

      const Dataset ds = load_dataset(tr_dataset);
      fs::create_directories(out);
      TrainResult result;
      if (!tr_resume.empty()) {
        require_input(tr_resume);
        result = resume(tr_resume, ds, cfg, out, vocab);
      } else {
        Policy policy(cfg.policy, vocab);
        result = train(policy, ds, cfg, out);
      }
      write_manifest(out, "train", args,
                     json{{"dataset", tr_dataset},
                          {"dataset_hash", file_hash_hex(tr_dataset)},
                          {"config", json::parse(cfg.to_json())},
                          {"resumed_from", tr_resume},
                          {"steps_run", result.steps_run},
                          {"halted_nonfinite", result.halted_nonfinite},
                          {"metrics", result.metrics_path},
                          {"checkpoints", result.checkpoint_paths}});
      std::cout << "trained " << result.steps_run << " steps, metrics at "
                << result.metrics_path << "\n";
      return result.halted_nonfinite ? kExitNumeric : kExitOk;
    }

    if (*ev) {
      require_input(ev_set);
      const std::string out = resolve_out(ev_out);
      fs::create_directories(out);
      const auto eval_set = load_samples(ev_set);
      const std::string set_id = file_hash_hex(ev_set);
      const RewardConfig rcfg;
      if (!ev_ckpt.empty()) {
        require_input(ev_ckpt);
        const Checkpoint ck = load_checkpoint(ev_ckpt);
        const Policy policy = restore_policy(ck, vocab);
        std::vector<PredictionLog> log;
        const EvalReport rep =
            evaluate(policy, eval_set, rcfg, ev_temp, ev_seed, ev_maxnew, set_id,
                     static_cast<int>(ck.step), &log);
        write_file(out + "/report.json", rep.to_json());
        save_prediction_log(out + "/predictions.jsonl", log);
        std::cout << rep.to_json() << "\n";
      } else if (!ev_ckpt_dir.empty()) {
        require_input(ev_ckpt_dir);
        const SweepResult sw =
            sweep(ev_ckpt_dir, eval_set, vocab, rcfg, ev_temp, ev_seed, ev_maxnew, set_id);
        std::ostringstream all;
        for (const auto& r : sw.reports) all << r.to_json() << "\n";
        write_file(out + "/sweep_reports.jsonl", all.str());
        write_file(out + "/sweep.txt", sw.table_text);
        std::cout << sw.table_text;
      } else {
        throw std::invalid_argument("eval: pass --ckpt or --ckpt-dir");
      }
      write_manifest(out, "eval", args,
                     json{{"eval_set", ev_set},
                          {"eval_set_hash", set_id},
                          {"temperature", ev_temp},
                          {"seed", ev_seed}});
      return kExitOk;
    }

    if (*ab) {
      require_input(ab_dataset);
      require_input(ab_set);
      const std::string out = resolve_out(ab_out);
      fs::create_directories(out);
      const Dataset ds = load_dataset(ab_dataset);
      const auto eval_set = load_samples(ab_set);
      const std::string set_id = file_hash_hex(ab_set);
      const auto betas = parse_double_list(ab_betas);
      const auto seeds = parse_seed_list(ab_seeds);
      if (betas.size() < 2) throw std::invalid_argument("ablate-beta: need at least two betas");

      TrainConfig cfg = ab_cfg;
      cfg.total_steps = ab_steps;
      cfg.batch_size = static_cast<int>(ds.samples.size());
      std::vector<EvalReport> reports;
      std::vector<std::string> labels;
      for (const double beta : betas) {
        EvalReport mean_rep;
        double reward_acc = 0.0;
        for (const uint64_t seed : seeds) {
          TrainConfig run_cfg = cfg;
          run_cfg.beta = beta;
          run_cfg.seed = seed;
          run_cfg.policy.seed = seed;
          std::ostringstream dir;
          dir << out << "/beta" << beta << "_seed" << seed;
          Policy policy(run_cfg.policy, vocab);
          const TrainResult res = train(policy, ds, run_cfg, dir.str());
          write_file(dir.str() + "/completion_length.svg",
                     render_metrics_svg(res.metrics, {"mean_completion_length", "mean_kl"}));
          const SweepResult sw =
              sweep(dir.str(), eval_set, vocab, cfg.reward, 1.0, 1234, cfg.max_new_tokens, set_id);
          const EvalReport& best = *std::max_element(
              sw.reports.begin(), sw.reports.end(), [](const auto& a, const auto& b) {
                return a.mean_total_reward < b.mean_total_reward;
              });
          reward_acc += best.mean_total_reward;
          mean_rep = best;  // representative; per-seed reports are on disk
        }
        mean_rep.mean_total_reward = reward_acc / seeds.size();
        reports.push_back(mean_rep);
        std::ostringstream label;
        label << "beta=" << beta;
        labels.push_back(label.str());
      }
      const CompareResult cmp = compare(reports, labels);
      write_file(out + "/ablation.txt", cmp.table_text);
      write_file(out + "/ablation.csv", cmp.table_csv);
      write_manifest(out, "ablate-beta", args,
                     json{{"dataset", ab_dataset}, {"betas", betas}, {"seeds", seeds}});
      std::cout << cmp.table_text;
      return kExitOk;
    }

    if (*pl) {
      require_input(pl_metrics);
      const std::string out = resolve_out(pl_out);
      const auto rows = load_metrics(pl_metrics);
      write_file(out, render_metrics_svg(rows, split_csv(pl_columns)));
      write_manifest(out, "plot", args,
                     json{{"metrics", pl_metrics}, {"columns", pl_columns}, {"output", out}});
      std::cout << "wrote " << out << "\n";
      return kExitOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity failure: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  }
  return kExitUsage;
}

}  // namespace rlvr
