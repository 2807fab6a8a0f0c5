#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rlvr/ioutil.hpp"
#include "rlvr/trainer.hpp"

using namespace rlvr;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

// Small-but-real configuration so trainer tests stay in seconds.
TrainConfig small_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.group_size = 2;
  cfg.max_new_tokens = 24;
  cfg.total_steps = 3;
  cfg.checkpoint_every = 2;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  cfg.policy.embed_dim = 12;
  cfg.policy.num_layers = 1;
  cfg.policy.num_heads = 2;
  cfg.policy.max_seq_len = 96;
  cfg.policy.seed = seed;
  return cfg;
}

Dataset small_dataset(int batch, uint64_t seed) {
  const auto pool = render_pool(24, seed);
  FewShotSpec spec;
  spec.n_vqa = 1;
  spec.n_cls = 2;
  spec.n_vg = 1;
  spec.seed = seed;
  return duplicate_to_batch(sample_fewshot(pool, spec), batch);
}

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rlvr_tr_" + name);
  fs::remove_all(p);
  return p.string();
}

// metrics.csv minus the wall-clock column (the one clock-dependent field)
std::string metrics_without_wall(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line, out;
  while (std::getline(in, line)) {
    const size_t cut = line.rfind(',');
    out += line.substr(0, cut);
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("config validation and JSON round-trip") {
  TrainConfig cfg = small_config(1);
  cfg.validate();
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.lr == cfg.lr);
  CHECK(back.beta == cfg.beta);
  CHECK(back.policy.embed_dim == cfg.policy.embed_dim);

  TrainConfig bad = cfg;
  bad.grad_accum = 9;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 7;
  bad.grad_accum = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero-step run: initial checkpoint only, empty metrics body") {
  TrainConfig cfg = small_config(2);
  cfg.total_steps = 0;
  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("zero");
  const TrainResult res = train(policy, small_dataset(cfg.batch_size, 2), cfg, dir);
  CHECK(res.steps_run == 0);
  CHECK(res.checkpoint_paths.size() == 1);
  CHECK(fs::exists(dir + "/" + checkpoint_name(0)));
  CHECK(load_metrics(res.metrics_path).empty());
  fs::remove_all(dir);
}

TEST_CASE("checkpoint cadence: floor(N/c) + 1 including step zero") {
  TrainConfig cfg = small_config(3);
  cfg.total_steps = 5;
  cfg.checkpoint_every = 2;
  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("cadence");
  const TrainResult res = train(policy, small_dataset(cfg.batch_size, 3), cfg, dir);
  CHECK(res.checkpoint_paths.size() == 3);  // steps 0, 2, 4
  CHECK(fs::exists(dir + "/" + checkpoint_name(0)));
  CHECK(fs::exists(dir + "/" + checkpoint_name(2)));
  CHECK(fs::exists(dir + "/" + checkpoint_name(4)));
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic modulo the wall-clock column") {
  const std::string d1 = temp_dir("det1"), d2 = temp_dir("det2");
  for (const auto& dir : {d1, d2}) {
    TrainConfig cfg = small_config(11);
    Policy policy(cfg.policy, vocab());
    train(policy, small_dataset(cfg.batch_size, 11), cfg, dir);
  }
  CHECK(metrics_without_wall(d1 + "/metrics.csv") == metrics_without_wall(d2 + "/metrics.csv"));
  // final checkpoints bitwise equal
  CHECK(read_file(d1 + "/" + checkpoint_name(2)) == read_file(d2 + "/" + checkpoint_name(2)));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("thread count does not change the trajectory") {
  const std::string d1 = temp_dir("thr1"), d2 = temp_dir("thr2");
  ad::set_max_threads(1);
  {
    TrainConfig cfg = small_config(12);
    Policy policy(cfg.policy, vocab());
    train(policy, small_dataset(cfg.batch_size, 12), cfg, d1);
  }
  ad::set_max_threads(0);
  {
    TrainConfig cfg = small_config(12);
    Policy policy(cfg.policy, vocab());
    train(policy, small_dataset(cfg.batch_size, 12), cfg, d2);
  }
  CHECK(metrics_without_wall(d1 + "/metrics.csv") == metrics_without_wall(d2 + "/metrics.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("resume reproduces the unbroken trajectory") {
  TrainConfig cfg = small_config(21);
  cfg.total_steps = 4;
  cfg.checkpoint_every = 2;
  const Dataset ds = small_dataset(cfg.batch_size, 21);

  const std::string full_dir = temp_dir("full");
  Policy policy(cfg.policy, vocab());
  train(policy, ds, cfg, full_dir);

  const std::string part_dir = temp_dir("part");
  const TrainResult partial = resume(full_dir + "/" + checkpoint_name(2), ds, cfg, part_dir,
                                     vocab());
  CHECK(partial.steps_run == 2);

  const auto full_rows = load_metrics(full_dir + "/metrics.csv");
  const auto tail_rows = load_metrics(part_dir + "/metrics.csv");
  REQUIRE(full_rows.size() == 4);
  REQUIRE(tail_rows.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    const auto& a = full_rows[2 + i];
    const auto& b = tail_rows[i];
    CHECK(a.step == b.step);
    CHECK(a.mean_total_reward == b.mean_total_reward);  // bitwise
    CHECK(a.mean_kl == b.mean_kl);
    CHECK(a.pg_loss == b.pg_loss);
  }
  // step-4 checkpoints agree bitwise
  CHECK(read_file(full_dir + "/" + checkpoint_name(4)) ==
        read_file(part_dir + "/" + checkpoint_name(4)));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("resume with changed beta is allowed; corrupted checkpoints are not") {
  TrainConfig cfg = small_config(22);
  cfg.total_steps = 2;
  cfg.checkpoint_every = 1;
  const Dataset ds = small_dataset(cfg.batch_size, 22);
  const std::string dir = temp_dir("resume_beta");
  Policy policy(cfg.policy, vocab());
  train(policy, ds, cfg, dir);

  TrainConfig changed = cfg;
  changed.beta = 0.04;
  const std::string dir2 = temp_dir("resume_beta2");
  const TrainResult res = resume(dir + "/" + checkpoint_name(1), ds, changed, dir2, vocab());
  CHECK(res.steps_run == 1);

  std::string bytes = read_file(dir + "/" + checkpoint_name(1));
  bytes[bytes.size() / 3] ^= 0x11;
  write_file(dir + "/" + checkpoint_name(1), bytes);
  CHECK_THROWS_AS(resume(dir + "/" + checkpoint_name(1), ds, cfg, dir2, vocab()),
                  IntegrityError);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("reward means are bounded by the configured weights") {
  TrainConfig cfg = small_config(31);
  cfg.total_steps = 2;
  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("bounds");
  const TrainResult res = train(policy, small_dataset(cfg.batch_size, 31), cfg, dir);
  for (const auto& row : res.metrics) {
    CHECK(row.mean_total_reward >= 0.0);
    CHECK(row.mean_total_reward <= cfg.reward.format_weight + cfg.reward.accuracy_weight);
    CHECK(row.mean_format_reward >= 0.0);
    CHECK(row.mean_format_reward <= 1.0);
    CHECK(row.mean_completion_length <= cfg.max_new_tokens);
  }
  fs::remove_all(dir);
}

TEST_CASE("metrics rows parse back from the file") {
  TrainConfig cfg = small_config(33);
  cfg.total_steps = 2;
  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("metrics");
  const TrainResult res = train(policy, small_dataset(cfg.batch_size, 33), cfg, dir);
  const auto rows = load_metrics(res.metrics_path);
  REQUIRE(rows.size() == res.metrics.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == res.metrics[i].step);
    CHECK(rows[i].mean_total_reward == res.metrics[i].mean_total_reward);
  }
  CHECK_THROWS_AS(load_metrics(dir + "/does_not_exist.csv"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("one-shot training drives the training-example accuracy to saturation") {
  // Toy one-example run; the analog of single-example reward saturation.
  TrainConfig cfg = small_config(41);
  cfg.batch_size = 16;
  cfg.group_size = 4;
  cfg.total_steps = 150;
  cfg.checkpoint_every = 150;
  cfg.lr = 3e-3;
  const auto pool = render_pool(12, 41);
  FewShotSpec spec;
  spec.n_cls = 1;
  spec.seed = 41;
  const Dataset ds = duplicate_to_batch(sample_fewshot(pool, spec), cfg.batch_size);

  Policy policy(cfg.policy, vocab());
  const std::string dir = temp_dir("oneshot");
  const TrainResult res = train(policy, ds, cfg, dir);
  REQUIRE(res.metrics.size() == 150);
  double final_window = 0.0;
  bool reached_one = false;
  for (int i = 120; i < 150; ++i) {
    final_window += res.metrics[i].mean_accuracy_reward;
    reached_one = reached_one || res.metrics[i].mean_accuracy_reward == 1.0;
  }
  final_window /= 30;
  CHECK(reached_one);
  CHECK(final_window >= 0.95);  // reaches 1.0 and stays there
  fs::remove_all(dir);
}
