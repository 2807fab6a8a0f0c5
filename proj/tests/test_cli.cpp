#include <doctest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "rlvr/cli.hpp"
#include "rlvr/ioutil.hpp"
#include "rlvr/taskgen.hpp"
#include "rlvr/trainer.hpp"

using namespace rlvr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rlvr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

int cli(std::initializer_list<std::string> args) { return run_cli(std::vector<std::string>(args)); }

}  // namespace

TEST_CASE("gen-pool: writes a pool, refuses overwrite, identical on rerun") {
  const std::string dir = temp_dir("gen");
  const std::string pool = dir + "/pool.jsonl";
  CHECK(cli({"gen-pool", "--size", "30", "--seed", "7", "--out", pool}) == kExitOk);
  CHECK(load_samples(pool).size() == 30);
  CHECK(fs::exists(pool + ".manifest.json"));

  CHECK(cli({"gen-pool", "--size", "30", "--seed", "7", "--out", pool}) == kExitUsage);
  const std::string h1 = file_hash_hex(pool);
  CHECK(cli({"gen-pool", "--size", "30", "--seed", "7", "--out", pool, "--force"}) == kExitOk);
  CHECK(file_hash_hex(pool) == h1);  // rerun with same flags is bit-identical

  CHECK(cli({"gen-pool", "--size", "0", "--seed", "7", "--out", dir + "/x.jsonl"}) ==
        kExitUsage);
  fs::remove_all(dir);
}

TEST_CASE("sample-fewshot: presets and explicit counts") {
  const std::string dir = temp_dir("few");
  const std::string pool = dir + "/pool.jsonl";
  REQUIRE(cli({"gen-pool", "--size", "45", "--seed", "3", "--out", pool}) == kExitOk);

  const std::string ds_path = dir + "/pi1C.jsonl";
  CHECK(cli({"sample-fewshot", "--pool", pool, "--preset", "pi1C", "--seed", "5", "--out",
             ds_path}) == kExitOk);
  const Dataset ds = load_dataset(ds_path);
  CHECK(ds.samples.size() == 128);
  for (const auto& s : ds.samples) CHECK(s.kind == TaskKind::CLS);
  CHECK(ds.spec.n_cls == 1);

  CHECK(cli({"sample-fewshot", "--pool", pool, "--vqa", "2", "--cls", "1", "--vg", "1",
             "--seed", "5", "--batch", "16", "--out", dir + "/mix.jsonl"}) == kExitOk);
  CHECK(load_dataset(dir + "/mix.jsonl").samples.size() == 16);

  // all-zero counts are a usage error
  CHECK(cli({"sample-fewshot", "--pool", pool, "--vqa", "0", "--cls", "0", "--vg", "0",
             "--seed", "5", "--out", dir + "/zero.jsonl"}) == kExitUsage);
  // missing pool file
  CHECK(cli({"sample-fewshot", "--pool", dir + "/nope.jsonl", "--preset", "pi1C", "--seed",
             "5", "--out", dir + "/x.jsonl"}) == kExitMissingInput);
  fs::remove_all(dir);
}

TEST_CASE("train / eval / plot wire together end to end") {
  const std::string dir = temp_dir("pipeline");
  const std::string pool = dir + "/pool.jsonl";
  REQUIRE(cli({"gen-pool", "--size", "45", "--seed", "11", "--out", pool}) == kExitOk);
  const std::string ds = dir + "/ds.jsonl";
  REQUIRE(cli({"sample-fewshot", "--pool", pool, "--preset", "pi2VC", "--seed", "2", "--batch",
               "8", "--out", ds}) == kExitOk);

  const std::string run = dir + "/run";
  CHECK(cli({"train", "--dataset", ds, "--out", run, "--steps", "2", "--batch", "8", "--group",
             "2", "--max-new-tokens", "24", "--embed-dim", "12", "--layers", "1", "--heads",
             "2", "--checkpoint-every", "1", "--seed", "9", "--policy-seed", "9"}) == kExitOk);
  CHECK(fs::exists(run + "/metrics.csv"));
  CHECK(fs::exists(run + "/" + checkpoint_name(0)));
  CHECK(fs::exists(run + "/" + checkpoint_name(2)));
  const json manifest = json::parse(read_file(run + "/manifest.json"));
  CHECK(manifest["config"]["total_steps"] == 2);
  CHECK(manifest["config"]["policy"]["embed_dim"] == 12);

  const std::string evaldir = dir + "/eval";
  CHECK(cli({"eval", "--ckpt", run + "/" + checkpoint_name(2), "--eval-set", pool, "--out",
             evaldir, "--max-new-tokens", "24"}) == kExitOk);
  CHECK(fs::exists(evaldir + "/report.json"));
  CHECK(fs::exists(evaldir + "/predictions.jsonl"));

  const std::string sweepdir = dir + "/sweep";
  CHECK(cli({"eval", "--ckpt-dir", run, "--eval-set", pool, "--out", sweepdir,
             "--max-new-tokens", "24"}) == kExitOk);
  CHECK(fs::exists(sweepdir + "/sweep.txt"));

  CHECK(cli({"plot", "--metrics", run + "/metrics.csv", "--out", dir + "/curves.svg"}) ==
        kExitOk);
  const std::string svg = read_file(dir + "/curves.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("mean_total_reward") != std::string::npos);

  // eval on an empty checkpoint dir is a missing-input failure
  const std::string empty = dir + "/empty";
  fs::create_directories(empty);
  CHECK(cli({"eval", "--ckpt-dir", empty, "--eval-set", pool, "--out", dir + "/e2"}) ==
        kExitMissingInput);
  fs::remove_all(dir);
}

TEST_CASE("train config file merges under explicit flags") {
  const std::string dir = temp_dir("cfg");
  const std::string pool = dir + "/pool.jsonl";
  REQUIRE(cli({"gen-pool", "--size", "15", "--seed", "4", "--out", pool}) == kExitOk);
  const std::string ds = dir + "/ds.jsonl";
  REQUIRE(cli({"sample-fewshot", "--pool", pool, "--cls", "1", "--seed", "2", "--batch", "4",
               "--out", ds}) == kExitOk);

  TrainConfig file_cfg;
  file_cfg.batch_size = 4;
  file_cfg.group_size = 2;
  file_cfg.total_steps = 1;
  file_cfg.max_new_tokens = 24;
  file_cfg.beta = 0.04;
  file_cfg.policy.embed_dim = 12;
  file_cfg.policy.num_layers = 1;
  file_cfg.policy.num_heads = 2;
  write_file(dir + "/cfg.json", file_cfg.to_json());

  const std::string run = dir + "/run";
  // --beta on the command line beats the config file's 0.04
  CHECK(cli({"train", "--dataset", ds, "--out", run, "--config", dir + "/cfg.json", "--beta",
             "0.001"}) == kExitOk);
  const json manifest = json::parse(read_file(run + "/manifest.json"));
  CHECK(manifest["config"]["beta"] == 0.001);
  CHECK(manifest["config"]["batch_size"] == 4);  // from the file
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoint yields the integrity exit code") {
  const std::string dir = temp_dir("integrity");
  const std::string pool = dir + "/pool.jsonl";
  REQUIRE(cli({"gen-pool", "--size", "15", "--seed", "4", "--out", pool}) == kExitOk);
  const std::string ds = dir + "/ds.jsonl";
  REQUIRE(cli({"sample-fewshot", "--pool", pool, "--cls", "1", "--seed", "2", "--batch", "4",
               "--out", ds}) == kExitOk);
  const std::string run = dir + "/run";
  REQUIRE(cli({"train", "--dataset", ds, "--out", run, "--steps", "0", "--batch", "4",
               "--group", "2", "--embed-dim", "12", "--layers", "1", "--heads", "2",
               "--max-new-tokens", "24"}) == kExitOk);
  std::string bytes = read_file(run + "/" + checkpoint_name(0));
  bytes[bytes.size() / 2] ^= 0x01;
  write_file(run + "/" + checkpoint_name(0), bytes);
  CHECK(cli({"eval", "--ckpt", run + "/" + checkpoint_name(0), "--eval-set", pool, "--out",
             dir + "/e"}) == kExitIntegrity);
  fs::remove_all(dir);
}

TEST_CASE("unknown flags and missing subcommands are usage errors") {
  CHECK(cli({"gen-pool", "--no-such-flag"}) == kExitUsage);
  CHECK(cli({}) == kExitUsage);
  CHECK(cli({"no-such-command"}) == kExitUsage);
}
