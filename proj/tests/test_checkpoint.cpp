#include <doctest.h>

#include <filesystem>

#include "rlvr/checkpoint.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/ioutil.hpp"

using namespace rlvr;
namespace fs = std::filesystem;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

PolicyConfig tiny_config(uint64_t seed = 6) {
  PolicyConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.max_seq_len = 64;
  cfg.patch_count = 16;
  cfg.seed = seed;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("rlvr_ck_" + name)).string();
}

}  // namespace

TEST_CASE("checkpoint round-trip restores the policy exactly") {
  Policy policy(tiny_config(), vocab());
  policy.params().find("tok_embed")->data[5] = 0.123456789;
  const std::string path = temp_path("a.bin");
  save_checkpoint(path, make_checkpoint(policy, 42, 777));

  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.step == 42);
  CHECK(ck.run_seed == 777);
  CHECK(ck.config.embed_dim == 8);
  CHECK(ck.vocab_tokens == vocab().tokens());
  const Policy back = restore_policy(ck, vocab());
  for (size_t i = 0; i < policy.params().entries.size(); ++i)
    CHECK(back.params().entries[i].second->data == policy.params().entries[i].second->data);
  fs::remove(path);
}

TEST_CASE("load then save is byte identity") {
  Policy policy(tiny_config(3), vocab());
  const std::string p1 = temp_path("b1.bin"), p2 = temp_path("b2.bin");
  save_checkpoint(p1, make_checkpoint(policy, 7, 99));
  save_checkpoint(p2, load_checkpoint(p1));
  CHECK(read_file(p1) == read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("optimizer moments travel with the checkpoint") {
  Policy policy(tiny_config(4), vocab());
  OptimState opt = OptimState::init(policy.params(), 1e-3);
  opt.step = 12;
  opt.m[0].second[3] = 0.5;
  opt.v[1].second[0] = 0.25;
  const std::string path = temp_path("c.bin");
  const OptimMoments mm = opt.moments();
  save_checkpoint(path, make_checkpoint(policy, 12, 1, &mm));

  const Checkpoint ck = load_checkpoint(path);
  REQUIRE(has_moments(ck));
  OptimState back = OptimState::init(policy.params(), 1e-3);
  back.load_moments(policy.params(), restore_moments(ck));
  CHECK(back.step == 12);
  CHECK(back.m[0].second[3] == 0.5);
  CHECK(back.v[1].second[0] == 0.25);
  fs::remove(path);
}

TEST_CASE("corrupted checkpoints are refused") {
  Policy policy(tiny_config(5), vocab());
  const std::string path = temp_path("d.bin");
  save_checkpoint(path, make_checkpoint(policy, 1, 1));
  std::string bytes = read_file(path);
  bytes[bytes.size() / 2] ^= 0x40;
  write_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), IntegrityError);
  write_file(path, "not a checkpoint at all");
  CHECK_THROWS(load_checkpoint(path));
  fs::remove(path);
}
