#include "rlvr/checkpoint.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rlvr/ioutil.hpp"

namespace rlvr {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'L', 'V', 'R', 'C', 'K', 'P', '1'};

void put_u64(std::string& out, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(buf, 8);
}

uint64_t get_u64(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

json config_to_json(const PolicyConfig& c) {
  return json{{"embed_dim", c.embed_dim},   {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},   {"max_seq_len", c.max_seq_len},
              {"patch_count", c.patch_count}, {"seed", c.seed}};
}

PolicyConfig config_from_json(const json& j) {
  PolicyConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.patch_count = j.at("patch_count").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["config"] = config_to_json(ck.config);
  header["vocab"] = ck.vocab_tokens;
  header["step"] = ck.step;
  header["run_seed"] = ck.run_seed;
  json tensors = json::array();
  for (const auto& [name, t] : ck.tensors)
    tensors.push_back(json{{"name", name}, {"shape", t->shape}});
  header["tensors"] = tensors;
  const std::string hdr = header.dump();

  std::string out;
  out.append(kMagic, 8);
  put_u64(out, hdr.size());
  out += hdr;
  for (const auto& [name, t] : ck.tensors) {
    static_assert(sizeof(double) == 8);
    const size_t bytes = t->data.size() * 8;
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t->data.data(), bytes);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 24 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const uint64_t stored_hash = get_u64(buf, buf.size() - 8);
  if (fnv1a64(buf.data(), buf.size() - 8) != stored_hash)
    throw IntegrityError(path + ": integrity hash mismatch, refusing to load");

  const uint64_t hdr_len = get_u64(buf, 8);
  if (16 + hdr_len + 8 > buf.size()) throw std::runtime_error(path + ": truncated header");
  const json header = json::parse(buf.substr(16, hdr_len));

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  ck.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
  ck.step = header.at("step").get<uint64_t>();
  ck.run_seed = header.at("run_seed").get<uint64_t>();

  size_t off = 16 + hdr_len;
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
    int64_t n = 1;
    for (int d : shape) n *= d;
    const size_t bytes = static_cast<size_t>(n) * 8;
    if (off + bytes > buf.size() - 8) throw std::runtime_error(path + ": truncated payload");
    std::vector<double> data(static_cast<size_t>(n));
    std::memcpy(data.data(), buf.data() + off, bytes);
    off += bytes;
    ck.tensors.emplace_back(name, ad::make_tensor(shape, std::move(data)));
  }
  if (off != buf.size() - 8) throw std::runtime_error(path + ": trailing bytes in payload");
  return ck;
}

Checkpoint make_checkpoint(const Policy& policy, uint64_t step, uint64_t run_seed,
                           const OptimMoments* moments) {
  Checkpoint ck;
  ck.config = policy.config();
  ck.vocab_tokens = policy.vocab().tokens();
  ck.step = step;
  ck.run_seed = run_seed;
  for (const auto& [name, t] : policy.params().entries)
    ck.tensors.emplace_back(name, ad::make_tensor(t->shape, t->data));
  if (moments) {
    for (const auto& [name, data] : moments->m)
      ck.tensors.emplace_back("adam_m." + name,
                              ad::make_tensor({static_cast<int>(data.size())}, data));
    for (const auto& [name, data] : moments->v)
      ck.tensors.emplace_back("adam_v." + name,
                              ad::make_tensor({static_cast<int>(data.size())}, data));
    ck.tensors.emplace_back("adam_step",
                            ad::make_tensor({1}, {static_cast<double>(moments->adam_step)}));
  }
  return ck;
}

Policy restore_policy(const Checkpoint& ck, const Vocabulary& vocab) {
  if (ck.vocab_tokens != vocab.tokens())
    throw std::runtime_error("checkpoint vocabulary does not match this build");
  Policy policy(ck.config, vocab);
  for (auto& [name, t] : policy.params().entries) {
    bool found = false;
    for (const auto& [cn, ct] : ck.tensors) {
      if (cn == name) {
        if (ct->shape != t->shape) throw std::runtime_error("checkpoint shape mismatch: " + name);
        t->data = ct->data;
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint missing tensor: " + name);
  }
  policy.step_counter = ck.step;
  return policy;
}

bool has_moments(const Checkpoint& ck) {
  for (const auto& [name, t] : ck.tensors)
    if (name == "adam_step") return true;
  return false;
}

OptimMoments restore_moments(const Checkpoint& ck) {
  OptimMoments out;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam_m.", 0) == 0) out.m.emplace_back(name.substr(7), t->data);
    else if (name.rfind("adam_v.", 0) == 0) out.v.emplace_back(name.substr(7), t->data);
    else if (name == "adam_step") out.adam_step = static_cast<uint64_t>(t->data.at(0));
  }
  return out;
}

}  // namespace rlvr
