#include "rlvr/policy.hpp"

#include "rlvr/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rlvr {

using ad::Tape;
using ad::TensorPtr;

namespace {

constexpr double kMaskedLogit = -1e30;

struct LayerRefs {
  TensorPtr attn_g, wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr mlp_g, w1, b1, w2, b2;
};

struct Wired {
  TensorPtr tok, pos, patch_w, patch_b, final_g;
  std::vector<LayerRefs> layers;
};

Wired wire(const ParamSet& p, int num_layers) {
  Wired w;
  w.tok = p.find("tok_embed");
  w.pos = p.find("pos_embed");
  w.patch_w = p.find("patch_w");
  w.patch_b = p.find("patch_b");
  w.final_g = p.find("final_norm_g");
  for (int l = 0; l < num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerRefs lr;
    lr.attn_g = p.find(pre + "attn_norm_g");
    lr.wq = p.find(pre + "wq");
    lr.bq = p.find(pre + "bq");
    lr.wk = p.find(pre + "wk");
    lr.bk = p.find(pre + "bk");
    lr.wv = p.find(pre + "wv");
    lr.bv = p.find(pre + "bv");
    lr.wo = p.find(pre + "wo");
    lr.bo = p.find(pre + "bo");
    lr.mlp_g = p.find(pre + "mlp_norm_g");
    lr.w1 = p.find(pre + "w1");
    lr.b1 = p.find(pre + "b1");
    lr.w2 = p.find(pre + "w2");
    lr.b2 = p.find(pre + "b2");
    w.layers.push_back(std::move(lr));
  }
  return w;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

// ---- value-only incremental decoder used by sample() ------------------
// Arithmetic mirrors the tensor-op path operation for operation (same
// summation orders), so sampling-time log-probs and teacher-forced log_probs
// agree bitwise while parameters are unchanged.
struct InferenceState {
  Wired w;  // shared_ptr copies of the parameter tensors
  PolicyConfig cfg;
  // per layer K/V rows, [t][D]
  std::vector<std::vector<std::vector<double>>> kcache, vcache;
  int t = 0;

  InferenceState(Wired wired, const PolicyConfig& cfg_)
      : w(std::move(wired)), cfg(cfg_), kcache(cfg_.num_layers), vcache(cfg_.num_layers) {}

  static void rmsnorm_row(const std::vector<double>& x, const TensorPtr& gain,
                          std::vector<double>& out) {
    const int d = static_cast<int>(x.size());
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += x[j] * x[j];
    const double inv = 1.0 / std::sqrt(ms / d + 1e-6);
    out.resize(d);
    for (int j = 0; j < d; ++j) out[j] = x[j] * gain->data[j] * inv;
  }

  // out[j] = sum_p x[p]*W[p,j] + b[j]
  static void linear_row(const std::vector<double>& x, const TensorPtr& wt, const TensorPtr& b,
                         std::vector<double>& out) {
    const int din = wt->shape[0], dout = wt->shape[1];
    out.assign(dout, 0.0);
    for (int p = 0; p < din; ++p) {
      const double xp = x[p];
      const double* row = wt->data.data() + static_cast<size_t>(p) * dout;
      for (int j = 0; j < dout; ++j) out[j] += xp * row[j];
    }
    for (int j = 0; j < dout; ++j) out[j] += b->data[j];
  }

  // Feeds one embedding row (token/patch + position already added) through the
  // decoder stack; returns final-norm output for this position.
  std::vector<double> push_row(std::vector<double> x) {
    const int d = cfg.embed_dim;
    const int heads = cfg.num_heads;
    const int dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> h, q, k, v, ctx(d), att, m, m2;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const LayerRefs& lr = w.layers[l];
      rmsnorm_row(x, lr.attn_g, h);
      linear_row(h, lr.wq, lr.bq, q);
      linear_row(h, lr.wk, lr.bk, k);
      linear_row(h, lr.wv, lr.bv, v);
      kcache[l].push_back(k);
      vcache[l].push_back(v);
      const int tlen = static_cast<int>(kcache[l].size());
      for (int hd = 0; hd < heads; ++hd) {
        const int off = hd * dh;
        std::vector<double> scores(tlen);
        for (int tt = 0; tt < tlen; ++tt) {
          double dot = 0.0;
          const double* kt = kcache[l][tt].data() + off;
          for (int p = 0; p < dh; ++p) dot += q[off + p] * kt[p];
          scores[tt] = dot * inv_sqrt_dh;
        }
        double mx = scores[0];
        for (int tt = 1; tt < tlen; ++tt) mx = std::max(mx, scores[tt]);
        double se = 0.0;
        for (int tt = 0; tt < tlen; ++tt) se += std::exp(scores[tt] - mx);
        for (int tt = 0; tt < tlen; ++tt) scores[tt] = std::exp(scores[tt] - mx) / se;
        for (int p = 0; p < dh; ++p) ctx[off + p] = 0.0;
        for (int tt = 0; tt < tlen; ++tt) {
          const double ptt = scores[tt];
          const double* vt = vcache[l][tt].data() + off;
          for (int p = 0; p < dh; ++p) ctx[off + p] += ptt * vt[p];
        }
      }
      linear_row(ctx, lr.wo, lr.bo, att);
      for (int j = 0; j < d; ++j) x[j] += att[j];
      rmsnorm_row(x, lr.mlp_g, h);
      linear_row(h, lr.w1, lr.b1, m);
      for (double& mv : m) mv = gelu_scalar(mv);
      linear_row(m, lr.w2, lr.b2, m2);
      for (int j = 0; j < d; ++j) x[j] += m2[j];
    }
    std::vector<double> f;
    rmsnorm_row(x, w.final_g, f);
    ++t;
    return f;
  }

  // logits[w] = f · tok_embed[w] (weight-tied head), scaled by 1/temperature.
  std::vector<double> scaled_logits(const std::vector<double>& f, double inv_temp) const {
    const int vsz = w.tok->shape[0];
    const int d = w.tok->shape[1];
    std::vector<double> out(vsz);
    for (int wi = 0; wi < vsz; ++wi) {
      const double* e = w.tok->data.data() + static_cast<size_t>(wi) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += f[j] * e[j];
      out[wi] = dot * inv_temp;
    }
    return out;
  }
};

}  // namespace

// Cached prefix pass: KV state after the prefix, the prefix length, the
// answer form, and the last row's unscaled head logits.
class RolloutPrefix {
 public:
  InferenceState state;
  std::vector<double> f_last;
  std::vector<double> raw_logits;  // temperature-1 logits at the last prefix row
  int prefix_len = 0;
  CompletionGrammar::AnswerForm form;

  RolloutPrefix(InferenceState st, CompletionGrammar::AnswerForm f)
      : state(std::move(st)), form(f) {}
};

void PolicyConfig::validate() const {
  if (embed_dim <= 0 || num_layers <= 0 || num_heads <= 0 || max_seq_len <= 0 || patch_count <= 0)
    throw std::invalid_argument("PolicyConfig: all dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw std::invalid_argument("PolicyConfig: embed_dim not divisible by num_heads");
  const int grid = static_cast<int>(std::lround(std::sqrt(double(patch_count))));
  if (grid * grid != patch_count || Scene::kRaster % grid != 0)
    throw std::invalid_argument("PolicyConfig: patch_count must be a square dividing the raster");
}

TensorPtr ParamSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
}

ParamSet ParamSet::clone(bool requires_grad) const {
  ParamSet out;
  out.entries.reserve(entries.size());
  for (const auto& [n, t] : entries) {
    auto c = ad::make_tensor(t->shape, t->data);
    c->requires_grad = requires_grad;
    out.entries.emplace_back(n, std::move(c));
  }
  return out;
}

void ParamSet::zero_grads() {
  for (auto& [n, t] : entries) t->zero_grad();
}

size_t ParamSet::total_params() const {
  size_t n = 0;
  for (const auto& [name, t] : entries) n += t->data.size();
  return n;
}

void ParamSet::accumulate_grads_from(const ParamSet& other) {
  if (other.entries.size() != entries.size())
    throw std::invalid_argument("ParamSet: layout mismatch in grad accumulation");
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& dst = entries[i].second;
    const auto& src = other.entries[i].second;
    if (src->grad.empty()) continue;
    dst->ensure_grad();
    for (size_t j = 0; j < dst->grad.size(); ++j) dst->grad[j] += src->grad[j];
  }
}

Policy::Policy(PolicyConfig cfg, const Vocabulary& vocab) : cfg_(cfg), vocab_(&vocab) {
  cfg_.validate();
  init_params_();
}

void Policy::init_params_() {
  const int d = cfg_.embed_dim;
  const int v = vocab_->size();
  const int grid = static_cast<int>(std::lround(std::sqrt(double(cfg_.patch_count))));
  const int patch_px = Scene::kRaster / grid;
  const int patch_dim = patch_px * patch_px;

  // Small init keeps the untrained masked distribution near uniform.
  const double sigma = 0.02;
  Rng rng = Rng(cfg_.seed).fork(0x1417);
  const auto normal_tensor = [&](std::vector<int> shape, double sd) {
    int64_t n = 1;
    for (int dim : shape) n *= dim;
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& x : data) x = rng.normal(0.0, sd);
    return ad::make_param(std::move(shape), std::move(data));
  };
  const auto const_tensor = [&](std::vector<int> shape, double fill) {
    auto t = ad::make_tensor(std::move(shape), fill);
    t->requires_grad = true;
    return t;
  };

  params_.entries.clear();
  params_.entries.emplace_back("tok_embed", normal_tensor({v, d}, sigma));
  params_.entries.emplace_back("pos_embed", normal_tensor({cfg_.max_seq_len, d}, sigma));
  params_.entries.emplace_back("patch_w", normal_tensor({patch_dim, d}, sigma));
  params_.entries.emplace_back("patch_b", const_tensor({d}, 0.0));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    params_.entries.emplace_back(pre + "attn_norm_g", const_tensor({d}, 1.0));
    params_.entries.emplace_back(pre + "wq", normal_tensor({d, d}, sigma));
    params_.entries.emplace_back(pre + "bq", const_tensor({d}, 0.0));
    params_.entries.emplace_back(pre + "wk", normal_tensor({d, d}, sigma));
    params_.entries.emplace_back(pre + "bk", const_tensor({d}, 0.0));
    params_.entries.emplace_back(pre + "wv", normal_tensor({d, d}, sigma));
    params_.entries.emplace_back(pre + "bv", const_tensor({d}, 0.0));
    params_.entries.emplace_back(pre + "wo", normal_tensor({d, d}, sigma));
    params_.entries.emplace_back(pre + "bo", const_tensor({d}, 0.0));
    params_.entries.emplace_back(pre + "mlp_norm_g", const_tensor({d}, 1.0));
    params_.entries.emplace_back(pre + "w1", normal_tensor({d, 4 * d}, sigma));
    params_.entries.emplace_back(pre + "b1", const_tensor({4 * d}, 0.0));
    params_.entries.emplace_back(pre + "w2", normal_tensor({4 * d, d}, sigma));
    params_.entries.emplace_back(pre + "b2", const_tensor({d}, 0.0));
  }
  params_.entries.emplace_back("final_norm_g", const_tensor({d}, 1.0));
}

Policy Policy::clone_frozen() const {
  Policy copy(*this);
  copy.params_ = params_.clone(/*requires_grad=*/false);
  return copy;
}

std::vector<std::vector<double>> Policy::raster_patches_(const std::vector<double>& raster) const {
  const int px = Scene::kRaster;
  if (static_cast<int>(raster.size()) != px * px)
    throw std::invalid_argument("encode_image: raster must be " + std::to_string(px) + "x" +
                                std::to_string(px));
  const int grid = static_cast<int>(std::lround(std::sqrt(double(cfg_.patch_count))));
  const int pp = px / grid;
  std::vector<std::vector<double>> patches(cfg_.patch_count);
  for (int pr = 0; pr < grid; ++pr)
    for (int pc = 0; pc < grid; ++pc) {
      auto& patch = patches[pr * grid + pc];
      patch.reserve(static_cast<size_t>(pp) * pp);
      for (int r = 0; r < pp; ++r)
        for (int c = 0; c < pp; ++c)
          patch.push_back(raster[static_cast<size_t>(pr * pp + r) * px + (pc * pp + c)]);
    }
  return patches;
}

TensorPtr Policy::encode_image(Tape* tape, const ParamSet& params,
                               const std::vector<double>& raster) const {
  const auto patches = raster_patches_(raster);
  const int pd = static_cast<int>(patches[0].size());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(cfg_.patch_count) * pd);
  for (const auto& p : patches) flat.insert(flat.end(), p.begin(), p.end());
  auto pixels = ad::make_tensor({cfg_.patch_count, pd}, std::move(flat));
  const Wired w = wire(params, cfg_.num_layers);
  return ad::add_rowvec(tape, ad::matmul(tape, pixels, w.patch_w), w.patch_b);
}

RolloutPrefixPtr Policy::make_prefix(const std::vector<int>& prompt_tokens,
                                     const std::vector<double>& raster) const {
  const Wired w = wire(params_, cfg_.num_layers);
  const int d = cfg_.embed_dim;
  const int prefix_len = cfg_.patch_count + 1 + static_cast<int>(prompt_tokens.size());
  if (prefix_len >= cfg_.max_seq_len)
    throw std::invalid_argument("make_prefix: prompt exceeds max_seq_len");

  const std::string prompt_text = vocab_->decode(prompt_tokens);
  const auto form = CompletionGrammar::form_for_prompt(prompt_text);

  const TensorPtr patch_embeds = encode_image(nullptr, params_, raster);
  auto prefix = std::make_shared<RolloutPrefix>(InferenceState(w, cfg_), form);
  std::vector<double> row(d);
  for (int t = 0; t < prefix_len; ++t) {
    const double* pos = w.pos->data.data() + static_cast<size_t>(t) * d;
    if (t < cfg_.patch_count) {
      const double* pe = patch_embeds->data.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) row[j] = pe[j] + pos[j];
    } else {
      const int id = t == cfg_.patch_count ? vocab_->bos()
                                           : prompt_tokens[t - cfg_.patch_count - 1];
      const double* e = w.tok->data.data() + static_cast<size_t>(id) * d;
      for (int j = 0; j < d; ++j) row[j] = e[j] + pos[j];
    }
    prefix->f_last = prefix->state.push_row(row);
  }
  prefix->raw_logits = prefix->state.scaled_logits(prefix->f_last, 1.0);
  prefix->prefix_len = prefix_len;
  return prefix;
}

std::vector<Completion> Policy::sample(const std::vector<int>& prompt_tokens,
                                       const std::vector<double>& raster, int group_size,
                                       double temperature, int max_new_tokens, Rng stream,
                                       const RolloutPrefix* prefix) const {
  if (group_size < 1) throw std::invalid_argument("sample: group_size must be >= 1");
  if (max_new_tokens < 1) throw std::invalid_argument("sample: max_new_tokens must be >= 1");
  if (temperature < 0.0) throw std::invalid_argument("sample: negative temperature");

  const int d = cfg_.embed_dim;
  const int prefix_len = cfg_.patch_count + 1 + static_cast<int>(prompt_tokens.size());
  if (prefix_len + max_new_tokens > cfg_.max_seq_len)
    throw std::invalid_argument("sample: prompt plus completion budget exceeds max_seq_len");

  RolloutPrefixPtr local;
  if (!prefix) {
    local = make_prefix(prompt_tokens, raster);
    prefix = local.get();
  }
  if (prefix->prefix_len != prefix_len)
    throw std::invalid_argument("sample: prefix does not match the prompt");

  const Wired& w = prefix->state.w;
  const auto form = prefix->form;
  const bool greedy = temperature == 0.0;
  const double inv_temp = greedy ? 1.0 : 1.0 / temperature;

  std::vector<double> base_logits = prefix->raw_logits;
  for (double& v : base_logits) v *= inv_temp;
  std::vector<double> row(d);

  std::vector<Completion> out;
  out.reserve(group_size);
  for (int g = 0; g < group_size; ++g) {
    Rng rng = stream.fork(static_cast<uint64_t>(g));
    InferenceState st = prefix->state;
    CompletionGrammar grammar(*vocab_, form);
    Completion comp;
    std::vector<double> logits = base_logits;
    while (static_cast<int>(comp.token_ids.size()) < max_new_tokens && !grammar.done()) {
      const auto& allowed = grammar.allowed();
      // masked softmax over the allowed set only
      double mx = logits[allowed[0]];
      for (int id : allowed) mx = std::max(mx, logits[id]);
      double se = 0.0;
      for (int id : allowed) se += std::exp(logits[id] - mx);
      const double lse = mx + std::log(se);

      int chosen = allowed[0];
      if (greedy) {
        for (int id : allowed)
          if (logits[id] > logits[chosen]) chosen = id;
      } else {
        const double r = rng.uniform();
        double c = 0.0;
        for (int id : allowed) {
          c += std::exp(logits[id] - mx) / se;
          if (r < c) {
            chosen = id;
            break;
          }
          chosen = id;  // numerical tail falls to the last allowed token
        }
      }
      comp.token_ids.push_back(chosen);
      comp.token_logprobs.push_back(greedy ? 0.0 : logits[chosen] - lse);
      grammar.advance(chosen);
      if (grammar.done()) break;

      const int t = st.t;
      const double* pos = w.pos->data.data() + static_cast<size_t>(t) * d;
      const double* e = w.tok->data.data() + static_cast<size_t>(chosen) * d;
      for (int j = 0; j < d; ++j) row[j] = e[j] + pos[j];
      logits = st.scaled_logits(st.push_row(row), inv_temp);
    }
    comp.text = vocab_->decode(comp.token_ids);
    out.push_back(std::move(comp));
  }
  return out;
}

std::vector<double> Policy::log_probs_values_prefix(const RolloutPrefix& prefix,
                                                    const std::vector<int>& completion_ids,
                                                    double temperature) const {
  if (completion_ids.empty())
    throw std::invalid_argument("log_probs_values_prefix: empty completion");
  if (temperature <= 0.0)
    throw std::invalid_argument("log_probs_values_prefix: temperature must be positive");
  const int d = cfg_.embed_dim;
  const double inv_temp = 1.0 / temperature;
  const Wired& w = prefix.state.w;

  InferenceState st = prefix.state;
  CompletionGrammar grammar(*vocab_, prefix.form);
  std::vector<double> lps;
  lps.reserve(completion_ids.size());
  std::vector<double> logits = prefix.raw_logits;
  for (double& v : logits) v *= inv_temp;
  std::vector<double> row(d);
  for (size_t i = 0; i < completion_ids.size(); ++i) {
    const int tok = completion_ids[i];
    const auto& allowed = grammar.allowed();
    double mx = logits[allowed[0]];
    for (int id : allowed) mx = std::max(mx, logits[id]);
    double se = 0.0;
    for (int id : allowed) se += std::exp(logits[id] - mx);
    const double lse = mx + std::log(se);
    lps.push_back(logits[tok] - lse);
    grammar.advance(tok);
    if (i + 1 == completion_ids.size()) break;
    const int t = st.t;
    const double* pos = w.pos->data.data() + static_cast<size_t>(t) * d;
    const double* e = w.tok->data.data() + static_cast<size_t>(tok) * d;
    for (int j = 0; j < d; ++j) row[j] = e[j] + pos[j];
    const auto f = st.push_row(row);
    logits = st.scaled_logits(f, inv_temp);
  }
  return lps;
}

TensorPtr Policy::log_probs(Tape* tape, const ParamSet& params,
                            const std::vector<int>& prompt_tokens,
                            const std::vector<double>& raster,
                            const std::vector<int>& completion_ids, double temperature) const {
  if (completion_ids.empty()) throw std::invalid_argument("log_probs: empty completion");
  if (temperature <= 0.0) throw std::invalid_argument("log_probs: temperature must be positive");
  for (int id : completion_ids)
    if (id < 0 || id >= vocab_->size())
      throw std::invalid_argument("log_probs: token id out of vocabulary");

  const Wired w = wire(params, cfg_.num_layers);
  const int n = static_cast<int>(completion_ids.size());
  const int prefix_len = cfg_.patch_count + 1 + static_cast<int>(prompt_tokens.size());
  const int total = prefix_len + n - 1;
  if (total > cfg_.max_seq_len)
    throw std::invalid_argument("log_probs: sequence exceeds max_seq_len");

  std::vector<int> text_ids;
  text_ids.reserve(static_cast<size_t>(total - cfg_.patch_count));
  text_ids.push_back(vocab_->bos());
  text_ids.insert(text_ids.end(), prompt_tokens.begin(), prompt_tokens.end());
  text_ids.insert(text_ids.end(), completion_ids.begin(), completion_ids.end() - 1);

  const TensorPtr patch_embeds = encode_image(tape, params, raster);
  const TensorPtr tok_embeds = ad::embedding_rows(tape, w.tok, text_ids);
  TensorPtr x = ad::concat_rows(tape, {patch_embeds, tok_embeds});
  x = ad::add(tape, x, ad::slice_rows(tape, w.pos, 0, total));

  const int heads = cfg_.num_heads;
  const int dh = cfg_.head_dim();
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const LayerRefs& lr = w.layers[l];
    TensorPtr h = ad::rmsnorm(tape, x, lr.attn_g);
    TensorPtr q = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wq), lr.bq);
    TensorPtr k = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wk), lr.bk);
    TensorPtr v = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wv), lr.bv);
    std::vector<TensorPtr> ctx_heads;
    ctx_heads.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      TensorPtr qh = ad::slice_cols(tape, q, hd * dh, (hd + 1) * dh);
      TensorPtr kh = ad::slice_cols(tape, k, hd * dh, (hd + 1) * dh);
      TensorPtr vh = ad::slice_cols(tape, v, hd * dh, (hd + 1) * dh);
      TensorPtr scores =
          ad::scale(tape, ad::matmul_nt(tape, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      TensorPtr probs = ad::softmax_causal(tape, scores, 0);
      ctx_heads.push_back(ad::matmul(tape, probs, vh));
    }
    TensorPtr ctx = ad::concat_cols(tape, ctx_heads);
    x = ad::add(tape, x, ad::add_rowvec(tape, ad::matmul(tape, ctx, lr.wo), lr.bo));
    TensorPtr h2 = ad::rmsnorm(tape, x, lr.mlp_g);
    TensorPtr m = ad::gelu(tape, ad::add_rowvec(tape, ad::matmul(tape, h2, lr.w1), lr.b1));
    x = ad::add(tape, x, ad::add_rowvec(tape, ad::matmul(tape, m, lr.w2), lr.b2));
  }
  TensorPtr f = ad::rmsnorm(tape, x, w.final_g);
  TensorPtr fs = ad::slice_rows(tape, f, prefix_len - 1, total);
  TensorPtr logits = ad::scale(tape, ad::matmul_nt(tape, fs, w.tok), 1.0 / temperature);

  // Same token masks the sampler decoded under, rebuilt by grammar replay.
  const std::string prompt_text = vocab_->decode(prompt_tokens);
  CompletionGrammar grammar(*vocab_, CompletionGrammar::form_for_prompt(prompt_text));
  const int vsz = vocab_->size();
  std::vector<double> mask(static_cast<size_t>(n) * vsz, kMaskedLogit);
  for (int i = 0; i < n; ++i) {
    for (int id : grammar.allowed()) mask[static_cast<size_t>(i) * vsz + id] = 0.0;
    grammar.advance(completion_ids[i]);
  }
  logits = ad::add_flat(tape, logits, mask);
  TensorPtr lp = ad::log_softmax(tape, logits);
  return ad::pick(tape, lp, completion_ids);
}

namespace {

// One pre-norm decoder block; rows may attend `extra` cached rows to their
// left (offset = number of rows preceding this block's input).
struct BlockIo {
  TensorPtr x;        // residual stream [n×D]
  TensorPtr k, v;     // this span's per-layer K/V, kept for reuse
};

}  // namespace

std::vector<TensorPtr> Policy::log_probs_group(Tape* tape, const ParamSet& params,
                                               const std::vector<int>& prompt_tokens,
                                               const std::vector<double>& raster,
                                               const std::vector<std::vector<int>>& completions,
                                               double temperature) const {
  if (completions.empty()) throw std::invalid_argument("log_probs_group: empty group");
  if (temperature <= 0.0)
    throw std::invalid_argument("log_probs_group: temperature must be positive");
  for (const auto& c : completions) {
    if (c.empty()) throw std::invalid_argument("log_probs_group: empty completion");
    for (int id : c)
      if (id < 0 || id >= vocab_->size())
        throw std::invalid_argument("log_probs_group: token id out of vocabulary");
  }

  const Wired w = wire(params, cfg_.num_layers);
  const int d = cfg_.embed_dim;
  const int heads = cfg_.num_heads;
  const int dh = cfg_.head_dim();
  const int prefix_len = cfg_.patch_count + 1 + static_cast<int>(prompt_tokens.size());
  for (const auto& c : completions)
    if (prefix_len + static_cast<int>(c.size()) - 1 > cfg_.max_seq_len)
      throw std::invalid_argument("log_probs_group: sequence exceeds max_seq_len");

  // ---- shared prefix pass (kept on the tape; all completions backprop into it)
  std::vector<int> prefix_ids;
  prefix_ids.reserve(prompt_tokens.size() + 1);
  prefix_ids.push_back(vocab_->bos());
  prefix_ids.insert(prefix_ids.end(), prompt_tokens.begin(), prompt_tokens.end());

  const TensorPtr patch_embeds = encode_image(tape, params, raster);
  const TensorPtr tok_embeds = ad::embedding_rows(tape, w.tok, prefix_ids);
  TensorPtr xp = ad::concat_rows(tape, {patch_embeds, tok_embeds});
  xp = ad::add(tape, xp, ad::slice_rows(tape, w.pos, 0, prefix_len));

  std::vector<TensorPtr> prefix_k(cfg_.num_layers), prefix_v(cfg_.num_layers);
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const LayerRefs& lr = w.layers[l];
    TensorPtr h = ad::rmsnorm(tape, xp, lr.attn_g);
    TensorPtr q = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wq), lr.bq);
    prefix_k[l] = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wk), lr.bk);
    prefix_v[l] = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wv), lr.bv);
    std::vector<TensorPtr> ctx_heads;
    ctx_heads.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      TensorPtr qh = ad::slice_cols(tape, q, hd * dh, (hd + 1) * dh);
      TensorPtr kh = ad::slice_cols(tape, prefix_k[l], hd * dh, (hd + 1) * dh);
      TensorPtr vh = ad::slice_cols(tape, prefix_v[l], hd * dh, (hd + 1) * dh);
      TensorPtr probs =
          ad::softmax_causal(tape, ad::scale(tape, ad::matmul_nt(tape, qh, kh), attn_scale), 0);
      ctx_heads.push_back(ad::matmul(tape, probs, vh));
    }
    TensorPtr ctx = ad::concat_cols(tape, ctx_heads);
    xp = ad::add(tape, xp, ad::add_rowvec(tape, ad::matmul(tape, ctx, lr.wo), lr.bo));
    TensorPtr h2 = ad::rmsnorm(tape, xp, lr.mlp_g);
    TensorPtr m = ad::gelu(tape, ad::add_rowvec(tape, ad::matmul(tape, h2, lr.w1), lr.b1));
    xp = ad::add(tape, xp, ad::add_rowvec(tape, ad::matmul(tape, m, lr.w2), lr.b2));
  }
  const TensorPtr prefix_last_f =
      ad::slice_rows(tape, ad::rmsnorm(tape, xp, w.final_g), prefix_len - 1, prefix_len);

  // ---- per-completion branch: rows at positions prefix_len .. prefix_len+n-2
  const std::string prompt_text = vocab_->decode(prompt_tokens);
  const auto form = CompletionGrammar::form_for_prompt(prompt_text);
  const int vsz = vocab_->size();

  std::vector<TensorPtr> out;
  out.reserve(completions.size());
  for (const auto& comp : completions) {
    const int n = static_cast<int>(comp.size());
    TensorPtr feats;
    if (n == 1) {
      feats = prefix_last_f;
    } else {
      const std::vector<int> body(comp.begin(), comp.end() - 1);
      TensorPtr xc = ad::embedding_rows(tape, w.tok, body);
      xc = ad::add(tape, xc, ad::slice_rows(tape, w.pos, prefix_len, prefix_len + n - 1));
      for (int l = 0; l < cfg_.num_layers; ++l) {
        const LayerRefs& lr = w.layers[l];
        TensorPtr h = ad::rmsnorm(tape, xc, lr.attn_g);
        TensorPtr q = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wq), lr.bq);
        TensorPtr k = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wk), lr.bk);
        TensorPtr v = ad::add_rowvec(tape, ad::matmul(tape, h, lr.wv), lr.bv);
        TensorPtr k_full = ad::concat_rows(tape, {prefix_k[l], k});
        TensorPtr v_full = ad::concat_rows(tape, {prefix_v[l], v});
        std::vector<TensorPtr> ctx_heads;
        ctx_heads.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
          TensorPtr qh = ad::slice_cols(tape, q, hd * dh, (hd + 1) * dh);
          TensorPtr kh = ad::slice_cols(tape, k_full, hd * dh, (hd + 1) * dh);
          TensorPtr vh = ad::slice_cols(tape, v_full, hd * dh, (hd + 1) * dh);
          // row i sits at position prefix_len + i: it sees the prefix plus
          // completion rows up to itself
          TensorPtr probs = ad::softmax_causal(
              tape, ad::scale(tape, ad::matmul_nt(tape, qh, kh), attn_scale), prefix_len);
          ctx_heads.push_back(ad::matmul(tape, probs, vh));
        }
        TensorPtr ctx = ad::concat_cols(tape, ctx_heads);
        xc = ad::add(tape, xc, ad::add_rowvec(tape, ad::matmul(tape, ctx, lr.wo), lr.bo));
        TensorPtr h2 = ad::rmsnorm(tape, xc, lr.mlp_g);
        TensorPtr m = ad::gelu(tape, ad::add_rowvec(tape, ad::matmul(tape, h2, lr.w1), lr.b1));
        xc = ad::add(tape, xc, ad::add_rowvec(tape, ad::matmul(tape, m, lr.w2), lr.b2));
      }
      feats = ad::concat_rows(tape, {prefix_last_f, ad::rmsnorm(tape, xc, w.final_g)});
    }
    TensorPtr logits = ad::scale(tape, ad::matmul_nt(tape, feats, w.tok), 1.0 / temperature);

    CompletionGrammar grammar(*vocab_, form);
    std::vector<double> mask(static_cast<size_t>(n) * vsz, kMaskedLogit);
    for (int i = 0; i < n; ++i) {
      for (int id : grammar.allowed()) mask[static_cast<size_t>(i) * vsz + id] = 0.0;
      grammar.advance(comp[i]);
    }
    logits = ad::add_flat(tape, logits, mask);
    out.push_back(ad::pick(tape, ad::log_softmax(tape, logits), comp));
  }
  return out;
}

std::vector<double> Policy::log_probs_values(const std::vector<int>& prompt_tokens,
                                             const std::vector<double>& raster,
                                             const std::vector<int>& completion_ids,
                                             double temperature) const {
  return log_probs(nullptr, params_, prompt_tokens, raster, completion_ids, temperature)->data;
}

}  // namespace rlvr
