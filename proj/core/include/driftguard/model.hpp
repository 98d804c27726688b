#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "driftguard/corpus.hpp"
#include "driftguard/tensor.hpp"
#include "driftguard/tokenizer.hpp"

namespace driftguard {

// Class indices in the logit vector.
inline constexpr int kSafeIndex = 0;
inline constexpr int kUnsafeIndex = 1;

struct ModelConfig {
  int n_layers = 2;   // >= 2 so a second-to-last layer exists
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 512;
  int max_len = 512;
  uint64_t seed = 1;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

struct LoraConfig {
  int rank = 32;
  double alpha = 32.0;
  double dropout = 0.1;
  bool target_embedding = true;
  bool target_attention = true;
  bool target_ffn = true;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// Controls stochastic behavior of one forward pass. `train` enables adapter
// dropout; `rate` adds dropout at the embedding/residual spots (used both
// for training regularization and for MC-dropout uncertainty passes).
struct DropoutSpec {
  bool train = false;
  double rate = 0.0;
  uint64_t seed = 0;
};

template <typename T>
struct LayerParamsT {
  TensorT<T> ln1_g, ln1_b;
  TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<T> ln2_g, ln2_b;
  TensorT<T> w1, b1, w2, b2;
};

template <typename T>
struct ModelParamsT {
  TensorT<T> tok_emb;  // [V, d]
  TensorT<T> pos_emb;  // [max_len, d]
  std::vector<LayerParamsT<T>> layers;
  TensorT<T> lnf_g, lnf_b;
  TensorT<T> head_w;  // [d, 2]
  TensorT<T> head_b;  // [2]
};

template <typename T>
struct LoraPairT {
  TensorT<T> a;  // [in, r]
  TensorT<T> b;  // [r, out], zero-initialized
};

template <typename T>
struct LoraLayerT {
  LoraPairT<T> wq, wk, wv, wo, w1, w2;
};

template <typename T>
struct LoraParamsT {
  LoraConfig cfg;
  LoraPairT<T> tok_emb;
  std::vector<LoraLayerT<T>> layers;
};

// Calls fn(name, tensor&) for every parameter in canonical (checkpoint) order.
template <typename T, typename F>
void visit_params(ModelParamsT<T>& p, F&& fn) {
  fn("tok_emb", p.tok_emb);
  fn("pos_emb", p.pos_emb);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto& lp = p.layers[l];
    fn(pre + "ln1_g", lp.ln1_g);
    fn(pre + "ln1_b", lp.ln1_b);
    fn(pre + "wq", lp.wq);
    fn(pre + "bq", lp.bq);
    fn(pre + "wk", lp.wk);
    fn(pre + "bk", lp.bk);
    fn(pre + "wv", lp.wv);
    fn(pre + "bv", lp.bv);
    fn(pre + "wo", lp.wo);
    fn(pre + "bo", lp.bo);
    fn(pre + "ln2_g", lp.ln2_g);
    fn(pre + "ln2_b", lp.ln2_b);
    fn(pre + "w1", lp.w1);
    fn(pre + "b1", lp.b1);
    fn(pre + "w2", lp.w2);
    fn(pre + "b2", lp.b2);
  }
  fn("lnf_g", p.lnf_g);
  fn("lnf_b", p.lnf_b);
  fn("head_w", p.head_w);
  fn("head_b", p.head_b);
}

template <typename T, typename F>
void visit_lora(LoraParamsT<T>& p, F&& fn) {
  if (p.cfg.target_embedding) {
    fn("lora.tok_emb.a", p.tok_emb.a);
    fn("lora.tok_emb.b", p.tok_emb.b);
  }
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "lora.layers." + std::to_string(l) + ".";
    auto& lp = p.layers[l];
    if (p.cfg.target_attention) {
      fn(pre + "wq.a", lp.wq.a);
      fn(pre + "wq.b", lp.wq.b);
      fn(pre + "wk.a", lp.wk.a);
      fn(pre + "wk.b", lp.wk.b);
      fn(pre + "wv.a", lp.wv.a);
      fn(pre + "wv.b", lp.wv.b);
      fn(pre + "wo.a", lp.wo.a);
      fn(pre + "wo.b", lp.wo.b);
    }
    if (p.cfg.target_ffn) {
      fn(pre + "w1.a", lp.w1.a);
      fn(pre + "w1.b", lp.w1.b);
      fn(pre + "w2.a", lp.w2.a);
      fn(pre + "w2.b", lp.w2.b);
    }
  }
}

template <typename T>
struct ForwardResultT {
  TensorT<T> logits;                 // [2], from the final token position
  std::vector<TensorT<T>> hiddens;   // [emb out, layer 1 out, ..., layer L out]
};

// Pre-LN causal transformer encoder pass over one token sequence.
// Defined in this header so the float engine and the double-precision
// gradient oracle share one implementation.
template <typename T>
ForwardResultT<T> model_forward(const ModelConfig& cfg, ModelParamsT<T>& params,
                                LoraParamsT<T>* lora, const std::vector<int>& ids,
                                const DropoutSpec& drop = {});

// The guardrail classifier: a small causal transformer with a binary head,
// optionally wrapped with low-rank adapters. Base weights are frozen the
// moment adapters are attached.
class GuardModel {
 public:
  GuardModel() = default;

  static GuardModel init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelParamsT<float>& params() { return params_; }
  const ModelParamsT<float>& params() const { return params_; }

  ForwardResultT<float> forward(const TokenSequence& seq,
                                const DropoutSpec& drop = {}) const;

  // Eval-mode logits (no graph recording).
  std::array<float, 2> logits(const TokenSequence& seq,
                              const DropoutSpec& drop = {}) const;
  Label predict(const TokenSequence& seq) const;
  // p(unsafe) via row softmax of eval logits.
  double unsafe_probability(const TokenSequence& seq,
                            const DropoutSpec& drop = {}) const;

  // Mean over token positions of the second-to-last layer's hidden states.
  std::vector<float> penultimate_feature(const TokenSequence& seq) const;

  void attach_lora(const LoraConfig& cfg);
  bool has_lora() const { return lora_.has_value(); }
  const LoraConfig& lora_config() const;
  LoraParamsT<float>& lora();
  const LoraParamsT<float>& lora() const;

  // Handles to the tensors an optimizer may update: adapters when attached,
  // the full base otherwise.
  std::vector<Tensor> trainable_params();
  std::vector<Tensor> base_params();

  size_t parameter_count() const;
  size_t trainable_parameter_count() const;

  // FNV-1a over the base weight bytes in canonical order; adapters excluded.
  uint64_t base_fingerprint() const;
  uint64_t adapter_fingerprint() const;

  GuardModel clone() const;

 private:
  ModelConfig cfg_;
  mutable ModelParamsT<float> params_;
  mutable std::optional<LoraParamsT<float>> lora_;
};

// Closed-form parameter count for a config (embeddings + blocks + head).
size_t parameter_count(const ModelConfig& cfg);
size_t lora_parameter_count(const ModelConfig& cfg, const LoraConfig& lora);

// ---- template implementation ------------------------------------------------

namespace detail {

// y = x W + b, plus (alpha/r) * dropout(x) A B when an adapter pair is given.
template <typename T>
TensorT<T> linear_maybe_lora(const TensorT<T>& x, const TensorT<T>& w,
                             const TensorT<T>& b, LoraPairT<T>* pair,
                             const LoraConfig* cfg, bool train, Rng* rng) {
  TensorT<T> out = add(matmul(x, w), b);
  if (pair && pair->a.defined()) {
    TensorT<T> lin = x;
    if (train && cfg->dropout > 0.0 && rng) lin = dropout(lin, cfg->dropout, *rng);
    TensorT<T> delta = matmul(matmul(lin, pair->a), pair->b);
    out = add(out, scale(delta, static_cast<T>(cfg->scaling())));
  }
  return out;
}

}  // namespace detail

template <typename T>
ForwardResultT<T> model_forward(const ModelConfig& cfg, ModelParamsT<T>& params,
                                LoraParamsT<T>* lora, const std::vector<int>& ids,
                                const DropoutSpec& drop) {
  if (ids.empty()) fail("model_forward: empty sequence");
  if (static_cast<int>(ids.size()) > cfg.max_len)
    fail("model_forward: sequence length " + std::to_string(ids.size()) +
         " exceeds max_len " + std::to_string(cfg.max_len));

  Rng rng(derive_seed(drop.seed, 0xd20));
  Rng* rng_ptr = (drop.rate > 0.0 || (drop.train && lora)) ? &rng : nullptr;
  auto maybe_drop = [&](TensorT<T> t) {
    return (drop.rate > 0.0 && rng_ptr) ? dropout(t, drop.rate, *rng_ptr) : t;
  };

  const int n = static_cast<int>(ids.size());
  const int dh = cfg.head_dim();

  // Token embeddings, with the adapter contribution folded in as
  // rows(A)[ids] * B, matching lookup into the effective table E + sAB.
  TensorT<T> x = embedding_rows(params.tok_emb, ids);
  if (lora && lora->cfg.target_embedding && lora->tok_emb.a.defined()) {
    TensorT<T> delta = matmul(embedding_rows(lora->tok_emb.a, ids), lora->tok_emb.b);
    x = add(x, scale(delta, static_cast<T>(lora->cfg.scaling())));
  }
  std::vector<int> positions(ids.size());
  for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
  x = add(x, embedding_rows(params.pos_emb, positions));
  x = maybe_drop(x);

  ForwardResultT<T> result;
  result.hiddens.push_back(x);

  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto& lp = params.layers[l];
    LoraLayerT<T>* ll = (lora && l < lora->layers.size()) ? &lora->layers[l] : nullptr;
    const LoraConfig* lc = lora ? &lora->cfg : nullptr;
    auto attn_pair = [&](LoraPairT<T> LoraLayerT<T>::*member) -> LoraPairT<T>* {
      return (ll && lora->cfg.target_attention) ? &(ll->*member) : nullptr;
    };
    auto ffn_pair = [&](LoraPairT<T> LoraLayerT<T>::*member) -> LoraPairT<T>* {
      return (ll && lora->cfg.target_ffn) ? &(ll->*member) : nullptr;
    };

    // Attention sublayer (pre-LN).
    TensorT<T> h = layer_norm(x, lp.ln1_g, lp.ln1_b);
    TensorT<T> q = detail::linear_maybe_lora(h, lp.wq, lp.bq, attn_pair(&LoraLayerT<T>::wq), lc, drop.train, rng_ptr);
    TensorT<T> k = detail::linear_maybe_lora(h, lp.wk, lp.bk, attn_pair(&LoraLayerT<T>::wk), lc, drop.train, rng_ptr);
    TensorT<T> v = detail::linear_maybe_lora(h, lp.wv, lp.bv, attn_pair(&LoraLayerT<T>::wv), lc, drop.train, rng_ptr);

    std::vector<TensorT<T>> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int head = 0; head < cfg.n_heads; ++head) {
      TensorT<T> qh = slice_cols(q, head * dh, dh);
      TensorT<T> kh = slice_cols(k, head * dh, dh);
      TensorT<T> vh = slice_cols(v, head * dh, dh);
      TensorT<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      TensorT<T> attn = causal_softmax(scores);
      heads.push_back(matmul(attn, vh));
    }
    TensorT<T> mixed = cfg.n_heads == 1 ? heads[0] : concat_cols(heads);
    TensorT<T> proj = detail::linear_maybe_lora(mixed, lp.wo, lp.bo, attn_pair(&LoraLayerT<T>::wo), lc, drop.train, rng_ptr);
    x = add(x, maybe_drop(proj));

    // Feed-forward sublayer (pre-LN).
    TensorT<T> f = layer_norm(x, lp.ln2_g, lp.ln2_b);
    f = detail::linear_maybe_lora(f, lp.w1, lp.b1, ffn_pair(&LoraLayerT<T>::w1), lc, drop.train, rng_ptr);
    f = gelu(f);
    f = detail::linear_maybe_lora(f, lp.w2, lp.b2, ffn_pair(&LoraLayerT<T>::w2), lc, drop.train, rng_ptr);
    x = add(x, maybe_drop(f));

    result.hiddens.push_back(x);
  }

  TensorT<T> final_states = layer_norm(x, params.lnf_g, params.lnf_b);
  TensorT<T> last = select_row(final_states, n - 1);
  result.logits = add(vecmat(last, params.head_w), params.head_b);
  return result;
}

}  // namespace driftguard
