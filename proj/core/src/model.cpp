#include "driftguard/model.hpp"

#include <algorithm>
#include <cmath>

namespace driftguard {

void ModelConfig::validate() const {
  if (n_layers < 2) fail("ModelConfig: n_layers must be >= 2 (a second-to-last layer must exist)");
  if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || vocab_size <= 0 || max_len <= 0)
    fail("ModelConfig: dimensions must be positive");
  if (d_model % n_heads != 0)
    fail("ModelConfig: d_model " + std::to_string(d_model) +
         " not divisible by n_heads " + std::to_string(n_heads));
}

namespace {

Tensor normal_tensor(std::vector<int> shape, float std_dev, Rng& rng) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<float> data(n);
  for (auto& v : data) v = static_cast<float>(rng.normal()) * std_dev;
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor const_tensor(std::vector<int> shape, float value) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return Tensor::from(std::move(shape), std::vector<float>(n, value), true);
}

}  // namespace

GuardModel GuardModel::init(const ModelConfig& cfg) {
  cfg.validate();
  GuardModel model;
  model.cfg_ = cfg;
  Rng rng(derive_seed(cfg.seed, 0x90de1));

  const float w_std = 0.02f;
  // Residual-path projections scaled down with depth, GPT-2 style.
  const float resid_std = w_std / std::sqrt(2.0f * static_cast<float>(cfg.n_layers));

  auto& p = model.params_;
  p.tok_emb = normal_tensor({cfg.vocab_size, cfg.d_model}, w_std, rng);
  p.pos_emb = normal_tensor({cfg.max_len, cfg.d_model}, w_std, rng);
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& lp : p.layers) {
    lp.ln1_g = const_tensor({cfg.d_model}, 1.0f);
    lp.ln1_b = const_tensor({cfg.d_model}, 0.0f);
    lp.wq = normal_tensor({cfg.d_model, cfg.d_model}, w_std, rng);
    lp.bq = const_tensor({cfg.d_model}, 0.0f);
    lp.wk = normal_tensor({cfg.d_model, cfg.d_model}, w_std, rng);
    lp.bk = const_tensor({cfg.d_model}, 0.0f);
    lp.wv = normal_tensor({cfg.d_model, cfg.d_model}, w_std, rng);
    lp.bv = const_tensor({cfg.d_model}, 0.0f);
    lp.wo = normal_tensor({cfg.d_model, cfg.d_model}, resid_std, rng);
    lp.bo = const_tensor({cfg.d_model}, 0.0f);
    lp.ln2_g = const_tensor({cfg.d_model}, 1.0f);
    lp.ln2_b = const_tensor({cfg.d_model}, 0.0f);
    lp.w1 = normal_tensor({cfg.d_model, cfg.d_ff}, w_std, rng);
    lp.b1 = const_tensor({cfg.d_ff}, 0.0f);
    lp.w2 = normal_tensor({cfg.d_ff, cfg.d_model}, resid_std, rng);
    lp.b2 = const_tensor({cfg.d_model}, 0.0f);
  }
  p.lnf_g = const_tensor({cfg.d_model}, 1.0f);
  p.lnf_b = const_tensor({cfg.d_model}, 0.0f);
  p.head_w = normal_tensor({cfg.d_model, 2}, w_std, rng);
  p.head_b = const_tensor({2}, 0.0f);
  return model;
}

ForwardResultT<float> GuardModel::forward(const TokenSequence& seq,
                                          const DropoutSpec& drop) const {
  return model_forward<float>(cfg_, params_, lora_ ? &*lora_ : nullptr, seq.ids, drop);
}

std::array<float, 2> GuardModel::logits(const TokenSequence& seq,
                                        const DropoutSpec& drop) const {
  NoGradGuard eval;
  auto out = forward(seq, drop);
  return {out.logits.values()[0], out.logits.values()[1]};
}

Label GuardModel::predict(const TokenSequence& seq) const {
  auto z = logits(seq);
  return z[kUnsafeIndex] > z[kSafeIndex] ? Label::unsafe : Label::safe;
}

double GuardModel::unsafe_probability(const TokenSequence& seq,
                                      const DropoutSpec& drop) const {
  auto z = logits(seq, drop);
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  return e1 / (e0 + e1);
}

std::vector<float> GuardModel::penultimate_feature(const TokenSequence& seq) const {
  if (seq.empty()) fail("penultimate_feature: empty sequence");
  NoGradGuard eval;
  auto out = forward(seq);
  // hiddens = [embedding, layer 1, ..., layer L]; second-to-last layer output
  // sits at index n_layers - 1.
  const auto& h = out.hiddens.at(static_cast<size_t>(cfg_.n_layers - 1));
  auto mean = mean_axis0(h);
  return mean.values();
}

void GuardModel::attach_lora(const LoraConfig& lcfg) {
  if (lora_) fail("attach_lora: adapters already attached");
  if (lcfg.rank <= 0) fail("attach_lora: rank must be positive");
  if (!lcfg.target_embedding && !lcfg.target_attention && !lcfg.target_ffn)
    fail("attach_lora: no targets selected");
  Rng rng(derive_seed(cfg_.seed, 0x10ad));

  LoraParamsT<float> lora;
  lora.cfg = lcfg;
  // A uses the standard Kaiming-uniform bound 1/sqrt(fan_in); B starts at
  // zero so the adapted model's outputs are unchanged until the first update.
  auto make_pair = [&](int in_dim, int out_dim) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
    LoraPairT<float> pair;
    std::vector<float> a(static_cast<size_t>(in_dim) * lcfg.rank);
    for (auto& v : a) v = static_cast<float>((rng.uniform() * 2.0 - 1.0) * bound);
    pair.a = Tensor::from({in_dim, lcfg.rank}, std::move(a), true);
    pair.b = const_tensor({lcfg.rank, out_dim}, 0.0f);
    return pair;
  };
  if (lcfg.target_embedding) lora.tok_emb = make_pair(cfg_.vocab_size, cfg_.d_model);
  lora.layers.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& ll : lora.layers) {
    if (lcfg.target_attention) {
      ll.wq = make_pair(cfg_.d_model, cfg_.d_model);
      ll.wk = make_pair(cfg_.d_model, cfg_.d_model);
      ll.wv = make_pair(cfg_.d_model, cfg_.d_model);
      ll.wo = make_pair(cfg_.d_model, cfg_.d_model);
    }
    if (lcfg.target_ffn) {
      ll.w1 = make_pair(cfg_.d_model, cfg_.d_ff);
      ll.w2 = make_pair(cfg_.d_ff, cfg_.d_model);
    }
  }
  lora_ = std::move(lora);

  // Freeze the base: only adapter parameters stay trainable.
  visit_params(params_, [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
}

const LoraConfig& GuardModel::lora_config() const {
  if (!lora_) fail("no adapters attached");
  return lora_->cfg;
}

LoraParamsT<float>& GuardModel::lora() {
  if (!lora_) fail("no adapters attached");
  return *lora_;
}

const LoraParamsT<float>& GuardModel::lora() const {
  if (!lora_) fail("no adapters attached");
  return *lora_;
}

std::vector<Tensor> GuardModel::trainable_params() {
  std::vector<Tensor> out;
  if (lora_) {
    visit_lora(*lora_, [&](const std::string&, Tensor& t) { out.push_back(t); });
  } else {
    visit_params(params_, [&](const std::string&, Tensor& t) { out.push_back(t); });
  }
  return out;
}

std::vector<Tensor> GuardModel::base_params() {
  std::vector<Tensor> out;
  visit_params(params_, [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

size_t GuardModel::parameter_count() const {
  size_t n = 0;
  visit_params(params_, [&](const std::string&, Tensor& t) { n += t.size(); });
  if (lora_)
    visit_lora(*lora_, [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

size_t GuardModel::trainable_parameter_count() const {
  size_t n = 0;
  auto self = const_cast<GuardModel*>(this);
  for (auto& t : self->trainable_params()) n += t.size();
  return n;
}

uint64_t GuardModel::base_fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  visit_params(params_, [&](const std::string& name, Tensor& t) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.values().data(), t.values().size() * sizeof(float), h);
  });
  return h;
}

uint64_t GuardModel::adapter_fingerprint() const {
  if (!lora_) fail("no adapters attached");
  uint64_t h = 0xcbf29ce484222325ULL;
  visit_lora(*lora_, [&](const std::string& name, Tensor& t) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.values().data(), t.values().size() * sizeof(float), h);
  });
  return h;
}

GuardModel GuardModel::clone() const {
  GuardModel copy;
  copy.cfg_ = cfg_;
  auto clone_tensor = [](Tensor& t) {
    return Tensor::from(t.shape(), t.values(), t.requires_grad());
  };
  // Deep-copy by rebuilding each tensor; structures match via visit order.
  copy.params_.layers.resize(params_.layers.size());
  std::vector<Tensor*> src, dst;
  visit_params(params_, [&](const std::string&, Tensor& t) { src.push_back(&t); });
  visit_params(copy.params_, [&](const std::string&, Tensor& t) { dst.push_back(&t); });
  for (size_t i = 0; i < src.size(); ++i) *dst[i] = clone_tensor(*src[i]);
  if (lora_) {
    LoraParamsT<float> lc;
    lc.cfg = lora_->cfg;
    lc.layers.resize(lora_->layers.size());
    std::vector<Tensor*> ls, ld;
    visit_lora(*lora_, [&](const std::string&, Tensor& t) { ls.push_back(&t); });
    visit_lora(lc, [&](const std::string&, Tensor& t) { ld.push_back(&t); });
    for (size_t i = 0; i < ls.size(); ++i) *ld[i] = clone_tensor(*ls[i]);
    copy.lora_ = std::move(lc);
  }
  return copy;
}

size_t parameter_count(const ModelConfig& cfg) {
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t ff = static_cast<size_t>(cfg.d_ff);
  size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d);
  return static_cast<size_t>(cfg.vocab_size) * d + static_cast<size_t>(cfg.max_len) * d +
         static_cast<size_t>(cfg.n_layers) * per_layer + 2 * d + (d * 2 + 2);
}

size_t lora_parameter_count(const ModelConfig& cfg, const LoraConfig& lora) {
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t ff = static_cast<size_t>(cfg.d_ff);
  const size_t r = static_cast<size_t>(lora.rank);
  size_t n = 0;
  if (lora.target_embedding) n += static_cast<size_t>(cfg.vocab_size) * r + r * d;
  size_t per_layer = 0;
  if (lora.target_attention) per_layer += 4 * (d * r + r * d);
  if (lora.target_ffn) per_layer += (d * r + r * ff) + (ff * r + r * d);
  return n + static_cast<size_t>(cfg.n_layers) * per_layer;
}

}  // namespace driftguard
