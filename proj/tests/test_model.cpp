#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "driftguard/checkpoint.hpp"
#include "driftguard/model.hpp"
#include "driftguard/tokenizer.hpp"

using namespace driftguard;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.vocab_size = 300;
  cfg.max_len = 64;
  cfg.seed = 3;
  return cfg;
}

TokenSequence seq_of(std::initializer_list<int> ids) {
  TokenSequence s;
  s.ids = ids;
  return s;
}

}  // namespace

TEST_CASE("init_model is deterministic and validates its config") {
  auto a = GuardModel::init(tiny_config());
  auto b = GuardModel::init(tiny_config());
  CHECK(a.base_fingerprint() == b.base_fingerprint());

  ModelConfig bad = tiny_config();
  bad.d_model = 63;
  CHECK_THROWS_AS(GuardModel::init(bad), Error);
  ModelConfig shallow = tiny_config();
  shallow.n_layers = 1;
  CHECK_THROWS_AS(GuardModel::init(shallow), Error);
}

TEST_CASE("parameter count matches the closed form") {
  // Hand arithmetic for the default architecture: embeddings + per-layer
  // blocks + final norm + binary head.
  ModelConfig cfg;  // defaults: 2 layers, d 64, ff 256, vocab 512, len 512
  const size_t d = 64, ff = 256;
  const size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d);
  const size_t expected = 512 * d + 512 * d + 2 * per_layer + 2 * d + (d * 2 + 2);
  CHECK(parameter_count(cfg) == expected);

  auto model = GuardModel::init(tiny_config());
  CHECK(model.parameter_count() == parameter_count(tiny_config()));
}

TEST_CASE("forward: single token, determinism, empty errors") {
  auto model = GuardModel::init(tiny_config());
  auto z1 = model.logits(seq_of({7}));
  auto z2 = model.logits(seq_of({7}));
  CHECK(z1[0] == z2[0]);
  CHECK(z1[1] == z2[1]);
  CHECK(std::isfinite(z1[0]));
  CHECK_THROWS_AS(model.logits(seq_of({})), Error);
}

TEST_CASE("causal mask: prefix states are unchanged by appended tokens") {
  auto model = GuardModel::init(tiny_config());
  NoGradGuard eval;
  auto short_out = model.forward(seq_of({5, 9, 2}));
  auto long_out = model.forward(seq_of({5, 9, 2, 44, 17}));
  const int d = model.config().d_model;
  for (size_t layer = 0; layer < short_out.hiddens.size(); ++layer) {
    const auto& hs = short_out.hiddens[layer].values();
    const auto& hl = long_out.hiddens[layer].values();
    for (int i = 0; i < 3 * d; ++i)
      CHECK(hs[static_cast<size_t>(i)] ==
            doctest::Approx(hl[static_cast<size_t>(i)]).epsilon(1e-6));
  }
}

TEST_CASE("penultimate feature equals the recomputed mean of layer L-1 states") {
  auto model = GuardModel::init(tiny_config());
  TokenSequence seq = seq_of({3, 1, 4, 1, 5});
  auto feature = model.penultimate_feature(seq);

  NoGradGuard eval;
  auto out = model.forward(seq);
  const auto& h = out.hiddens[static_cast<size_t>(model.config().n_layers - 1)];
  const int d = model.config().d_model;
  REQUIRE(static_cast<int>(feature.size()) == d);
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 5; ++i) mean += h.values()[static_cast<size_t>(i * d + j)];
    mean /= 5.0;
    CHECK(feature[static_cast<size_t>(j)] == doctest::Approx(mean).epsilon(1e-5));
  }

  // Single token: the feature is that token's state.
  auto f1 = model.penultimate_feature(seq_of({3}));
  auto out1 = model.forward(seq_of({3}));
  const auto& h1 = out1.hiddens[static_cast<size_t>(model.config().n_layers - 1)];
  for (int j = 0; j < d; ++j)
    CHECK(f1[static_cast<size_t>(j)] == doctest::Approx(h1.values()[static_cast<size_t>(j)]));
}

TEST_CASE("penultimate feature is order-sensitive for some input") {
  auto model = GuardModel::init(tiny_config());
  auto fwd = model.penultimate_feature(seq_of({10, 20, 30, 40}));
  auto rev = model.penultimate_feature(seq_of({40, 30, 20, 10}));
  bool any_diff = false;
  for (size_t j = 0; j < fwd.size(); ++j)
    if (std::abs(fwd[j] - rev[j]) > 1e-6) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("attach_lora: bit-equal logits before updates, freeze afterwards") {
  auto model = GuardModel::init(tiny_config());
  TokenSequence seq = seq_of({1, 2, 3, 4, 5, 6});
  auto before = model.logits(seq);
  const uint64_t base_hash = model.base_fingerprint();

  LoraConfig lcfg;
  lcfg.rank = 4;
  model.attach_lora(lcfg);
  auto after = model.logits(seq);
  CHECK(before[0] == after[0]);  // zero-init B contributes exact zeros
  CHECK(before[1] == after[1]);
  CHECK(model.base_fingerprint() == base_hash);

  // Only adapters are trainable.
  size_t trainable = model.trainable_parameter_count();
  CHECK(trainable == lora_parameter_count(model.config(), lcfg));
  CHECK(trainable < model.parameter_count());
}

TEST_CASE("lora low-rank fraction is under 10% at a paper-scale width") {
  // r=32 against GPT-2-like dimensions; at the desk-scale default width the
  // adapters are deliberately over-parameterized (r = d/2), so the <10%
  // regime is checked where the rank-to-width ratio matches the method.
  ModelConfig wide;
  wide.n_layers = 2;
  wide.d_model = 768;
  wide.n_heads = 12;
  wide.d_ff = 3072;
  wide.vocab_size = 512;
  wide.max_len = 512;
  LoraConfig lora;  // rank 32
  const double fraction = static_cast<double>(lora_parameter_count(wide, lora)) /
                          static_cast<double>(parameter_count(wide));
  CHECK(fraction < 0.10);
}

TEST_CASE("lora effective-weight equivalence against dense materialization") {
  auto model = GuardModel::init(tiny_config());
  LoraConfig lcfg;
  lcfg.rank = 4;
  lcfg.dropout = 0.0;
  model.attach_lora(lcfg);

  // Give the adapters nonzero values.
  Rng rng(77);
  visit_lora(model.lora(), [&](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = static_cast<float>(rng.normal() * 0.05);
  });

  // Materialize W' = W + (alpha/r) A B into a plain model and compare.
  auto dense = model.clone();
  auto& lora = model.lora();
  const float s = static_cast<float>(lcfg.scaling());
  auto fold = [&](Tensor& w, const LoraPairT<float>& pair) {
    const int in = pair.a.rows(), r = pair.a.cols(), out = pair.b.cols();
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j) {
        double delta = 0.0;
        for (int k = 0; k < r; ++k)
          delta += static_cast<double>(pair.a.values()[static_cast<size_t>(i * r + k)]) *
                   pair.b.values()[static_cast<size_t>(k * out + j)];
        w.values()[static_cast<size_t>(i * out + j)] += s * static_cast<float>(delta);
      }
  };
  auto& dp = dense.params();
  fold(dp.tok_emb, lora.tok_emb);
  for (size_t l = 0; l < dp.layers.size(); ++l) {
    fold(dp.layers[l].wq, lora.layers[l].wq);
    fold(dp.layers[l].wk, lora.layers[l].wk);
    fold(dp.layers[l].wv, lora.layers[l].wv);
    fold(dp.layers[l].wo, lora.layers[l].wo);
    fold(dp.layers[l].w1, lora.layers[l].w1);
    fold(dp.layers[l].w2, lora.layers[l].w2);
  }
  // Drop the adapters from the dense copy so the fold is the only change.
  GuardModel plain = GuardModel::init(tiny_config());
  std::vector<Tensor*> src, dst;
  visit_params(dp, [&](const std::string&, Tensor& t) { src.push_back(&t); });
  visit_params(plain.params(), [&](const std::string&, Tensor& t) { dst.push_back(&t); });
  for (size_t i = 0; i < src.size(); ++i) dst[i]->values() = src[i]->values();

  TokenSequence seq = seq_of({9, 8, 7, 6, 5});
  auto za = model.logits(seq);
  auto zb = plain.logits(seq);
  CHECK(za[0] == doctest::Approx(zb[0]).epsilon(1e-4));
  CHECK(za[1] == doctest::Approx(zb[1]).epsilon(1e-4));
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
  namespace fs = std::filesystem;
  auto model = GuardModel::init(tiny_config());
  const std::string path = (fs::temp_directory_path() / "model_rt.ckpt").string();
  save_model_checkpoint(model, path);
  GuardModel back = load_model_checkpoint(path);
  TokenSequence seq = seq_of({11, 22, 33});
  auto z1 = model.logits(seq);
  auto z2 = back.logits(seq);
  CHECK(z1[0] == z2[0]);
  CHECK(z1[1] == z2[1]);
}

TEST_CASE("corrupt checkpoints are rejected without partial models") {
  namespace fs = std::filesystem;
  auto model = GuardModel::init(tiny_config());
  const std::string path = (fs::temp_directory_path() / "model_corrupt.ckpt").string();
  save_model_checkpoint(model, path);

  // Flip the magic.
  std::string bytes = read_text_file(path);
  bytes[0] = 'X';
  write_text_file(path, bytes);
  CHECK_THROWS_AS(load_model_checkpoint(path), Error);

  // Truncate the payload.
  save_model_checkpoint(model, path);
  bytes = read_text_file(path);
  write_text_file(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_model_checkpoint(path), Error);
}

TEST_CASE("adapter checkpoints: smaller than full, fingerprint-guarded") {
  namespace fs = std::filesystem;
  auto model = GuardModel::init(tiny_config());
  LoraConfig lcfg;
  lcfg.rank = 4;
  model.attach_lora(lcfg);

  const std::string full_path = (fs::temp_directory_path() / "full.ckpt").string();
  const std::string ad_path = (fs::temp_directory_path() / "adapter.ckpt").string();
  save_model_checkpoint(model, full_path);
  save_adapter_checkpoint(model, ad_path);
  CHECK(fs::file_size(ad_path) < fs::file_size(full_path));

  // Loads onto a matching base...
  GuardModel same_base = GuardModel::init(tiny_config());
  load_adapter_checkpoint(same_base, ad_path);
  CHECK(same_base.has_lora());

  // ...and refuses a mismatched one.
  ModelConfig other = tiny_config();
  other.seed = 999;
  GuardModel wrong_base = GuardModel::init(other);
  CHECK_THROWS_AS(load_adapter_checkpoint(wrong_base, ad_path), Error);
}
