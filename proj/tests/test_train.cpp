#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "driftguard/attacks.hpp"
#include "driftguard/train.hpp"

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

}  // namespace

TEST_CASE("energy_score worked values") {
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(energy_score(zeros, 1.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-9));
  CHECK(energy_score(zeros, 2.0) == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-9));
  // High-precision direct evaluation of -ln(e^2 + 1).
  const double expected = -std::log(std::exp(2.0) + 1.0);
  CHECK(energy_score(std::vector<double>{2.0, 0.0}, 1.0) ==
        doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(-2.1269).epsilon(1e-4));
}

TEST_CASE("energy_score shift identity: s(z + c) = s(z) - c") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z{rng.normal() * 5, rng.normal() * 5};
    const double c = rng.normal() * 20;
    std::vector<double> shifted{z[0] + c, z[1] + c};
    CHECK(energy_score(shifted, 1.0) ==
          doctest::Approx(energy_score(z, 1.0) - c).epsilon(1e-5));
  }
}

TEST_CASE("ood_margin_loss hinge cases") {
  LossConfig cfg;  // m_in = -5, m_out = -1
  CHECK(ood_margin_loss({-10.0}, {0.0}, cfg) == doctest::Approx(0.0));
  CHECK(ood_margin_loss({-3.0}, {}, cfg) == doctest::Approx(4.0));
  CHECK(ood_margin_loss({}, {-4.0}, cfg) == doctest::Approx(9.0));
  // Zero exactly when every ID score <= m_in and every OOD score >= m_out.
  CHECK(ood_margin_loss({-5.0, -7.0}, {-1.0, 3.0}, cfg) == doctest::Approx(0.0));
  CHECK(ood_margin_loss({-4.9, -7.0}, {-1.0}, cfg) > 0.0);
}

TEST_CASE("combined_loss blend and boundaries") {
  CHECK(combined_loss(2.0, 4.0, 0.5) == doctest::Approx(3.0));
  CHECK(combined_loss(2.0, 4.0, 0.0) == doctest::Approx(2.0));
  CHECK(combined_loss(2.0, 4.0, 1.0) == doctest::Approx(4.0));
  // Monotone in each argument.
  CHECK(combined_loss(2.5, 4.0, 0.5) > combined_loss(2.0, 4.0, 0.5));
  CHECK(combined_loss(2.0, 4.5, 0.5) > combined_loss(2.0, 4.0, 0.5));
  CHECK_THROWS_AS(combined_loss(1, 1, 1.5), Error);
}

TEST_CASE("LossConfig validation") {
  LossConfig bad;
  bad.m_in = -1.0;
  bad.m_out = -5.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  LossConfig bad_t;
  bad_t.temperature = 0.0;
  CHECK_THROWS_AS(bad_t.validate(), Error);
}

TEST_CASE("adamw: zero gradients leave parameters bit-identical at zero decay") {
  auto w = Tensor::from({2, 2}, {1.0f, -2.0f, 3.0f, 0.5f}, true);
  const std::vector<float> before = w.values();

  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({w}, cfg);
  opt.zero_grad();
  opt.step();
  for (size_t i = 0; i < 4; ++i) CHECK(w.values()[i] == before[i]);

  // With decay, only the decay term moves the weights.
  AdamWConfig wd;
  wd.weight_decay = 0.01;
  auto v = Tensor::from({1}, {2.0f}, true);
  AdamW opt2({v}, wd);
  opt2.zero_grad();
  opt2.step();
  CHECK(v.values()[0] == doctest::Approx(2.0f * (1.0f - 1e-4f * 0.01f)).epsilon(1e-7));
}

TEST_CASE("clip_grad_norm caps the global norm") {
  auto w = Tensor::from({2}, {0.0f, 0.0f}, true);
  w.grad()[0] = 3.0f;
  w.grad()[1] = 4.0f;
  std::vector<Tensor> params{w};
  const double norm = clip_grad_norm(params, 2.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(std::hypot(w.grad()[0], w.grad()[1]) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("train_guardrail: descent on a separable toy corpus at lambda 0") {
  PhraseBanks banks = PhraseBanks::load(DRIFTGUARD_TEST_ASSETS);
  LabeledCorpus pool = synth_corpus(banks, 40, 40, 31);
  auto parts = split_corpus(pool, {0.8, 0.2}, 31);

  Vocabulary vocab = train_bpe(parts[0], 300);
  GuardModel model = GuardModel::init(tiny_config());

  LossConfig loss;
  loss.lambda = 0.0;
  TrainConfig tc;
  tc.epochs = 6;
  tc.lr = 3e-3;
  tc.seed = 5;
  tc.max_len = 64;
  TrainLog log = train_guardrail(model, vocab, parts[0], LabeledCorpus{}, loss, tc,
                                 parts[1]);
  REQUIRE(log.epochs.size() == 6);
  CHECK(log.epochs.back().ce < log.epochs.front().ce);
  CHECK(log.best_epoch >= 1);

  // Selection contract: returned model matches the best-epoch val loss, not
  // necessarily the last.
  double best = log.epochs.front().val_total;
  for (const auto& e : log.epochs) best = std::min(best, e.val_total);
  CHECK(log.epochs[static_cast<size_t>(log.best_epoch - 1)].val_total ==
        doctest::Approx(best));
}

TEST_CASE("train_guardrail: energy margins move OOD away from ID on a toy set") {
  PhraseBanks banks = PhraseBanks::load(DRIFTGUARD_TEST_ASSETS);
  LabeledCorpus pool = synth_corpus(banks, 10, 10, 33);
  auto parts = split_corpus(pool, {0.7, 0.3}, 33);

  AttackConfig acfg;
  AttackForge forge(DRIFTGUARD_TEST_ASSETS, acfg);
  LabeledCorpus aux("aux");
  const LabeledCorpus unsafe_pool = pool.with_label(Label::unsafe);
  for (const auto& e : unsafe_pool.examples()) {
    auto jb = forge.apply_attack(e.text, AttackKind::base64, e.source_id);
    aux.add({jb.text, Label::unsafe, Dist::OOD, e.source_id});
  }

  Vocabulary vocab = train_bpe(parts[0], 300);
  GuardModel model = GuardModel::init(tiny_config());
  LossConfig loss;  // lambda 0.5
  TrainConfig tc;
  tc.epochs = 10;
  tc.lr = 3e-3;
  tc.seed = 6;
  tc.max_len = 64;
  TrainLog log = train_guardrail(model, vocab, parts[0], aux, loss, tc, parts[1]);

  // The margin objective should improve from the first epoch to the best.
  REQUIRE(log.best_epoch >= 1);
  const double first = log.epochs.front().ood;
  const double at_best = log.epochs[static_cast<size_t>(log.best_epoch - 1)].ood;
  CHECK(at_best < first);
}

TEST_CASE("train_guardrail rejects bad inputs") {
  Vocabulary vocab;
  GuardModel model = GuardModel::init(tiny_config());
  LossConfig loss;
  TrainConfig tc;
  LabeledCorpus empty;
  CHECK_THROWS_AS(
      train_guardrail(model, vocab, empty, empty, loss, tc, empty), Error);

  LabeledCorpus one_label;
  one_label.add({"only safe", Label::safe, Dist::ID, "s"});
  CHECK_THROWS_AS(
      train_guardrail(model, vocab, one_label, empty, loss, tc, empty), Error);
}

TEST_CASE("training log CSV schema") {
  TrainLog log;
  log.epochs.push_back({1, 0.5, 0.25, 0.375, 0.4});
  log.best_epoch = 1;
  const std::string csv = log.to_csv();
  CHECK(csv.rfind("epoch,ce,ood,total,val_total\n", 0) == 0);
  CHECK(csv.find("1,0.500000,0.250000,0.375000,0.400000") != std::string::npos);
}
