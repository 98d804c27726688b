#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "driftguard/continual.hpp"
#include "driftguard/tokenizer.hpp"

using namespace driftguard;

namespace {

struct Fixture {
  PhraseBanks banks = PhraseBanks::load(DRIFTGUARD_TEST_ASSETS);
  Vocabulary vocab;
  GuardModel model;  // trained: continual learning always starts from a
                     // fitted guardrail whose head carries real scale
  LabeledCorpus retention;
  std::vector<AttackWave> waves;

  explicit Fixture(uint64_t seed = 41) {
    LabeledCorpus pool = synth_corpus(banks, 80, 160, seed);
    auto parts = split_corpus(pool, {0.5, 0.5}, seed);
    retention = parts[0];
    vocab = train_bpe(retention, 300);

    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.vocab_size = 300;
    cfg.max_len = 128;
    cfg.seed = seed;
    model = GuardModel::init(cfg);

    LossConfig loss;
    loss.lambda = 0.0;
    TrainConfig tc;
    tc.epochs = 12;
    tc.lr = 5e-3;
    tc.seed = seed;
    tc.max_len = 128;
    train_guardrail(model, vocab, retention, LabeledCorpus{}, loss, tc, retention);

    AttackForge forge(DRIFTGUARD_TEST_ASSETS, {});
    waves = forge.build_attack_waves(parts[1].with_label(Label::unsafe),
                                     {AttackKind::aim, AttackKind::base64}, 12, 6,
                                     seed);
  }

  CLConfig lora_cfg() const {
    CLConfig cfg;
    cfg.update_mode = UpdateMode::lora;
    cfg.seed = 5;
    cfg.max_len = 128;
    cfg.retention_every = 1;
    return cfg;
  }
};

Fixture& shared_fixture() {
  static Fixture fx;
  return fx;
}

GuardModel with_lora(const GuardModel& base) {
  GuardModel m = base.clone();
  LoraConfig lcfg;
  lcfg.rank = 4;
  m.attach_lora(lcfg);
  return m;
}

}  // namespace

TEST_CASE("step_update in lora mode freezes the base and moves the adapters") {
  Fixture& fx = shared_fixture();
  GuardModel m = with_lora(fx.model);
  const uint64_t base_before = m.base_fingerprint();
  const uint64_t adapter_before = m.adapter_fingerprint();

  ContinualLearner learner(std::move(m), fx.vocab, fx.lora_cfg());
  learner.step_update(fx.waves[0].adapt_set[0]);

  CHECK(learner.model().base_fingerprint() == base_before);
  CHECK(learner.model().adapter_fingerprint() != adapter_before);
}

TEST_CASE("step_update in full mode changes base weights") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.update_mode = UpdateMode::full;
  GuardModel m = fx.model.clone();
  const uint64_t before = m.base_fingerprint();
  ContinualLearner learner(std::move(m), fx.vocab, cfg);
  learner.step_update(fx.waves[0].adapt_set[0]);
  CHECK(learner.model().base_fingerprint() != before);
}

TEST_CASE("lora mode without adapters is rejected") {
  Fixture& fx = shared_fixture();
  CHECK_THROWS_AS(ContinualLearner(fx.model.clone(), fx.vocab, fx.lora_cfg()),
                  Error);
}

TEST_CASE("repeating one sample drives its CE loss down in finitely many steps") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.lr = 5e-3;  // toy-model rate so the bound stays small
  ContinualLearner learner(with_lora(fx.model), fx.vocab, cfg);
  const auto& sample = fx.waves[0].adapt_set[0];
  TokenSequence seq = encode(sample.text, fx.vocab, 128);

  auto ce = [&]() {
    auto z = learner.model().logits(seq);
    const double m = std::max(z[0], z[1]);
    const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
    return lse - z[kUnsafeIndex];
  };
  int steps = 0;
  while (ce() >= 0.01 && steps < 1200) {
    learner.step_update(sample);
    ++steps;
  }
  CHECK(ce() < 0.01);
  INFO("steps needed: ", steps);
}

TEST_CASE("run_wave: no-update baseline keeps DSR exactly constant") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.updates_enabled = false;
  cfg.retention_every = 0;
  ContinualLearner learner(with_lora(fx.model), fx.vocab, cfg);
  WaveTrace trace = learner.run_wave(fx.waves[0], fx.retention);
  REQUIRE(trace.steps.size() == fx.waves[0].adapt_set.size());
  for (const auto& rec : trace.steps) CHECK(rec.dsr == trace.initial_dsr);
}

TEST_CASE("run_wave: empty adapt set yields a baseline-only trace") {
  Fixture& fx = shared_fixture();
  AttackWave empty = fx.waves[0];
  empty.adapt_set.clear();
  ContinualLearner learner(with_lora(fx.model), fx.vocab, fx.lora_cfg());
  WaveTrace trace = learner.run_wave(empty, fx.retention);
  CHECK(trace.steps.empty());
  CHECK(trace.final_dsr() == trace.initial_dsr);
}

TEST_CASE("no leakage: step-t prediction reproducible from the step t-1 model") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.retention_every = 0;

  // Reference run.
  ContinualLearner full(with_lora(fx.model), fx.vocab, cfg);
  WaveTrace trace = full.run_wave(fx.waves[0], fx.retention);

  // Replay: before applying step t, the prediction on sample t must match the
  // logged one.
  ContinualLearner replay(with_lora(fx.model), fx.vocab, cfg);
  for (size_t t = 0; t < trace.steps.size(); ++t) {
    const auto& sample = fx.waves[0].adapt_set[t];
    TokenSequence seq = encode(sample.text, fx.vocab, 128);
    CHECK(replay.model().predict(seq) == trace.steps[t].pre_update_pred);
    replay.step_update(sample);
  }
}

TEST_CASE("determinism: identical seeds and inputs give identical traces") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  auto run = [&]() {
    ContinualLearner learner(with_lora(fx.model), fx.vocab, cfg);
    return learner.run_wave(fx.waves[0], fx.retention);
  };
  WaveTrace a = run();
  WaveTrace b = run();
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].dsr == b.steps[i].dsr);
    CHECK(a.steps[i].pre_update_pred == b.steps[i].pre_update_pred);
  }
}

TEST_CASE("early stop halts at the target and keeps the record count") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.lr = 5e-3;
  cfg.early_stop = 0.95;
  cfg.retention_every = 0;
  ContinualLearner learner(with_lora(fx.model), fx.vocab, cfg);
  WaveTrace trace = learner.run_wave(fx.waves[0], fx.retention);
  if (trace.final_dsr() >= 0.95)
    CHECK(trace.steps.size() <= fx.waves[0].adapt_set.size());
  if (trace.steps.size() < fx.waves[0].adapt_set.size())
    CHECK(trace.final_dsr() >= 0.95);
  for (size_t i = 0; i + 1 < trace.steps.size(); ++i)
    CHECK(trace.steps[i].dsr < 0.95);
}

TEST_CASE("per_wave reinit restores the starting checkpoint for every wave") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.reinit = ReinitMode::per_wave;
  cfg.retention_every = 0;
  GuardModel start = with_lora(fx.model);
  const uint64_t start_base = start.base_fingerprint();
  const uint64_t start_adapter = start.adapter_fingerprint();

  ContinualLearner learner(start.clone(), fx.vocab, cfg);
  SequenceResult result = learner.run_sequence(fx.waves, fx.retention);
  REQUIRE(result.traces.size() == 2);
  // After a per-wave sequence the learner is reset to the snapshot.
  CHECK(learner.model().base_fingerprint() == start_base);
  CHECK(learner.model().adapter_fingerprint() == start_adapter);
  CHECK(result.retrospective_dsr.empty());
}

TEST_CASE("sequential mode carries the model forward and reports retrospective DSR") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.reinit = ReinitMode::sequential;
  cfg.retention_every = 0;
  ContinualLearner learner(with_lora(fx.model), fx.vocab, cfg);
  SequenceResult result = learner.run_sequence(fx.waves, fx.retention);
  REQUIRE(result.retrospective_dsr.size() == fx.waves.size());
  for (double d : result.retrospective_dsr) {
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
  CHECK_THROWS_AS(learner.run_sequence({}, fx.retention), Error);
}

TEST_CASE("lora base bytes invariant across an entire sequence run") {
  Fixture& fx = shared_fixture();
  CLConfig cfg = fx.lora_cfg();
  cfg.reinit = ReinitMode::sequential;
  cfg.retention_every = 0;
  GuardModel start = with_lora(fx.model);
  const uint64_t base = start.base_fingerprint();
  ContinualLearner learner(std::move(start), fx.vocab, cfg);
  learner.run_sequence(fx.waves, fx.retention);
  CHECK(learner.model().base_fingerprint() == base);
}

TEST_CASE("trace CSV and JSON serialization") {
  WaveTrace trace;
  trace.kind = AttackKind::aim;
  trace.initial_dsr = 0.25;
  trace.steps.push_back({1, Label::safe, 0.5, 0.9});
  trace.steps.push_back({2, Label::unsafe, 1.0, std::nan("")});
  trace.steps_to_optimal = 2;

  const std::string csv = wave_trace_to_csv(trace);
  CHECK(csv.rfind("wave,step,pred,dsr,id_f1\n", 0) == 0);
  CHECK(csv.find("aim,1,safe,0.500000,0.900000") != std::string::npos);
  CHECK(csv.find("aim,2,unsafe,1.000000,\n") != std::string::npos);

  const std::string json_text = wave_trace_to_json(trace);
  CHECK(json_text.find("\"steps_to_optimal\": 2") != std::string::npos);
}
