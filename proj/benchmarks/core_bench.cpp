#include <benchmark/benchmark.h>

#include "driftguard/attacks.hpp"
#include "driftguard/continual.hpp"
#include "driftguard/corpus.hpp"
#include "driftguard/model.hpp"
#include "driftguard/ood.hpp"
#include "driftguard/tokenizer.hpp"
#include "driftguard/train.hpp"

using namespace driftguard;

namespace {

struct BenchState {
  PhraseBanks banks = PhraseBanks::load(DRIFTGUARD_BENCH_ASSETS);
  LabeledCorpus corpus = synth_corpus(banks, 200, 200, 1);
  Vocabulary vocab = train_bpe(corpus, 512);
  GuardModel model = GuardModel::init(ModelConfig{});
  TokenSequence seq = encode(corpus.at(0).text, vocab, 512);
  GaussianProfile profile;

  BenchState() {
    std::vector<std::vector<float>> feats;
    std::vector<Label> labels;
    for (size_t i = 0; i < 64; ++i) {
      feats.push_back(model.penultimate_feature(
          encode(corpus.at(i).text, vocab, 512)));
      labels.push_back(corpus.at(i).label);
    }
    profile = fit_gaussian_profile(feats, labels);
  }
};

BenchState& state() {
  static BenchState s;
  return s;
}

void BM_BpeEncode(benchmark::State& bm) {
  auto& s = state();
  const std::string& text = s.corpus.at(7).text;
  for (auto _ : bm) {
    auto seq = encode(text, s.vocab, 512);
    benchmark::DoNotOptimize(seq.ids.data());
  }
}
BENCHMARK(BM_BpeEncode);

void BM_ForwardLogits(benchmark::State& bm) {
  auto& s = state();
  for (auto _ : bm) {
    auto z = s.model.logits(s.seq);
    benchmark::DoNotOptimize(z[0]);
  }
}
BENCHMARK(BM_ForwardLogits);

void BM_PenultimateFeature(benchmark::State& bm) {
  auto& s = state();
  for (auto _ : bm) {
    auto f = s.model.penultimate_feature(s.seq);
    benchmark::DoNotOptimize(f.data());
  }
}
BENCHMARK(BM_PenultimateFeature);

void BM_MahalanobisScore(benchmark::State& bm) {
  auto& s = state();
  auto feature = s.model.penultimate_feature(s.seq);
  for (auto _ : bm) {
    auto score = mahalanobis_score(s.profile, feature);
    benchmark::DoNotOptimize(score.d_min);
  }
}
BENCHMARK(BM_MahalanobisScore);

void BM_LoraStepUpdate(benchmark::State& bm) {
  auto& s = state();
  GuardModel m = s.model.clone();
  m.attach_lora(LoraConfig{});
  CLConfig cfg;
  cfg.update_mode = UpdateMode::lora;
  ContinualLearner learner(std::move(m), s.vocab, cfg);
  JailbreakPrompt jb;
  jb.text = s.corpus.at(3).text;
  for (auto _ : bm) learner.step_update(jb);
}
BENCHMARK(BM_LoraStepUpdate);

}  // namespace

BENCHMARK_MAIN();
