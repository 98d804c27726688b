#include "driftguard/continual.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace driftguard {

using nlohmann::json;

const char* to_string(UpdateMode m) { return m == UpdateMode::lora ? "lora" : "full"; }
const char* to_string(ReinitMode m) {
  return m == ReinitMode::per_wave ? "per_wave" : "sequential";
}

UpdateMode update_mode_from_string(const std::string& s) {
  if (s == "lora") return UpdateMode::lora;
  if (s == "full") return UpdateMode::full;
  fail("unknown update mode '" + s + "'");
}

ReinitMode reinit_mode_from_string(const std::string& s) {
  if (s == "per_wave") return ReinitMode::per_wave;
  if (s == "sequential") return ReinitMode::sequential;
  fail("unknown reinit mode '" + s + "'");
}

double WaveTrace::final_id_f1() const {
  for (auto it = steps.rbegin(); it != steps.rend(); ++it)
    if (!std::isnan(it->id_f1)) return it->id_f1;
  return initial_id_f1;
}

ContinualLearner::ContinualLearner(GuardModel model, const Vocabulary& vocab,
                                   CLConfig cfg)
    : model_(std::move(model)), vocab_(&vocab), cfg_(cfg) {
  if (cfg_.update_mode == UpdateMode::lora && !model_.has_lora())
    fail("continual learning in lora mode requires attached adapters");
  if (cfg_.update_mode == UpdateMode::full && model_.has_lora())
    fail("full fine-tuning mode expects a model without adapters");
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg_.lr;
  opt_cfg.weight_decay = 0.0;  // pure adaptation steps, no decay pull
  opt_ = std::make_unique<AdamW>(model_.trainable_params(), opt_cfg);
}

void ContinualLearner::reset_model(const GuardModel& snapshot) {
  model_ = snapshot.clone();
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg_.lr;
  opt_cfg.weight_decay = 0.0;
  opt_ = std::make_unique<AdamW>(model_.trainable_params(), opt_cfg);
}

void ContinualLearner::step_update(const JailbreakPrompt& sample) {
  if (!cfg_.updates_enabled) return;
  TokenSequence seq = encode(sample.text, *vocab_, static_cast<size_t>(cfg_.max_len));
  auto trainable = model_.trainable_params();
  for (int epoch = 0; epoch < cfg_.epochs_per_sample; ++epoch) {
    DropoutSpec drop;
    drop.train = true;
    drop.seed = derive_seed(cfg_.seed, ++step_counter_);
    opt_->zero_grad();
    auto out = model_forward<float>(model_.config(), model_.params(),
                                    model_.has_lora() ? &model_.lora() : nullptr,
                                    seq.ids, drop);
    auto loss = cross_entropy_node(out.logits, kUnsafeIndex);
    loss.backward();
    opt_->step();
  }
}

double ContinualLearner::holdout_dsr(const AttackWave& wave) const {
  std::vector<Label> preds;
  preds.reserve(wave.holdout_set.size());
  for (const auto& jb : wave.holdout_set)
    preds.push_back(model_.predict(encode(jb.text, *vocab_, static_cast<size_t>(cfg_.max_len))));
  return dsr(preds, preds.size());
}

double ContinualLearner::retention_f1(const LabeledCorpus& retention) const {
  std::vector<Label> preds, truths;
  preds.reserve(retention.size());
  for (const auto& e : retention.examples()) {
    preds.push_back(model_.predict(encode(e.text, *vocab_, static_cast<size_t>(cfg_.max_len))));
    truths.push_back(e.label);
  }
  return f1_binary(preds, truths).f1;
}

WaveTrace ContinualLearner::run_wave(const AttackWave& wave,
                                     const LabeledCorpus& retention) {
  WaveTrace trace;
  trace.kind = wave.kind;
  trace.initial_dsr = holdout_dsr(wave);
  if (!retention.empty()) trace.initial_id_f1 = retention_f1(retention);

  const size_t max_len = static_cast<size_t>(cfg_.max_len);
  int step = 0;
  for (const auto& sample : wave.adapt_set) {
    ++step;
    // Inference first, update second: the logged prediction never sees the
    // update from its own sample.
    TokenSequence seq = encode(sample.text, *vocab_, max_len);
    StepRecord rec;
    rec.step = step;
    rec.pre_update_pred = model_.predict(seq);

    trace.update_time.add(timeit([&] { step_update(sample); }));

    const double infer_sec = timeit([&] { rec.dsr = holdout_dsr(wave); });
    if (!wave.holdout_set.empty())
      trace.holdout_infer_time.add(infer_sec / static_cast<double>(wave.holdout_set.size()));

    // retention_every = 0 keeps only the final point; k > 0 adds every k-th.
    const bool last_sample = step == static_cast<int>(wave.adapt_set.size());
    const bool retention_due =
        !retention.empty() &&
        (last_sample ||
         (cfg_.retention_every > 0 && step % cfg_.retention_every == 0));
    if (retention_due) rec.id_f1 = retention_f1(retention);

    const bool stop = cfg_.early_stop && cfg_.updates_enabled && rec.dsr >= *cfg_.early_stop;
    // Early stop still records its final retention point.
    if (stop && std::isnan(rec.id_f1) && !retention.empty())
      rec.id_f1 = retention_f1(retention);
    trace.steps.push_back(rec);
    if (stop) break;
  }

  double best = trace.initial_dsr;
  for (const auto& rec : trace.steps) best = std::max(best, rec.dsr);
  for (const auto& rec : trace.steps)
    if (rec.dsr == best) {
      trace.steps_to_optimal = rec.step;
      break;
    }
  return trace;
}

SequenceResult ContinualLearner::run_sequence(const std::vector<AttackWave>& waves,
                                              const LabeledCorpus& retention) {
  if (waves.empty()) fail("run_sequence: empty wave list");
  SequenceResult result;
  if (cfg_.reinit == ReinitMode::per_wave) {
    GuardModel snapshot = model_.clone();
    for (const auto& wave : waves) {
      reset_model(snapshot);
      result.traces.push_back(run_wave(wave, retention));
    }
    reset_model(snapshot);
  } else {
    for (const auto& wave : waves) result.traces.push_back(run_wave(wave, retention));
    result.retrospective_dsr.reserve(waves.size());
    for (const auto& wave : waves) result.retrospective_dsr.push_back(holdout_dsr(wave));
  }
  return result;
}

std::string wave_trace_to_csv(const WaveTrace& trace) {
  std::ostringstream ss;
  ss << "wave,step,pred,dsr,id_f1\n";
  for (const auto& rec : trace.steps) {
    ss << to_string(trace.kind) << "," << rec.step << ","
       << to_string(rec.pre_update_pred) << "," << format_double(rec.dsr) << ",";
    if (!std::isnan(rec.id_f1)) ss << format_double(rec.id_f1);
    ss << "\n";
  }
  return ss.str();
}

std::vector<AttackWave> filter_waves_by_detection(const std::vector<AttackWave>& waves,
                                                  const GuardModel& model,
                                                  const Vocabulary& vocab,
                                                  const GaussianProfile& profile,
                                                  const OODThreshold& threshold,
                                                  size_t holdout, size_t max_len) {
  std::vector<AttackWave> out;
  out.reserve(waves.size());
  for (const auto& wave : waves) {
    std::vector<JailbreakPrompt> ordered = wave.holdout_set;
    ordered.insert(ordered.end(), wave.adapt_set.begin(), wave.adapt_set.end());
    AttackWave fw;
    fw.kind = wave.kind;
    for (const auto& jb : ordered) {
      TokenSequence seq = encode(jb.text, vocab, max_len);
      auto feature = model.penultimate_feature(seq);
      if (mahalanobis_score(profile, feature).d_min > threshold.tau) {
        if (fw.holdout_set.size() < holdout)
          fw.holdout_set.push_back(jb);
        else
          fw.adapt_set.push_back(jb);
      }
    }
    if (fw.holdout_set.size() < holdout || fw.adapt_set.empty())
      fail(std::string("detection filter left too few prompts for wave ") +
           to_string(wave.kind) + " (detected " +
           std::to_string(fw.holdout_set.size() + fw.adapt_set.size()) +
           " of " + std::to_string(ordered.size()) + ")");
    out.push_back(std::move(fw));
  }
  return out;
}

std::string wave_trace_to_json(const WaveTrace& trace) {
  json j;
  j["wave"] = to_string(trace.kind);
  j["initial_dsr"] = trace.initial_dsr;
  if (!std::isnan(trace.initial_id_f1)) j["initial_id_f1"] = trace.initial_id_f1;
  if (trace.steps_to_optimal) j["steps_to_optimal"] = *trace.steps_to_optimal;
  j["update_seconds_per_step"] = trace.update_time.per_sample();
  j["holdout_infer_seconds_per_sample"] = trace.holdout_infer_time.mean;
  j["steps"] = json::array();
  for (const auto& rec : trace.steps) {
    json s;
    s["step"] = rec.step;
    s["pred"] = to_string(rec.pre_update_pred);
    s["dsr"] = rec.dsr;
    if (!std::isnan(rec.id_f1)) s["id_f1"] = rec.id_f1;
    j["steps"].push_back(s);
  }
  return j.dump(2);
}

}  // namespace driftguard
