#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "driftguard/attacks.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/model.hpp"
#include "driftguard/train.hpp"

namespace driftguard {

enum class UpdateMode { lora, full };
enum class ReinitMode { per_wave, sequential };

const char* to_string(UpdateMode m);
const char* to_string(ReinitMode m);
UpdateMode update_mode_from_string(const std::string& s);
ReinitMode reinit_mode_from_string(const std::string& s);

struct CLConfig {
  UpdateMode update_mode = UpdateMode::lora;
  // Constant throughout a run. 3e-4 suits the desk-scale architecture; a
  // 1e-4 rate (typical for much larger backbones) adapts proportionally
  // slower here and is available via [cl] lr in the config file.
  double lr = 3e-4;
  int batch_size = 1;          // one sample per update
  int epochs_per_sample = 1;   // one epoch per batch
  int max_len = 512;
  std::optional<double> early_stop;  // DSR target; typical value 0.95
  ReinitMode reinit = ReinitMode::per_wave;
  uint64_t seed = 1;
  // 0 disables per-step retention evaluation (it still runs after the final
  // step); k > 0 evaluates every k-th step.
  int retention_every = 1;
  bool updates_enabled = true;  // false replays the no-update baseline
};

struct StepRecord {
  int step = 0;                       // 1-based update index within the wave
  Label pre_update_pred = Label::safe;  // prediction logged before the update
  double dsr = 0.0;                   // holdout DSR after this step's update
  double id_f1 = std::nan("");        // retention macro F1; NaN when skipped
};

struct WaveTrace {
  AttackKind kind = AttackKind::base64;
  double initial_dsr = 0.0;  // holdout DSR before any update
  double initial_id_f1 = std::nan("");
  std::vector<StepRecord> steps;
  std::optional<int> steps_to_optimal;  // first step reaching the max observed DSR
  TimeStats update_time;
  TimeStats holdout_infer_time;

  double final_dsr() const { return steps.empty() ? initial_dsr : steps.back().dsr; }
  double final_id_f1() const;
};

struct SequenceResult {
  std::vector<WaveTrace> traces;
  // Sequential mode only: DSR on every wave's holdout re-evaluated after the
  // whole run (the retrospective matrix diagonal-free view).
  std::vector<double> retrospective_dsr;
};

// Owns one model plus its optimizer state for inference-then-update replay.
class ContinualLearner {
 public:
  ContinualLearner(GuardModel model, const Vocabulary& vocab, CLConfig cfg);

  const GuardModel& model() const { return model_; }
  GuardModel& model() { return model_; }
  const CLConfig& config() const { return cfg_; }

  // One gradient step of plain CE on this sample with the unsafe label.
  void step_update(const JailbreakPrompt& sample);

  // Inference-then-update over the wave's adapt set in stored order; DSR on
  // the holdout and (gated) macro F1 on the retention set after every step.
  WaveTrace run_wave(const AttackWave& wave, const LabeledCorpus& retention);

  SequenceResult run_sequence(const std::vector<AttackWave>& waves,
                              const LabeledCorpus& retention);

  double holdout_dsr(const AttackWave& wave) const;
  double retention_f1(const LabeledCorpus& retention) const;

 private:
  void reset_model(const GuardModel& snapshot);

  GuardModel model_;
  const Vocabulary* vocab_;
  CLConfig cfg_;
  std::unique_ptr<AdamW> opt_;
  uint64_t step_counter_ = 0;
};

std::string wave_trace_to_csv(const WaveTrace& trace);
std::string wave_trace_to_json(const WaveTrace& trace);

}  // namespace driftguard

#include "driftguard/ood.hpp"

namespace driftguard {

// Keeps only the prompts the Mahalanobis detector flags, then re-splits each
// wave: the first `holdout` detected prompts (in original draw order) form
// the holdout set, the rest the adapt set. Mirrors the replay protocol where
// continual updates are triggered exclusively by detected OOD inputs.
std::vector<AttackWave> filter_waves_by_detection(const std::vector<AttackWave>& waves,
                                                  const GuardModel& model,
                                                  const Vocabulary& vocab,
                                                  const GaussianProfile& profile,
                                                  const OODThreshold& threshold,
                                                  size_t holdout, size_t max_len = 512);

}  // namespace driftguard
