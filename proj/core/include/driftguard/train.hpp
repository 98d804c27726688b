#pragma once

#include <optional>
#include <string>
#include <vector>

#include "driftguard/model.hpp"
#include "driftguard/tokenizer.hpp"

namespace driftguard {

struct LossConfig {
  double temperature = 1.0;  // T > 0
  double m_in = -5.0;        // in-distribution energy ceiling
  double m_out = -1.0;       // OOD energy floor, must exceed m_in
  double lambda = 0.5;       // blend weight in [0,1]

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;
  int max_len = 512;
  int epochs = 10;
  double grad_clip = 2.0;       // global max-norm
  double weight_decay = 0.01;
  double dropout = 0.0;         // model-level dropout during training
  uint64_t seed = 1;
};

// ---- scalar formula implementations (spec operations) ----------------------

// s(x) = -T * log(sum_i exp(z_i / T)), computed shift-stably.
double energy_score(const std::vector<double>& logits, double temperature);
inline double energy_score(const std::array<float, 2>& z, double temperature) {
  return energy_score(std::vector<double>{z[0], z[1]}, temperature);
}

// mean over id of max(0, s - m_in)^2 + mean over ood of max(0, m_out - s)^2;
// an empty list contributes 0.
double ood_margin_loss(const std::vector<double>& id_scores,
                       const std::vector<double>& ood_scores,
                       const LossConfig& cfg);

// lambda * ood + (1 - lambda) * ce.
double combined_loss(double ce, double ood, double lambda);

// ---- differentiable loss builders (shared by float engine and oracle) -----

template <typename T>
TensorT<T> energy_score_node(const TensorT<T>& logits, T temperature) {
  if (temperature <= T(0)) fail("energy score: temperature must be positive");
  return scale(logsumexp_vec(scale(logits, T(1) / temperature)), -temperature);
}

template <typename T>
TensorT<T> cross_entropy_node(const TensorT<T>& logits, int label_index) {
  return sub(logsumexp_vec(logits), select_element(logits, label_index));
}

template <typename T>
TensorT<T> hinge_sq_above(const TensorT<T>& s, T threshold) {
  auto h = relu(add_scalar(s, -threshold));
  return mul(h, h);
}

template <typename T>
TensorT<T> hinge_sq_below(const TensorT<T>& s, T threshold) {
  auto h = relu(scale(add_scalar(s, -threshold), T(-1)));
  return mul(h, h);
}

template <typename T>
struct TrainingLossParts {
  TensorT<T> total;
  double ce = 0.0;
  double ood = 0.0;
};

// One optimization step's loss: CE plus the ID energy hinge on the ID batch,
// the OOD energy hinge on the auxiliary batch, blended by lambda. OOD
// examples contribute no CE term.
template <typename T>
TrainingLossParts<T> training_loss(const ModelConfig& cfg, ModelParamsT<T>& params,
                                   LoraParamsT<T>* lora,
                                   const std::vector<const TokenSequence*>& id_batch,
                                   const std::vector<int>& id_labels,
                                   const std::vector<const TokenSequence*>& ood_batch,
                                   const LossConfig& loss_cfg,
                                   const DropoutSpec& drop) {
  const T temp = static_cast<T>(loss_cfg.temperature);
  std::vector<TensorT<T>> ce_terms, in_terms, out_terms;
  for (size_t i = 0; i < id_batch.size(); ++i) {
    DropoutSpec d = drop;
    d.seed = derive_seed(drop.seed, i);
    auto out = model_forward<T>(cfg, params, lora, id_batch[i]->ids, d);
    ce_terms.push_back(cross_entropy_node(out.logits, id_labels[i]));
    if (loss_cfg.lambda > 0.0) {
      auto s = energy_score_node(out.logits, temp);
      in_terms.push_back(hinge_sq_above(s, static_cast<T>(loss_cfg.m_in)));
    }
  }
  for (size_t i = 0; i < ood_batch.size(); ++i) {
    DropoutSpec d = drop;
    d.seed = derive_seed(drop.seed, 0x00d + i);
    auto out = model_forward<T>(cfg, params, lora, ood_batch[i]->ids, d);
    auto s = energy_score_node(out.logits, temp);
    out_terms.push_back(hinge_sq_below(s, static_cast<T>(loss_cfg.m_out)));
  }

  TrainingLossParts<T> parts;
  TensorT<T> ce = ce_terms.empty() ? TensorT<T>::scalar(T(0)) : average(ce_terms);
  TensorT<T> ood = TensorT<T>::scalar(T(0));
  if (!in_terms.empty() && !out_terms.empty())
    ood = add(average(in_terms), average(out_terms));
  else if (!in_terms.empty())
    ood = average(in_terms);
  else if (!out_terms.empty())
    ood = average(out_terms);
  const T lam = static_cast<T>(loss_cfg.lambda);
  parts.total = add(scale(ood, lam), scale(ce, T(1) - lam));
  parts.ce = static_cast<double>(ce.item());
  parts.ood = static_cast<double>(ood.item());
  return parts;
}

// ---- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay adaptive-moment optimizer over tensor handles.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  void step();
  void zero_grad();
  int steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamWConfig cfg_;
  int t_ = 0;
};

// Global L2-norm gradient clipping; returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

// ---- training loop ----------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double ce = 0.0;
  double ood = 0.0;
  double total = 0.0;
  double val_total = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based epoch with the lowest validation loss

  std::string to_csv() const;
  void save_csv(const std::string& path) const;
};

// OOD-aware supervised training. Each step draws an ID batch (CE + ID energy
// hinge) and an auxiliary OOD batch (OOD energy hinge only). The returned
// model carries the parameters of the epoch with the lowest validation loss.
TrainLog train_guardrail(GuardModel& model, const Vocabulary& vocab,
                         const LabeledCorpus& id_train, const LabeledCorpus& ood_aux,
                         const LossConfig& loss_cfg, const TrainConfig& train_cfg,
                         const LabeledCorpus& id_val);

}  // namespace driftguard
