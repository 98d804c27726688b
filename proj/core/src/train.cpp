#include "driftguard/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace driftguard {

void LossConfig::validate() const {
  if (temperature <= 0.0) fail("LossConfig: temperature must be > 0");
  if (m_in >= m_out) fail("LossConfig: m_in must be < m_out");
  if (lambda < 0.0 || lambda > 1.0) fail("LossConfig: lambda must be in [0,1]");
}

double energy_score(const std::vector<double>& logits, double temperature) {
  if (temperature <= 0.0) fail("energy_score: temperature must be > 0");
  if (logits.empty()) fail("energy_score: empty logits");
  double mx = logits[0] / temperature;
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - mx);
  return -temperature * (mx + std::log(sum));
}

double ood_margin_loss(const std::vector<double>& id_scores,
                       const std::vector<double>& ood_scores,
                       const LossConfig& cfg) {
  double loss = 0.0;
  if (!id_scores.empty()) {
    double acc = 0.0;
    for (double s : id_scores) {
      const double h = std::max(0.0, s - cfg.m_in);
      acc += h * h;
    }
    loss += acc / static_cast<double>(id_scores.size());
  }
  if (!ood_scores.empty()) {
    double acc = 0.0;
    for (double s : ood_scores) {
      const double h = std::max(0.0, cfg.m_out - s);
      acc += h * h;
    }
    loss += acc / static_cast<double>(ood_scores.size());
  }
  return loss;
}

double combined_loss(double ce, double ood, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) fail("combined_loss: lambda must be in [0,1]");
  return lambda * ood + (1.0 - lambda) * ce;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& w = params_[pi].values();
    const auto& g = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<float>(
          w[i] - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                            cfg_.weight_decay * w[i]));
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (float& g : p.grad()) g *= s;
  }
  return norm;
}

std::string TrainLog::to_csv() const {
  std::ostringstream ss;
  ss << "epoch,ce,ood,total,val_total\n";
  for (const auto& e : epochs)
    ss << e.epoch << "," << format_double(e.ce) << "," << format_double(e.ood)
       << "," << format_double(e.total) << "," << format_double(e.val_total) << "\n";
  return ss.str();
}

void TrainLog::save_csv(const std::string& path) const {
  write_text_file(path, to_csv());
}

namespace {

// Validation loss mirrors the training objective: CE plus the ID hinge on
// the validation prompts, with the OOD hinge evaluated on the auxiliary set.
double validation_loss(const GuardModel& model,
                       const std::vector<TokenSequence>& val_seqs,
                       const std::vector<int>& val_labels,
                       const std::vector<TokenSequence>& ood_seqs,
                       const LossConfig& loss_cfg) {
  NoGradGuard eval;
  double ce_sum = 0.0;
  std::vector<double> id_scores, ood_scores;
  id_scores.reserve(val_seqs.size());
  for (size_t i = 0; i < val_seqs.size(); ++i) {
    auto z = model.logits(val_seqs[i]);
    const std::vector<double> zd{z[0], z[1]};
    double mx = std::max(zd[0], zd[1]);
    const double lse = mx + std::log(std::exp(zd[0] - mx) + std::exp(zd[1] - mx));
    ce_sum += lse - zd[static_cast<size_t>(val_labels[i])];
    if (loss_cfg.lambda > 0.0)
      id_scores.push_back(energy_score(zd, loss_cfg.temperature));
  }
  if (loss_cfg.lambda > 0.0) {
    ood_scores.reserve(ood_seqs.size());
    for (const auto& seq : ood_seqs) {
      auto z = model.logits(seq);
      ood_scores.push_back(energy_score(z, loss_cfg.temperature));
    }
  }
  const double ce = val_seqs.empty() ? 0.0 : ce_sum / static_cast<double>(val_seqs.size());
  const double ood = ood_margin_loss(id_scores, ood_scores, loss_cfg);
  return combined_loss(ce, ood, loss_cfg.lambda);
}

}  // namespace

TrainLog train_guardrail(GuardModel& model, const Vocabulary& vocab,
                         const LabeledCorpus& id_train, const LabeledCorpus& ood_aux,
                         const LossConfig& loss_cfg, const TrainConfig& train_cfg,
                         const LabeledCorpus& id_val) {
  loss_cfg.validate();
  if (id_train.empty()) fail("train_guardrail: id_train is empty");
  if (id_train.count(Label::safe) == 0 || id_train.count(Label::unsafe) == 0)
    fail("train_guardrail: id_train must contain both labels");
  if (loss_cfg.lambda > 0.0 && ood_aux.empty())
    fail("train_guardrail: ood_aux must be non-empty when lambda > 0");

  const size_t max_len = static_cast<size_t>(train_cfg.max_len);
  auto encode_all = [&](const LabeledCorpus& c) {
    std::vector<TokenSequence> out;
    out.reserve(c.size());
    for (const auto& e : c.examples()) out.push_back(encode(e.text, vocab, max_len));
    return out;
  };
  std::vector<TokenSequence> id_seqs = encode_all(id_train);
  std::vector<TokenSequence> ood_seqs = encode_all(ood_aux);
  std::vector<TokenSequence> val_seqs = encode_all(id_val);
  std::vector<int> id_labels, val_labels;
  for (const auto& e : id_train.examples())
    id_labels.push_back(e.label == Label::unsafe ? kUnsafeIndex : kSafeIndex);
  for (const auto& e : id_val.examples())
    val_labels.push_back(e.label == Label::unsafe ? kUnsafeIndex : kSafeIndex);

  AdamWConfig opt_cfg;
  opt_cfg.lr = train_cfg.lr;
  opt_cfg.weight_decay = train_cfg.weight_decay;
  auto trainable = model.trainable_params();
  AdamW opt(trainable, opt_cfg);

  Rng order_rng(derive_seed(train_cfg.seed, 0x0dd3));
  std::vector<size_t> ood_order(ood_seqs.size());
  for (size_t i = 0; i < ood_order.size(); ++i) ood_order[i] = i;
  size_t ood_cursor = 0;
  auto next_ood = [&]() -> const TokenSequence* {
    if (ood_cursor == 0) order_rng.shuffle(ood_order);
    const TokenSequence* s = &ood_seqs[ood_order[ood_cursor]];
    ood_cursor = (ood_cursor + 1) % ood_order.size();
    return s;
  };

  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
  GuardModel best = model.clone();
  uint64_t step_counter = 0;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::vector<size_t> order(id_seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    double ce_acc = 0.0, ood_acc = 0.0, total_acc = 0.0;
    size_t steps = 0;
    const size_t bs = static_cast<size_t>(train_cfg.batch_size);
    for (size_t begin = 0; begin < order.size(); begin += bs) {
      const size_t end = std::min(order.size(), begin + bs);
      std::vector<const TokenSequence*> id_batch;
      std::vector<int> batch_labels;
      for (size_t i = begin; i < end; ++i) {
        id_batch.push_back(&id_seqs[order[i]]);
        batch_labels.push_back(id_labels[order[i]]);
      }
      std::vector<const TokenSequence*> ood_batch;
      if (loss_cfg.lambda > 0.0 && !ood_seqs.empty())
        for (size_t i = begin; i < end; ++i) ood_batch.push_back(next_ood());

      DropoutSpec drop;
      drop.train = true;
      drop.rate = train_cfg.dropout;
      drop.seed = derive_seed(train_cfg.seed, ++step_counter);

      opt.zero_grad();
      auto parts = training_loss<float>(model.config(), model.params(),
                                        model.has_lora() ? &model.lora() : nullptr,
                                        id_batch, batch_labels, ood_batch, loss_cfg,
                                        drop);
      parts.total.backward();
      clip_grad_norm(trainable, train_cfg.grad_clip);
      opt.step();

      ce_acc += parts.ce;
      ood_acc += parts.ood;
      total_acc += static_cast<double>(parts.total.item());
      ++steps;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.ce = ce_acc / static_cast<double>(steps);
    stats.ood = ood_acc / static_cast<double>(steps);
    stats.total = total_acc / static_cast<double>(steps);
    stats.val_total = validation_loss(model, val_seqs, val_labels, ood_seqs, loss_cfg);
    log.epochs.push_back(stats);

    if (stats.val_total < best_val) {
      best_val = stats.val_total;
      best = model.clone();
      log.best_epoch = epoch;
    }
  }

  model = best.clone();
  return log;
}

}  // namespace driftguard
