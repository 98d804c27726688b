#include "driftguard/ood.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "driftguard/checkpoint.hpp"
#include "driftguard/train.hpp"

namespace driftguard {

using nlohmann::json;

namespace {

// Cholesky factorization of a symmetric positive-definite matrix (row-major,
// lower triangle); returns false when a pivot collapses.
bool cholesky(const std::vector<double>& a, int n, std::vector<double>& l) {
  l.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        sum -= l[static_cast<size_t>(i) * n + k] * l[static_cast<size_t>(j) * n + k];
      if (i == j) {
        if (sum <= 0.0) return false;
        l[static_cast<size_t>(i) * n + j] = std::sqrt(sum);
      } else {
        l[static_cast<size_t>(i) * n + j] = sum / l[static_cast<size_t>(j) * n + j];
      }
    }
  }
  return true;
}

// Inverse via Cholesky: solve L y = e_i, then L^T x = y, column by column.
bool spd_inverse(const std::vector<double>& a, int n, std::vector<double>& inv,
                 double& pivot_ratio) {
  std::vector<double> l;
  if (!cholesky(a, n, l)) return false;
  double pmin = l[0], pmax = l[0];
  for (int i = 0; i < n; ++i) {
    const double p = l[static_cast<size_t>(i) * n + i];
    pmin = std::min(pmin, p);
    pmax = std::max(pmax, p);
  }
  pivot_ratio = pmax / std::max(pmin, 1e-300);

  inv.assign(static_cast<size_t>(n) * n, 0.0);
  std::vector<double> y(static_cast<size_t>(n)), x(static_cast<size_t>(n));
  for (int col = 0; col < n; ++col) {
    for (int i = 0; i < n; ++i) {
      double sum = (i == col) ? 1.0 : 0.0;
      for (int k = 0; k < i; ++k) sum -= l[static_cast<size_t>(i) * n + k] * y[static_cast<size_t>(k)];
      y[static_cast<size_t>(i)] = sum / l[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
      double sum = y[static_cast<size_t>(i)];
      for (int k = i + 1; k < n; ++k) sum -= l[static_cast<size_t>(k) * n + i] * x[static_cast<size_t>(k)];
      x[static_cast<size_t>(i)] = sum / l[static_cast<size_t>(i) * n + i];
    }
    for (int i = 0; i < n; ++i) inv[static_cast<size_t>(i) * n + col] = x[static_cast<size_t>(i)];
  }
  return true;
}

double max_identity_deviation(const std::vector<double>& a,
                              const std::vector<double>& b, int n) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k)
        sum += a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * n + j];
      worst = std::max(worst, std::abs(sum - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

GaussianProfile fit_gaussian_profile(const std::vector<std::vector<float>>& features,
                                     const std::vector<Label>& labels,
                                     double reg_eps) {
  if (features.size() != labels.size())
    fail("fit_gaussian_profile: features/labels length mismatch");
  if (features.empty()) fail("fit_gaussian_profile: no features");
  const int d = static_cast<int>(features[0].size());

  size_t n_safe = 0, n_unsafe = 0;
  for (Label l : labels) (l == Label::safe ? n_safe : n_unsafe)++;
  if (n_safe < 2 || n_unsafe < 2)
    fail("fit_gaussian_profile: need at least 2 examples per class (safe=" +
         std::to_string(n_safe) + ", unsafe=" + std::to_string(n_unsafe) + ")");

  GaussianProfile p;
  p.dim = d;
  p.reg_eps = reg_eps;
  p.mu_safe.assign(static_cast<size_t>(d), 0.0);
  p.mu_unsafe.assign(static_cast<size_t>(d), 0.0);
  for (size_t i = 0; i < features.size(); ++i) {
    if (static_cast<int>(features[i].size()) != d)
      fail("fit_gaussian_profile: inconsistent feature dimensions");
    auto& mu = labels[i] == Label::safe ? p.mu_safe : p.mu_unsafe;
    for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += features[i][static_cast<size_t>(j)];
  }
  for (int j = 0; j < d; ++j) {
    p.mu_safe[static_cast<size_t>(j)] /= static_cast<double>(n_safe);
    p.mu_unsafe[static_cast<size_t>(j)] /= static_cast<double>(n_unsafe);
  }

  // Pooled within-class scatter divided by N (maximum-likelihood pooling).
  p.sigma.assign(static_cast<size_t>(d) * d, 0.0);
  std::vector<double> diff(static_cast<size_t>(d));
  for (size_t i = 0; i < features.size(); ++i) {
    const auto& mu = labels[i] == Label::safe ? p.mu_safe : p.mu_unsafe;
    for (int j = 0; j < d; ++j)
      diff[static_cast<size_t>(j)] = features[i][static_cast<size_t>(j)] - mu[static_cast<size_t>(j)];
    for (int r = 0; r < d; ++r) {
      const double dr = diff[static_cast<size_t>(r)];
      for (int c = r; c < d; ++c)
        p.sigma[static_cast<size_t>(r) * d + c] += dr * diff[static_cast<size_t>(c)];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c) {
      const double v = p.sigma[static_cast<size_t>(r) * d + c] * inv_n;
      p.sigma[static_cast<size_t>(r) * d + c] = v;
      p.sigma[static_cast<size_t>(c) * d + r] = v;
    }

  // Relative ridge: sigma + reg_eps * (trace/d) * I. A zero-scatter matrix
  // (trace 0) falls back to an absolute reg_eps ridge.
  std::vector<double> reg = p.sigma;
  if (reg_eps > 0.0) {
    double trace = 0.0;
    for (int j = 0; j < d; ++j) trace += p.sigma[static_cast<size_t>(j) * d + j];
    const double ridge = reg_eps * (trace > 0.0 ? trace / d : 1.0);
    for (int j = 0; j < d; ++j) reg[static_cast<size_t>(j) * d + j] += ridge;
  }

  double pivot_ratio = 0.0;
  if (!spd_inverse(reg, d, p.sigma_inv, pivot_ratio))
    fail("fit_gaussian_profile: covariance not invertible after regularization");
  const double dev = max_identity_deviation(p.sigma_inv, reg, d);
  if (dev > 1e-4)
    fail("fit_gaussian_profile: inversion residual " + format_double(dev, 8) +
         " too large (pivot ratio " + format_double(pivot_ratio, 2) + ")");
  return p;
}

MahalanobisScore mahalanobis_score(const GaussianProfile& profile,
                                   const std::vector<float>& feature) {
  const int d = profile.dim;
  if (static_cast<int>(feature.size()) != d)
    fail("mahalanobis_score: feature dim " + std::to_string(feature.size()) +
         " does not match profile dim " + std::to_string(d));
  auto quad = [&](const std::vector<double>& mu) {
    std::vector<double> diff(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j)
      diff[static_cast<size_t>(j)] = static_cast<double>(feature[static_cast<size_t>(j)]) - mu[static_cast<size_t>(j)];
    double q = 0.0;
    for (int r = 0; r < d; ++r) {
      double row = 0.0;
      for (int c = 0; c < d; ++c)
        row += profile.sigma_inv[static_cast<size_t>(r) * d + c] * diff[static_cast<size_t>(c)];
      q += diff[static_cast<size_t>(r)] * row;
    }
    return std::sqrt(std::max(0.0, q));
  };
  MahalanobisScore s;
  s.d_safe = quad(profile.mu_safe);
  s.d_unsafe = quad(profile.mu_unsafe);
  s.d_min = std::min(s.d_safe, s.d_unsafe);
  return s;
}

OODThreshold calibrate_threshold(const std::vector<double>& scores, double quantile) {
  if (scores.empty()) fail("calibrate_threshold: empty scores");
  if (quantile <= 0.0 || quantile >= 1.0)
    fail("calibrate_threshold: quantile must be in (0,1)");
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  size_t rank = static_cast<size_t>(std::ceil(quantile * static_cast<double>(n)));
  rank = std::min(std::max<size_t>(rank, 1), n);
  OODThreshold t;
  t.tau = sorted[rank - 1];
  t.quantile = quantile;
  t.calibration_size = n;
  return t;
}

const char* to_string(OODMethod m) {
  switch (m) {
    case OODMethod::mahalanobis: return "mahalanobis";
    case OODMethod::energy: return "energy";
    case OODMethod::likelihood_ratio: return "likelihood_ratio";
    case OODMethod::ensemble: return "ensemble";
  }
  return "?";
}

OODMethod ood_method_from_string(const std::string& s) {
  for (OODMethod m : all_ood_methods())
    if (s == to_string(m)) return m;
  fail("unknown OOD method '" + s + "'");
}

std::vector<OODMethod> all_ood_methods() {
  return {OODMethod::mahalanobis, OODMethod::energy, OODMethod::likelihood_ratio,
          OODMethod::ensemble};
}

double energy_ood_score(const std::array<float, 2>& logits, double temperature) {
  // E(x) = -log sum exp(z_i); equals the training-time energy s(x) at T.
  return energy_score(logits, temperature);
}

double likelihood_ratio(double model_prob, double background_prob) {
  if (background_prob <= 0.0) background_prob = 1e-12;
  return model_prob / background_prob;
}

double ensemble_uncertainty(const GuardModel& model, const TokenSequence& seq,
                            int n_passes, double dropout_rate, uint64_t seed) {
  if (n_passes < 2) fail("ensemble_uncertainty: n_passes must be >= 2");
  std::vector<double> preds;
  preds.reserve(static_cast<size_t>(n_passes));
  for (int i = 0; i < n_passes; ++i) {
    DropoutSpec drop;
    drop.train = false;
    drop.rate = dropout_rate;
    drop.seed = derive_seed(seed, static_cast<uint64_t>(i));
    preds.push_back(model.unsafe_probability(seq, drop));
  }
  double mean = 0.0;
  for (double p : preds) mean += p;
  mean /= static_cast<double>(preds.size());
  double var = 0.0;
  for (double p : preds) var += (p - mean) * (p - mean);
  return var / static_cast<double>(preds.size());  // population variance
}

double ood_score(OODMethod method, const DetectorContext& ctx, const TokenSequence& seq) {
  if (!ctx.model) fail("ood_score: model missing from context");
  switch (method) {
    case OODMethod::mahalanobis: {
      if (!ctx.profile) fail("ood_score: mahalanobis requires a fitted profile");
      auto feature = ctx.model->penultimate_feature(seq);
      return mahalanobis_score(*ctx.profile, feature).d_min;
    }
    case OODMethod::energy:
      return energy_ood_score(ctx.model->logits(seq), ctx.temperature);
    case OODMethod::likelihood_ratio: {
      if (!ctx.background) fail("ood_score: likelihood_ratio requires a background model");
      // Max class probability under each model; low ratios indicate OOD.
      auto max_prob = [&](const GuardModel& m) {
        const double pu = m.unsafe_probability(seq);
        return std::max(pu, 1.0 - pu);
      };
      return likelihood_ratio(max_prob(*ctx.model), max_prob(*ctx.background));
    }
    case OODMethod::ensemble:
      return ensemble_uncertainty(*ctx.model, seq, ctx.ensemble_passes,
                                  ctx.ensemble_dropout, ctx.ensemble_seed);
  }
  fail("ood_score: unknown method");
}

OODVerdict detect(OODMethod method, const DetectorContext& ctx,
                  const OODThreshold& threshold, const TokenSequence& seq) {
  OODVerdict v;
  v.method = method;
  v.score = ood_score(method, ctx, seq);
  v.is_ood = method == OODMethod::likelihood_ratio ? v.score < threshold.tau
                                                   : v.score > threshold.tau;
  return v;
}

OODThreshold calibrate_for_method(OODMethod method, const std::vector<double>& id_scores,
                                  double quantile) {
  // likelihood_ratio flags the LOW tail, so its tau sits at the (1-q) rank.
  const double q = method == OODMethod::likelihood_ratio ? 1.0 - quantile : quantile;
  OODThreshold t = calibrate_threshold(id_scores, q);
  t.quantile = quantile;
  return t;
}

DetectionReport ood_report(const std::vector<bool>& flagged,
                           const std::vector<bool>& truth_is_ood) {
  if (flagged.size() != truth_is_ood.size())
    fail("ood_report: verdicts/ground truth length mismatch");
  DetectionReport r;
  for (size_t i = 0; i < flagged.size(); ++i) {
    if (flagged[i] && truth_is_ood[i]) ++r.tp;
    else if (flagged[i] && !truth_is_ood[i]) ++r.fp;
    else if (!flagged[i] && truth_is_ood[i]) ++r.fn;
    else ++r.tn;
  }
  if (r.tp + r.fp == 0) {
    r.precision = 0.0;
    r.degenerate = true;
  } else {
    r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  }
  if (r.tp + r.fn == 0) {
    r.recall = 0.0;
    r.degenerate = true;
  } else {
    r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  }
  r.f1 = f1_from_pr(r.precision, r.recall);
  return r;
}

double f1_from_pr(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

const OODThreshold& ProfileBundle::threshold_for(double quantile) const {
  for (const auto& t : thresholds)
    if (std::abs(t.quantile - quantile) < 1e-9) return t;
  fail("no calibrated threshold for quantile " + format_double(quantile, 4));
}

void save_profile(const ProfileBundle& bundle, const std::string& path) {
  Container c;
  c.kind = "profile";
  json cfg;
  cfg["dim"] = bundle.profile.dim;
  cfg["reg_eps"] = bundle.profile.reg_eps;
  cfg["thresholds"] = json::array();
  for (const auto& t : bundle.thresholds)
    cfg["thresholds"].push_back({{"tau", t.tau},
                                 {"quantile", t.quantile},
                                 {"calibration_size", t.calibration_size}});
  c.config_json = cfg.dump();

  auto push = [&](const std::string& name, const std::vector<double>& v,
                  std::vector<int> shape) {
    TensorEntry e;
    e.name = name;
    e.shape = std::move(shape);
    e.data.assign(v.begin(), v.end());
    c.tensors.push_back(std::move(e));
  };
  const int d = bundle.profile.dim;
  push("mu_safe", bundle.profile.mu_safe, {d});
  push("mu_unsafe", bundle.profile.mu_unsafe, {d});
  push("sigma", bundle.profile.sigma, {d, d});
  write_container(c, path);
}

ProfileBundle load_profile(const std::string& path) {
  Container c = read_container(path, "profile");
  json cfg = json::parse(c.config_json);
  ProfileBundle bundle;
  GaussianProfile& p = bundle.profile;
  p.dim = cfg.at("dim").get<int>();
  p.reg_eps = cfg.at("reg_eps").get<double>();
  for (const auto& t : cfg.at("thresholds")) {
    OODThreshold th;
    th.tau = t.at("tau").get<double>();
    th.quantile = t.at("quantile").get<double>();
    th.calibration_size = t.at("calibration_size").get<size_t>();
    bundle.thresholds.push_back(th);
  }
  auto pull = [&](const std::string& name) {
    const TensorEntry& e = c.find(name);
    return std::vector<double>(e.data.begin(), e.data.end());
  };
  p.mu_safe = pull("mu_safe");
  p.mu_unsafe = pull("mu_unsafe");
  p.sigma = pull("sigma");

  // sigma_inv is re-derived from the (float32-rounded) stored sigma so the
  // identity check holds by construction after a round trip.
  const int d = p.dim;
  std::vector<double> reg = p.sigma;
  if (p.reg_eps > 0.0) {
    double trace = 0.0;
    for (int j = 0; j < d; ++j) trace += p.sigma[static_cast<size_t>(j) * d + j];
    const double ridge = p.reg_eps * (trace > 0.0 ? trace / d : 1.0);
    for (int j = 0; j < d; ++j) reg[static_cast<size_t>(j) * d + j] += ridge;
  }
  double pivot_ratio = 0.0;
  if (!spd_inverse(reg, d, p.sigma_inv, pivot_ratio))
    fail("load_profile: stored covariance not invertible: " + path);
  return bundle;
}

std::vector<std::vector<float>> extract_features(const GuardModel& model,
                                                 const Vocabulary& vocab,
                                                 const LabeledCorpus& corpus,
                                                 size_t max_len) {
  std::vector<std::vector<float>> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus.examples())
    out.push_back(model.penultimate_feature(encode(e.text, vocab, max_len)));
  return out;
}

}  // namespace driftguard
