#pragma once

#include <optional>
#include <string>
#include <vector>

#include "driftguard/model.hpp"
#include "driftguard/tokenizer.hpp"

namespace driftguard {

// Class-conditional means plus one shared covariance over penultimate
// features, regularized with a relative ridge before inversion. All profile
// math runs in double precision regardless of the engine's float storage.
struct GaussianProfile {
  int dim = 0;
  std::vector<double> mu_safe;
  std::vector<double> mu_unsafe;
  std::vector<double> sigma;      // d x d, row-major, symmetric
  std::vector<double> sigma_inv;  // cached inverse of the regularized sigma
  double reg_eps = 1e-3;          // ridge relative to trace(sigma)/d
};

// Pooled maximum-likelihood covariance (divide by N) over both classes.
// Requires at least two examples per class. reg_eps = 0 disables the ridge
// (only safe for well-conditioned scatter).
GaussianProfile fit_gaussian_profile(const std::vector<std::vector<float>>& features,
                                     const std::vector<Label>& labels,
                                     double reg_eps = 1e-3);

struct MahalanobisScore {
  double d_safe = 0.0;
  double d_unsafe = 0.0;
  double d_min = 0.0;
};

MahalanobisScore mahalanobis_score(const GaussianProfile& profile,
                                   const std::vector<float>& feature);

struct OODThreshold {
  double tau = 0.0;
  double quantile = 0.99;
  size_t calibration_size = 0;
};

// Nearest-rank empirical quantile: tau = sorted(scores)[ceil(q*n) - 1].
OODThreshold calibrate_threshold(const std::vector<double>& scores, double quantile);

enum class OODMethod { mahalanobis, energy, likelihood_ratio, ensemble };

const char* to_string(OODMethod m);
OODMethod ood_method_from_string(const std::string& s);
std::vector<OODMethod> all_ood_methods();

struct OODVerdict {
  double score = 0.0;
  bool is_ood = false;
  OODMethod method = OODMethod::mahalanobis;
};

// Everything a detector run may need; only the method-relevant members must
// be populated. The background model backs the likelihood-ratio baseline.
struct DetectorContext {
  const GuardModel* model = nullptr;
  const GaussianProfile* profile = nullptr;
  const GuardModel* background = nullptr;
  double temperature = 1.0;
  int ensemble_passes = 8;
  double ensemble_dropout = 0.1;
  uint64_t ensemble_seed = 7;
};

// Raw scores per method. High = more OOD for every method except
// likelihood_ratio, where low ratios indicate OOD.
double ood_score(OODMethod method, const DetectorContext& ctx, const TokenSequence& seq);

// Per-method flag direction: score > tau for mahalanobis/energy/ensemble,
// score < tau for likelihood_ratio. The boundary itself is never flagged.
OODVerdict detect(OODMethod method, const DetectorContext& ctx,
                  const OODThreshold& threshold, const TokenSequence& seq);

// Calibrates the method's threshold from in-distribution scores; for
// likelihood_ratio the low tail (1 - q) is used.
OODThreshold calibrate_for_method(OODMethod method, const std::vector<double>& id_scores,
                                  double quantile);

// Baseline score primitives (exposed for the oracle tests).
double energy_ood_score(const std::array<float, 2>& logits, double temperature = 1.0);
double likelihood_ratio(double model_prob, double background_prob);
double ensemble_uncertainty(const GuardModel& model, const TokenSequence& seq,
                            int n_passes, double dropout_rate, uint64_t seed);

struct DetectionReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool degenerate = false;  // a zero denominator was clamped to 0
};

// OOD is the positive class: correctly flagged OOD inputs count as TP.
DetectionReport ood_report(const std::vector<bool>& flagged,
                           const std::vector<bool>& truth_is_ood);

double f1_from_pr(double precision, double recall);

// Profile (de)serialization via the shared checkpoint container, including
// calibrated thresholds per quantile.
struct ProfileBundle {
  GaussianProfile profile;
  std::vector<OODThreshold> thresholds;  // one per calibrated quantile

  const OODThreshold& threshold_for(double quantile) const;
};

void save_profile(const ProfileBundle& bundle, const std::string& path);
ProfileBundle load_profile(const std::string& path);

// Convenience: penultimate features for a whole corpus.
std::vector<std::vector<float>> extract_features(const GuardModel& model,
                                                 const Vocabulary& vocab,
                                                 const LabeledCorpus& corpus,
                                                 size_t max_len = 512);

}  // namespace driftguard
