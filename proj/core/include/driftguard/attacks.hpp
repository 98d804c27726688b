#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "driftguard/corpus.hpp"

namespace driftguard {

enum class AttackKind {
  base64,
  caesar,
  smartgpt,
  code_chameleon,
  aim,
  dan,
  combination,
  self_cipher,
  deep_inception,
  zulu_stub,
};

const char* to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);
std::vector<AttackKind> all_attack_kinds();

struct JailbreakPrompt {
  std::string text;
  AttackKind kind = AttackKind::base64;
  std::string origin;   // source_id of the untransformed unsafe prompt
  int caesar_shift = 0; // set for caesar, needed by decode_attack
};

struct AttackWave {
  AttackKind kind = AttackKind::base64;
  std::vector<JailbreakPrompt> adapt_set;
  std::vector<JailbreakPrompt> holdout_set;
};

struct AttackConfig {
  int caesar_shift = 3;           // classical default
  std::string zulu_lexicon_path;  // empty = zulu_stub unavailable
};

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

// Loads the per-kind template assets once and applies attack transforms.
// Template files live under <assets_dir>/templates/<kind>.txt and carry a
// "{PROMPT}" placeholder ({A}..{D} for smartgpt).
class AttackForge {
 public:
  explicit AttackForge(const std::string& assets_dir, AttackConfig cfg = {});

  JailbreakPrompt apply_attack(const std::string& prompt, AttackKind kind,
                               const std::string& origin = "") const;

  // Inverse transform for the reversible kinds (base64, caesar, smartgpt).
  std::string decode_attack(const JailbreakPrompt& jb) const;

  // One wave per entry of `kinds` in order. Origins are drawn without
  // replacement across ALL waves from the distinct unsafe texts of the
  // corpus; the first `holdout` transformed prompts form the holdout set
  // and the rest the adapt set.
  std::vector<AttackWave> build_attack_waves(const LabeledCorpus& unsafe_corpus,
                                             const std::vector<AttackKind>& kinds,
                                             size_t per_kind, size_t holdout,
                                             uint64_t seed) const;

  const std::string& template_text(AttackKind kind) const;
  // Checks placeholder presence for every registered template; returns
  // human-readable "kind: ok|<problem>" lines.
  std::vector<std::string> validate_templates() const;

  const AttackConfig& config() const { return cfg_; }

 private:
  AttackConfig cfg_;
  std::map<AttackKind, std::string> templates_;
  std::map<std::string, std::string> zulu_lexicon_;
};

// SmartGPT chunking: the prompt is split at word boundaries into four chunks
// balanced by word count (earlier chunks take the remainder); each chunk
// keeps its trailing whitespace so that a+b+c+d reassembles the prompt
// byte-for-byte.
std::vector<std::string> smartgpt_chunks(const std::string& prompt);

void save_waves(const std::vector<AttackWave>& waves, const std::string& path);
std::vector<AttackWave> load_waves(const std::string& path);

}  // namespace driftguard
