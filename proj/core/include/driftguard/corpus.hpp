#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftguard/common.hpp"

namespace driftguard {

enum class Label { safe, unsafe };
enum class Dist { ID, OOD };

const char* to_string(Label l);
const char* to_string(Dist d);
Label label_from_string(const std::string& s);
Dist dist_from_string(const std::string& s);

struct LabeledExample {
  std::string text;      // non-empty after trimming
  Label label = Label::safe;
  Dist dist = Dist::ID;
  std::string source_id;  // opaque traceability handle
};

// Ordered, immutable-after-construction collection of labeled prompts.
class LabeledCorpus {
 public:
  LabeledCorpus() = default;
  explicit LabeledCorpus(std::string name) : name_(std::move(name)) {}

  void add(LabeledExample ex);

  const std::vector<LabeledExample>& examples() const { return examples_; }
  const LabeledExample& at(size_t i) const { return examples_.at(i); }
  size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  size_t count(Label l) const;
  size_t count(Label l, Dist d) const;

  // New corpus containing only examples with the given label / dist.
  LabeledCorpus with_label(Label l) const;
  LabeledCorpus with_dist(Dist d) const;

 private:
  std::vector<LabeledExample> examples_;
  std::string name_;
};

// JSONL ingestion: one object per line with keys "text", "label",
// optional "dist" (defaults to ID) and optional "id".
LabeledCorpus load_corpus(const std::string& path);
void save_corpus(const LabeledCorpus& corpus, const std::string& path);

// Keeps examples strictly shorter than max_chars characters (bytes of the
// UTF-8 encoding are not what is counted; counting is by Unicode code point
// would require a decoder, so we count bytes — synthetic corpora are ASCII).
LabeledCorpus filter_by_length(const LabeledCorpus& corpus, size_t max_chars);

// Deterministic shuffled partition. Fractions must sum to 1 within 1e-9.
std::vector<LabeledCorpus> split_corpus(const LabeledCorpus& corpus,
                                        const std::vector<double>& fractions,
                                        uint64_t seed);

// Phrase banks backing the synthetic corpus generator. Each bank is a list
// of templates with a "{TOPIC}" placeholder plus a topic list.
struct PhraseBanks {
  std::vector<std::string> safe_templates;
  std::vector<std::string> safe_topics;
  std::vector<std::string> unsafe_templates;
  std::vector<std::string> unsafe_topics;

  static PhraseBanks load(const std::string& assets_dir);
  size_t safe_capacity() const { return safe_templates.size() * safe_topics.size(); }
  size_t unsafe_capacity() const { return unsafe_templates.size() * unsafe_topics.size(); }
};

// Deterministic synthetic corpus: n_safe benign-service queries and n_unsafe
// harmful-intent queries, all strictly under 100 characters, pairwise
// distinct while capacity lasts.
LabeledCorpus synth_corpus(const PhraseBanks& banks, size_t n_safe,
                           size_t n_unsafe, uint64_t seed);

// Resolves the assets directory: explicit argument > DRIFTGUARD_ASSETS env
// var > compiled-in default (source tree / installed share dir).
std::string resolve_assets_dir(const std::string& explicit_dir = "");

}  // namespace driftguard
