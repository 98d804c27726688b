#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "driftguard/corpus.hpp"

namespace driftguard {

struct TokenSequence {
  std::vector<int> ids;
  bool truncated = false;

  size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

// Byte-level BPE vocabulary: ids 0..255 are the raw bytes, each merge rule
// appends one id. Any UTF-8 string encodes without an UNK token.
class Vocabulary {
 public:
  Vocabulary();

  // Appends a merge of two existing tokens; returns the new id.
  int add_merge(int left, int right);

  size_t size() const { return tokens_.size(); }
  size_t merge_count() const { return merges_.size(); }
  const std::string& token_bytes(int id) const;
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }

  // rank (application priority) and merged id for a pair, or -1 if unknown.
  struct MergeInfo {
    int rank = -1;
    int merged_id = -1;
  };
  MergeInfo lookup(int left, int right) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;                // id -> byte string
  std::vector<std::pair<int, int>> merges_;        // rank -> (left, right)
  std::unordered_map<uint64_t, MergeInfo> pair_map_;
};

// Greedy most-frequent-pair training over the corpus texts. Stops when
// vocab_size is reached or no adjacent pair occurs at least twice. Ties are
// broken by lexicographic order of the pair's byte strings.
Vocabulary train_bpe(const LabeledCorpus& corpus, size_t vocab_size);

TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     size_t max_len = 512);
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace driftguard
