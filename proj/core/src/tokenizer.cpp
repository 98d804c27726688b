#include "driftguard/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <json.hpp>

namespace driftguard {

using nlohmann::json;

namespace {

uint64_t pair_key(int left, int right) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(left)) << 32) |
         static_cast<uint32_t>(right);
}

std::string hex_escape(const std::string& bytes) {
  std::string out;
  for (unsigned char c : bytes) {
    if (c >= 0x20 && c <= 0x7e && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[5];
      std::snprintf(buf, sizeof(buf), "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

std::string hex_unescape(const std::string& text) {
  std::string out;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '\\' && i + 3 < text.size() && text[i + 1] == 'x') {
      out.push_back(static_cast<char>(std::stoi(text.substr(i + 2, 2), nullptr, 16)));
      i += 4;
    } else {
      out.push_back(text[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

Vocabulary::Vocabulary() {
  tokens_.reserve(256);
  for (int b = 0; b < 256; ++b) tokens_.push_back(std::string(1, static_cast<char>(b)));
}

int Vocabulary::add_merge(int left, int right) {
  if (left < 0 || right < 0 || left >= static_cast<int>(tokens_.size()) ||
      right >= static_cast<int>(tokens_.size()))
    fail("add_merge: token id out of range");
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(tokens_[left] + tokens_[right]);
  pair_map_[pair_key(left, right)] = {static_cast<int>(merges_.size()), id};
  merges_.emplace_back(left, right);
  return id;
}

const std::string& Vocabulary::token_bytes(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    fail("token id " + std::to_string(id) + " out of range (vocab size " +
         std::to_string(tokens_.size()) + ")");
  return tokens_[static_cast<size_t>(id)];
}

Vocabulary::MergeInfo Vocabulary::lookup(int left, int right) const {
  auto it = pair_map_.find(pair_key(left, right));
  return it == pair_map_.end() ? MergeInfo{} : it->second;
}

std::string Vocabulary::to_json() const {
  json obj;
  obj["merges"] = json::array();
  for (const auto& [l, r] : merges_)
    obj["merges"].push_back({hex_escape(tokens_[l]), hex_escape(tokens_[r])});
  return obj.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.contains("merges"))
    fail("invalid vocabulary JSON");
  Vocabulary vocab;
  // Rebuild ids by replaying merges: each side must already be a token.
  std::map<std::string, int> by_bytes;
  for (int b = 0; b < 256; ++b) by_bytes[std::string(1, static_cast<char>(b))] = b;
  for (const auto& m : obj["merges"]) {
    std::string lb = hex_unescape(m.at(0).get<std::string>());
    std::string rb = hex_unescape(m.at(1).get<std::string>());
    auto li = by_bytes.find(lb), ri = by_bytes.find(rb);
    if (li == by_bytes.end() || ri == by_bytes.end())
      fail("vocabulary merge references unknown token");
    int id = vocab.add_merge(li->second, ri->second);
    by_bytes[lb + rb] = id;
  }
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  write_text_file(path, to_json() + "\n");
}

Vocabulary Vocabulary::load(const std::string& path) {
  return from_json(read_text_file(path));
}

Vocabulary train_bpe(const LabeledCorpus& corpus, size_t vocab_size) {
  if (vocab_size < 257) fail("train_bpe: vocab_size must be >= 257");
  Vocabulary vocab;

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) {
    std::vector<int> ids;
    ids.reserve(ex.text.size());
    for (unsigned char c : ex.text) ids.push_back(c);
    seqs.push_back(std::move(ids));
  }

  while (vocab.size() < vocab_size) {
    // Count adjacent pairs over all sequences.
    std::unordered_map<uint64_t, size_t> counts;
    for (const auto& s : seqs)
      for (size_t i = 0; i + 1 < s.size(); ++i)
        ++counts[pair_key(s[i], s[i + 1])];

    uint64_t best_key = 0;
    size_t best_count = 0;
    for (const auto& [key, cnt] : counts) {
      if (cnt < 2) continue;
      if (cnt > best_count) {
        best_key = key;
        best_count = cnt;
      } else if (cnt == best_count) {
        int l = static_cast<int>(best_key >> 32), r = static_cast<int>(best_key & 0xffffffff);
        int nl = static_cast<int>(key >> 32), nr = static_cast<int>(key & 0xffffffff);
        const auto& cur = std::tie(vocab.token_bytes(l), vocab.token_bytes(r));
        const auto& cand = std::tie(vocab.token_bytes(nl), vocab.token_bytes(nr));
        if (cand < cur) best_key = key;
      }
    }
    if (best_count < 2) break;

    int left = static_cast<int>(best_key >> 32);
    int right = static_cast<int>(best_key & 0xffffffff);
    int merged = vocab.add_merge(left, right);

    // Apply the merge everywhere, left to right.
    for (auto& s : seqs) {
      size_t w = 0;
      for (size_t r = 0; r < s.size();) {
        if (r + 1 < s.size() && s[r] == left && s[r + 1] == right) {
          s[w++] = merged;
          r += 2;
        } else {
          s[w++] = s[r++];
        }
      }
      s.resize(w);
    }
  }
  return vocab;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     size_t max_len) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);

  // Repeatedly apply the lowest-rank applicable merge until none applies.
  // Rank priority reproduces the training-time tokenization.
  while (ids.size() >= 2) {
    int best_rank = -1;
    int left = -1, right = -1, merged = -1;
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      auto info = vocab.lookup(ids[i], ids[i + 1]);
      if (info.rank >= 0 && (best_rank < 0 || info.rank < best_rank)) {
        best_rank = info.rank;
        left = ids[i];
        right = ids[i + 1];
        merged = info.merged_id;
      }
    }
    if (best_rank < 0) break;
    size_t w = 0;
    for (size_t r = 0; r < ids.size();) {
      if (r + 1 < ids.size() && ids[r] == left && ids[r + 1] == right) {
        ids[w++] = merged;
        r += 2;
      } else {
        ids[w++] = ids[r++];
      }
    }
    ids.resize(w);
  }

  TokenSequence seq;
  if (ids.size() > max_len) {
    ids.resize(max_len);
    seq.truncated = true;
  }
  seq.ids = std::move(ids);
  return seq;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int id : seq.ids) out += vocab.token_bytes(id);
  return out;
}

}  // namespace driftguard
