#include "driftguard/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace driftguard {

using nlohmann::json;

namespace {

const char* kNames[] = {"base64",      "caesar",      "smartgpt",
                        "code_chameleon", "aim",      "dan",
                        "combination", "self_cipher", "deep_inception",
                        "zulu_stub"};

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

bool is_template_kind(AttackKind k) {
  switch (k) {
    case AttackKind::aim:
    case AttackKind::dan:
    case AttackKind::combination:
    case AttackKind::self_cipher:
    case AttackKind::deep_inception:
    case AttackKind::code_chameleon:
      return true;
    default:
      return false;
  }
}

std::string escape_quoted(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\\' || c == '\'') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

// Reads a \'-escaped single-quoted chunk starting right after the opening
// quote; returns the unescaped content and advances pos past the closing '.
std::string read_quoted(const std::string& s, size_t& pos) {
  std::string out;
  while (pos < s.size()) {
    char c = s[pos];
    if (c == '\\' && pos + 1 < s.size()) {
      out.push_back(s[pos + 1]);
      pos += 2;
      continue;
    }
    if (c == '\'') {
      ++pos;
      return out;
    }
    out.push_back(c);
    ++pos;
  }
  fail("unterminated quoted chunk in smartgpt prompt");
}

std::string replace_placeholder(const std::string& tmpl, const std::string& key,
                                const std::string& value) {
  size_t pos = tmpl.find(key);
  if (pos == std::string::npos) fail("template lacks placeholder " + key);
  std::string out = tmpl;
  out.replace(pos, key.size(), value);
  return out;
}

char rotate_letter(char c, int shift) {
  if (c >= 'a' && c <= 'z') return static_cast<char>('a' + (c - 'a' + shift) % 26);
  if (c >= 'A' && c <= 'Z') return static_cast<char>('A' + (c - 'A' + shift) % 26);
  return c;
}

}  // namespace

const char* to_string(AttackKind k) { return kNames[static_cast<int>(k)]; }

AttackKind attack_kind_from_string(const std::string& s) {
  for (int i = 0; i < 10; ++i)
    if (s == kNames[i]) return static_cast<AttackKind>(i);
  fail("unknown attack kind '" + s + "'");
}

std::vector<AttackKind> all_attack_kinds() {
  std::vector<AttackKind> out;
  for (int i = 0; i < 10; ++i) out.push_back(static_cast<AttackKind>(i));
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  size_t rem = bytes.size() - i;
  if (rem == 1) {
    uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rem == 2) {
    uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kB64Alphabet[i])] = i;
  std::string out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    int v = table[static_cast<unsigned char>(c)];
    if (v < 0) fail(std::string("invalid base64 character '") + c + "'");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::vector<std::string> smartgpt_chunks(const std::string& prompt) {
  // Word spans: each word plus its trailing whitespace, so chunks concatenate
  // back to the exact original string.
  std::vector<std::string> spans;
  size_t i = 0;
  while (i < prompt.size()) {
    size_t start = i;
    while (i < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
    while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
    spans.push_back(prompt.substr(start, i - start));
  }
  const size_t k = 4;
  const size_t n = spans.size();
  std::vector<std::string> chunks(k);
  size_t base = n / k, rem = n % k, idx = 0;
  for (size_t c = 0; c < k; ++c) {
    size_t take = base + (c < rem ? 1 : 0);
    for (size_t j = 0; j < take; ++j) chunks[c] += spans[idx++];
  }
  return chunks;
}

AttackForge::AttackForge(const std::string& assets_dir, AttackConfig cfg)
    : cfg_(std::move(cfg)) {
  const std::string dir = assets_dir + "/templates/";
  for (AttackKind k : all_attack_kinds()) {
    if (k == AttackKind::base64 || k == AttackKind::caesar ||
        k == AttackKind::zulu_stub)
      continue;  // programmatic transforms, no template file
    std::string text = read_text_file(dir + to_string(k) + ".txt");
    // Drop one trailing newline added by editors; inner newlines are kept.
    if (!text.empty() && text.back() == '\n') text.pop_back();
    templates_[k] = std::move(text);
  }
  if (!cfg_.zulu_lexicon_path.empty()) {
    for (const auto& line : read_lines(cfg_.zulu_lexicon_path)) {
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto sp = t.find(' ');
      if (sp == std::string::npos) fail("bad lexicon line: " + line);
      zulu_lexicon_[t.substr(0, sp)] = trim(t.substr(sp + 1));
    }
  }
}

const std::string& AttackForge::template_text(AttackKind kind) const {
  auto it = templates_.find(kind);
  if (it == templates_.end())
    fail(std::string("no template registered for kind ") + to_string(kind));
  return it->second;
}

JailbreakPrompt AttackForge::apply_attack(const std::string& prompt, AttackKind kind,
                                          const std::string& origin) const {
  if (prompt.empty()) fail("apply_attack: empty prompt");
  JailbreakPrompt jb;
  jb.kind = kind;
  jb.origin = origin;
  switch (kind) {
    case AttackKind::base64:
      jb.text = base64_encode(prompt);
      break;
    case AttackKind::caesar: {
      int shift = cfg_.caesar_shift;
      if (shift < 1 || shift > 25) fail("caesar shift must be in 1..25");
      jb.caesar_shift = shift;
      jb.text.reserve(prompt.size());
      for (char c : prompt) jb.text.push_back(rotate_letter(c, shift));
      break;
    }
    case AttackKind::smartgpt: {
      auto chunks = smartgpt_chunks(prompt);
      std::string t = template_text(kind);
      t = replace_placeholder(t, "{A}", escape_quoted(chunks[0]));
      t = replace_placeholder(t, "{B}", escape_quoted(chunks[1]));
      t = replace_placeholder(t, "{C}", escape_quoted(chunks[2]));
      t = replace_placeholder(t, "{D}", escape_quoted(chunks[3]));
      jb.text = std::move(t);
      break;
    }
    case AttackKind::zulu_stub: {
      if (zulu_lexicon_.empty()) fail("zulu requires pluggable lexicon");
      std::ostringstream out;
      bool first = true;
      for (const auto& w : split_ws(prompt)) {
        if (!first) out << ' ';
        first = false;
        std::string lower = w;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        auto it = zulu_lexicon_.find(lower);
        out << (it != zulu_lexicon_.end() ? it->second : w);
      }
      jb.text = out.str();
      break;
    }
    default:
      jb.text = replace_placeholder(template_text(kind), "{PROMPT}", prompt);
      break;
  }
  return jb;
}

std::string AttackForge::decode_attack(const JailbreakPrompt& jb) const {
  switch (jb.kind) {
    case AttackKind::base64:
      return base64_decode(jb.text);
    case AttackKind::caesar: {
      int shift = jb.caesar_shift > 0 ? jb.caesar_shift : cfg_.caesar_shift;
      std::string out;
      out.reserve(jb.text.size());
      for (char c : jb.text) out.push_back(rotate_letter(c, 26 - shift));
      return out;
    }
    case AttackKind::smartgpt: {
      // Recover the four quoted chunks in order; their concatenation is the
      // original prompt (chunks keep their trailing whitespace).
      std::string out;
      size_t pos = 0;
      for (char var : {'a', 'b', 'c', 'd'}) {
        std::string marker = std::string(1, var) + "='";
        pos = jb.text.find(marker, pos);
        if (pos == std::string::npos)
          fail(std::string("smartgpt prompt lacks chunk ") + var);
        pos += marker.size();
        out += read_quoted(jb.text, pos);
      }
      return out;
    }
    default:
      fail(std::string("irreversible attack kind ") + to_string(jb.kind));
  }
}

std::vector<AttackWave> AttackForge::build_attack_waves(
    const LabeledCorpus& unsafe_corpus, const std::vector<AttackKind>& kinds,
    size_t per_kind, size_t holdout, uint64_t seed) const {
  if (holdout >= per_kind) fail("build_attack_waves: holdout must be < per_kind");
  // Pool of distinct unsafe texts, first occurrence wins.
  std::vector<size_t> pool;
  std::set<std::string> seen;
  for (size_t i = 0; i < unsafe_corpus.size(); ++i) {
    const auto& e = unsafe_corpus.at(i);
    if (e.label != Label::unsafe) continue;
    if (seen.insert(e.text).second) pool.push_back(i);
  }
  const size_t required = kinds.size() * per_kind;
  if (required > pool.size())
    fail("build_attack_waves: need " + std::to_string(required) +
         " distinct unsafe prompts, only " + std::to_string(pool.size()) +
         " available");

  Rng rng(derive_seed(seed, 0xa77ac));
  std::vector<size_t> picks = rng.sample_without_replacement(pool.size(), required);

  std::vector<AttackWave> waves;
  waves.reserve(kinds.size());
  size_t cursor = 0;
  for (AttackKind kind : kinds) {
    AttackWave wave;
    wave.kind = kind;
    for (size_t j = 0; j < per_kind; ++j) {
      const auto& ex = unsafe_corpus.at(pool[picks[cursor++]]);
      JailbreakPrompt jb = apply_attack(ex.text, kind, ex.source_id);
      if (j < holdout)
        wave.holdout_set.push_back(std::move(jb));
      else
        wave.adapt_set.push_back(std::move(jb));
    }
    waves.push_back(std::move(wave));
  }
  return waves;
}

std::vector<std::string> AttackForge::validate_templates() const {
  std::vector<std::string> report;
  for (AttackKind k : all_attack_kinds()) {
    std::string line = std::string(to_string(k)) + ": ";
    if (k == AttackKind::base64 || k == AttackKind::caesar) {
      line += "ok (programmatic)";
    } else if (k == AttackKind::zulu_stub) {
      line += zulu_lexicon_.empty() ? "stub (no lexicon configured)"
                                    : "ok (lexicon loaded, non-faithful stub)";
    } else if (k == AttackKind::smartgpt) {
      const std::string& t = template_text(k);
      bool ok = t.find("{A}") != std::string::npos &&
                t.find("{B}") != std::string::npos &&
                t.find("{C}") != std::string::npos &&
                t.find("{D}") != std::string::npos;
      line += ok ? "ok" : "missing {A}..{D} placeholders";
    } else {
      line += template_text(k).find("{PROMPT}") != std::string::npos
                  ? "ok"
                  : "missing {PROMPT} placeholder";
    }
    report.push_back(std::move(line));
  }
  return report;
}

void save_waves(const std::vector<AttackWave>& waves, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write waves file: " + path);
  for (size_t w = 0; w < waves.size(); ++w) {
    auto dump = [&](const JailbreakPrompt& jb, const char* role) {
      json obj;
      obj["wave"] = w;
      obj["kind"] = to_string(waves[w].kind);
      obj["role"] = role;
      obj["text"] = jb.text;
      obj["origin"] = jb.origin;
      if (jb.caesar_shift > 0) obj["shift"] = jb.caesar_shift;
      out << obj.dump() << "\n";
    };
    for (const auto& jb : waves[w].holdout_set) dump(jb, "holdout");
    for (const auto& jb : waves[w].adapt_set) dump(jb, "adapt");
  }
}

std::vector<AttackWave> load_waves(const std::string& path) {
  std::vector<AttackWave> waves;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded())
      fail("malformed waves line " + std::to_string(line_no) + " in " + path);
    size_t w = obj.at("wave").get<size_t>();
    if (w >= waves.size()) waves.resize(w + 1);
    waves[w].kind = attack_kind_from_string(obj.at("kind").get<std::string>());
    JailbreakPrompt jb;
    jb.kind = waves[w].kind;
    jb.text = obj.at("text").get<std::string>();
    jb.origin = obj.value("origin", "");
    jb.caesar_shift = obj.value("shift", 0);
    if (obj.at("role").get<std::string>() == "holdout")
      waves[w].holdout_set.push_back(std::move(jb));
    else
      waves[w].adapt_set.push_back(std::move(jb));
  }
  return waves;
}

}  // namespace driftguard
