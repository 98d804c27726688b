#include "driftguard/corpus.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace driftguard {

using nlohmann::json;

const char* to_string(Label l) { return l == Label::safe ? "safe" : "unsafe"; }
const char* to_string(Dist d) { return d == Dist::ID ? "ID" : "OOD"; }

Label label_from_string(const std::string& s) {
  if (s == "safe") return Label::safe;
  if (s == "unsafe") return Label::unsafe;
  fail("unknown label '" + s + "'");
}

Dist dist_from_string(const std::string& s) {
  if (s == "ID") return Dist::ID;
  if (s == "OOD") return Dist::OOD;
  fail("unknown dist '" + s + "' (expected ID or OOD)");
}

void LabeledCorpus::add(LabeledExample ex) {
  if (trim(ex.text).empty()) fail("corpus example has empty text");
  examples_.push_back(std::move(ex));
}

size_t LabeledCorpus::count(Label l) const {
  return static_cast<size_t>(std::count_if(
      examples_.begin(), examples_.end(),
      [&](const LabeledExample& e) { return e.label == l; }));
}

size_t LabeledCorpus::count(Label l, Dist d) const {
  return static_cast<size_t>(std::count_if(
      examples_.begin(), examples_.end(),
      [&](const LabeledExample& e) { return e.label == l && e.dist == d; }));
}

LabeledCorpus LabeledCorpus::with_label(Label l) const {
  LabeledCorpus out(name_);
  for (const auto& e : examples_)
    if (e.label == l) out.add(e);
  return out;
}

LabeledCorpus LabeledCorpus::with_dist(Dist d) const {
  LabeledCorpus out(name_);
  for (const auto& e : examples_)
    if (e.dist == d) out.add(e);
  return out;
}

LabeledCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open corpus file: " + path);
  LabeledCorpus corpus(std::filesystem::path(path).stem().string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      fail("malformed JSON at line " + std::to_string(line_no) + " of " + path);
    if (!obj.contains("text") || !obj["text"].is_string())
      fail("missing \"text\" at line " + std::to_string(line_no) + " of " + path);
    if (!obj.contains("label") || !obj["label"].is_string())
      fail("missing \"label\" at line " + std::to_string(line_no) + " of " + path);
    LabeledExample ex;
    ex.text = obj["text"].get<std::string>();
    const std::string label = obj["label"].get<std::string>();
    if (label != "safe" && label != "unsafe")
      fail("unknown label '" + label + "' at line " + std::to_string(line_no));
    ex.label = label_from_string(label);
    ex.dist = obj.contains("dist") ? dist_from_string(obj["dist"].get<std::string>())
                                   : Dist::ID;
    ex.source_id = obj.contains("id") ? obj["id"].get<std::string>()
                                      : path + ":" + std::to_string(line_no);
    if (trim(ex.text).empty())
      fail("empty text at line " + std::to_string(line_no) + " of " + path);
    corpus.add(std::move(ex));
  }
  return corpus;
}

void save_corpus(const LabeledCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write corpus file: " + path);
  for (const auto& e : corpus.examples()) {
    json obj;
    obj["text"] = e.text;
    obj["label"] = to_string(e.label);
    obj["dist"] = to_string(e.dist);
    obj["id"] = e.source_id;
    out << obj.dump() << "\n";
  }
}

LabeledCorpus filter_by_length(const LabeledCorpus& corpus, size_t max_chars) {
  if (max_chars < 1) fail("filter_by_length: max_chars must be >= 1");
  LabeledCorpus out(corpus.name());
  for (const auto& e : corpus.examples())
    if (e.text.size() < max_chars) out.add(e);
  return out;
}

std::vector<LabeledCorpus> split_corpus(const LabeledCorpus& corpus,
                                        const std::vector<double>& fractions,
                                        uint64_t seed) {
  if (fractions.empty()) fail("split_corpus: no fractions given");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) fail("split_corpus: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail("split_corpus: fractions sum to " + format_double(sum, 9) + ", expected 1");

  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x517));
  rng.shuffle(order);

  // Cumulative-rounding split so part sizes add up to the corpus size.
  const size_t n = corpus.size();
  std::vector<LabeledCorpus> parts;
  parts.reserve(fractions.size());
  size_t taken = 0;
  double cum = 0.0;
  for (size_t p = 0; p < fractions.size(); ++p) {
    cum += fractions[p];
    size_t end = (p + 1 == fractions.size())
                     ? n
                     : std::min<size_t>(n, static_cast<size_t>(cum * n + 0.5));
    LabeledCorpus part(corpus.name() + "/" + std::to_string(p));
    for (size_t i = taken; i < end; ++i) part.add(corpus.at(order[i]));
    taken = end;
    parts.push_back(std::move(part));
  }
  return parts;
}

static std::vector<std::string> load_bank(const std::string& path) {
  std::vector<std::string> out;
  for (const auto& line : read_lines(path)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    out.push_back(t);
  }
  if (out.empty()) fail("phrase bank is empty: " + path);
  return out;
}

PhraseBanks PhraseBanks::load(const std::string& assets_dir) {
  const std::string dir = assets_dir + "/phrases/";
  PhraseBanks banks;
  banks.safe_templates = load_bank(dir + "safe_templates.txt");
  banks.safe_topics = load_bank(dir + "safe_topics.txt");
  banks.unsafe_templates = load_bank(dir + "unsafe_templates.txt");
  banks.unsafe_topics = load_bank(dir + "unsafe_topics.txt");
  return banks;
}

static std::string render_phrase(const std::string& tmpl, const std::string& topic) {
  const std::string key = "{TOPIC}";
  std::string out = tmpl;
  size_t pos = out.find(key);
  if (pos == std::string::npos) fail("phrase template lacks {TOPIC}: " + tmpl);
  out.replace(pos, key.size(), topic);
  return out;
}

static void synth_side(LabeledCorpus& corpus, const std::vector<std::string>& templates,
                       const std::vector<std::string>& topics, size_t n, Label label,
                       Rng& rng, const char* tag) {
  const size_t capacity = templates.size() * topics.size();
  // Enumerate all template x topic combinations in shuffled order; wrap with
  // a numeric variant suffix if n exceeds the bank capacity.
  std::vector<size_t> order(capacity);
  for (size_t i = 0; i < capacity; ++i) order[i] = i;
  rng.shuffle(order);
  for (size_t i = 0; i < n; ++i) {
    size_t combo = order[i % capacity];
    size_t round = i / capacity;
    std::string text = render_phrase(templates[combo % templates.size()],
                                     topics[combo / templates.size()]);
    if (round > 0) text += " (v" + std::to_string(round + 1) + ")";
    if (text.size() >= 100)
      fail("phrase bank renders to >= 100 chars: " + text);
    LabeledExample ex;
    ex.text = std::move(text);
    ex.label = label;
    ex.dist = Dist::ID;
    ex.source_id = std::string("synth:") + tag + ":" + std::to_string(i);
    corpus.add(std::move(ex));
  }
}

LabeledCorpus synth_corpus(const PhraseBanks& banks, size_t n_safe,
                           size_t n_unsafe, uint64_t seed) {
  LabeledCorpus corpus("synth");
  Rng rng_safe(derive_seed(seed, 1));
  Rng rng_unsafe(derive_seed(seed, 2));
  synth_side(corpus, banks.safe_templates, banks.safe_topics, n_safe, Label::safe,
             rng_safe, "safe");
  synth_side(corpus, banks.unsafe_templates, banks.unsafe_topics, n_unsafe,
             Label::unsafe, rng_unsafe, "unsafe");
  return corpus;
}

std::string resolve_assets_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("DRIFTGUARD_ASSETS"); env && *env) return env;
#ifdef DRIFTGUARD_DEFAULT_ASSETS_DIR
  return DRIFTGUARD_DEFAULT_ASSETS_DIR;
#else
  return "assets";
#endif
}

}  // namespace driftguard
