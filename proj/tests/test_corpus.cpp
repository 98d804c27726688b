#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "driftguard/corpus.hpp"

using namespace driftguard;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  return path;
}

PhraseBanks banks() { return PhraseBanks::load(DRIFTGUARD_TEST_ASSETS); }

}  // namespace

TEST_CASE("load_corpus single record") {
  auto path = write_temp("corpus_one.jsonl", R"({"text":"hello","label":"safe"})" "\n");
  LabeledCorpus c = load_corpus(path);
  REQUIRE(c.size() == 1);
  CHECK(c.at(0).text == "hello");
  CHECK(c.at(0).label == Label::safe);
  CHECK(c.at(0).dist == Dist::ID);
}

TEST_CASE("load_corpus empty file is a valid empty corpus") {
  auto path = write_temp("corpus_empty.jsonl", "");
  CHECK(load_corpus(path).size() == 0);
}

TEST_CASE("load_corpus rejects unknown labels with the line number") {
  auto path = write_temp("corpus_bad.jsonl", R"({"text":"x","label":"harmful"})" "\n");
  CHECK_THROWS_WITH_AS(load_corpus(path), "unknown label 'harmful' at line 1", Error);
}

TEST_CASE("load_corpus reports malformed lines") {
  auto path = write_temp("corpus_malformed.jsonl",
                         R"({"text":"ok","label":"safe"})" "\n" "not json\n");
  try {
    load_corpus(path);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("filter_by_length keeps strictly shorter texts, preserving order") {
  LabeledCorpus c;
  c.add({"ab", Label::safe, Dist::ID, "a"});
  c.add({"abcd", Label::safe, Dist::ID, "b"});
  LabeledCorpus f = filter_by_length(c, 3);
  REQUIRE(f.size() == 1);
  CHECK(f.at(0).text == "ab");
}

TEST_CASE("filter_by_length boundary: strict inequality at the limit") {
  LabeledCorpus c;
  for (int i = 0; i < 4; ++i)
    c.add({std::string(99, 'x'), Label::safe, Dist::ID, "s"});
  for (int i = 0; i < 6; ++i)
    c.add({std::string(100, 'y'), Label::unsafe, Dist::ID, "l"});
  CHECK(filter_by_length(c, 100).size() == 4);
  CHECK(filter_by_length(filter_by_length(c, 100), 100).size() == 4);  // idempotent
}

TEST_CASE("split_corpus sizes, determinism and multiset union") {
  PhraseBanks b = banks();
  LabeledCorpus c = synth_corpus(b, 50, 50, 3);
  auto parts = split_corpus(c, {0.8, 0.2}, 7);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 80);
  CHECK(parts[1].size() == 20);

  auto parts2 = split_corpus(c, {0.8, 0.2}, 7);
  for (size_t p = 0; p < 2; ++p) {
    REQUIRE(parts[p].size() == parts2[p].size());
    for (size_t i = 0; i < parts[p].size(); ++i)
      CHECK(parts[p].at(i).text == parts2[p].at(i).text);
  }

  std::multiset<std::string> in, out;
  for (const auto& e : c.examples()) in.insert(e.text);
  for (const auto& part : parts)
    for (const auto& e : part.examples()) out.insert(e.text);
  CHECK(in == out);
}

TEST_CASE("split_corpus rejects fractions not summing to 1") {
  LabeledCorpus c;
  c.add({"x", Label::safe, Dist::ID, "s"});
  CHECK_THROWS_AS(split_corpus(c, {0.5, 0.6}, 1), Error);
}

TEST_CASE("synth_corpus counts, determinism, length bound") {
  PhraseBanks b = banks();
  CHECK(synth_corpus(b, 0, 0, 1).empty());

  LabeledCorpus c = synth_corpus(b, 5, 5, 1);
  REQUIRE(c.size() == 10);
  CHECK(c.count(Label::safe) == 5);
  CHECK(c.count(Label::unsafe) == 5);

  LabeledCorpus c2 = synth_corpus(b, 5, 5, 1);
  for (size_t i = 0; i < c.size(); ++i) CHECK(c.at(i).text == c2.at(i).text);

  // Always passes the 100-character filter unchanged.
  LabeledCorpus big = synth_corpus(b, 400, 1200, 9);
  CHECK(filter_by_length(big, 100).size() == big.size());
}

TEST_CASE("synth_corpus texts are distinct within bank capacity") {
  PhraseBanks b = banks();
  LabeledCorpus c = synth_corpus(b, 600, 1100, 5);
  std::set<std::string> texts;
  for (const auto& e : c.examples()) texts.insert(e.text);
  CHECK(texts.size() == c.size());
}

TEST_CASE("save/load corpus round trip") {
  PhraseBanks b = banks();
  LabeledCorpus c = synth_corpus(b, 8, 8, 11);
  const std::string path = (fs::temp_directory_path() / "roundtrip.jsonl").string();
  save_corpus(c, path);
  LabeledCorpus back = load_corpus(path);
  REQUIRE(back.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    CHECK(back.at(i).text == c.at(i).text);
    CHECK(back.at(i).label == c.at(i).label);
  }
}
