// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "dsner/error.hpp"
#include "dsner/gazetteer.hpp"
#include "dsner/rng.hpp"
#include "test_support.hpp"

using namespace dsner;

namespace {

const TagScheme kScheme({"PER", "ORG", "LOC"});

std::vector<int> labels_of(const std::vector<std::string>& tokens, const Gazetteer& gaz,
                           bool case_sensitive = true) {
  std::vector<Sentence> corpus{Sentence::from_tokens("s", tokens)};
  return match_gazetteer(corpus, gaz, kScheme, case_sensitive).at(0).labels;
}

// Exhaustive oracle: at each start, scan every span and every entry; keep the
// longest match and, among equal lengths, the earliest entry.
std::vector<int> brute_force(const std::vector<std::string>& tokens, const Gazetteer& gaz,
                             bool case_sensitive) {
  auto norm = [&](const std::string& s) { return case_sensitive ? s : ascii_lower(s); };
  std::vector<int> out(tokens.size(), TagScheme::kOutside);
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t best_len = 0;
    int best_type = 0;
    for (std::size_t j = i + 1; j <= tokens.size(); ++j) {
      for (const auto& e : gaz.entries()) {
        if (e.phrase.size() != j - i) continue;
        bool eq = true;
        for (std::size_t k = 0; k < e.phrase.size() && eq; ++k) eq = norm(e.phrase[k]) == norm(tokens[i + k]);
        if (eq && j - i > best_len) {
          best_len = j - i;
          best_type = kScheme.index_of(e.type);
        }
      }
    }
    if (best_len == 0) {
      ++i;
      continue;
    }
    for (std::size_t k = i; k < i + best_len; ++k) out[k] = best_type;
    i += best_len;
  }
  return out;
}

}  // namespace

TEST_CASE("single exact match") {
  Gazetteer gaz;
  gaz.add({"Todd", "Martin"}, "PER");
  CHECK(labels_of({"Todd", "Martin", "won"}, gaz) == std::vector<int>{1, 1, 0});
}

TEST_CASE("partial phrases do not match") {
  Gazetteer gaz;
  gaz.add({"Ek", "Chor"}, "PER");
  CHECK(labels_of({"Chor"}, gaz) == std::vector<int>{0});
  CHECK(labels_of({"Ek"}, gaz) == std::vector<int>{0});
}

TEST_CASE("longest match wins and ties go to the earlier entry") {
  Gazetteer gaz;
  gaz.add({"New", "York"}, "LOC");
  gaz.add({"New", "York", "Times"}, "ORG");
  gaz.add({"Wolf"}, "PER");
  gaz.add({"Wolf"}, "ORG");
  CHECK(labels_of({"the", "New", "York", "Times"}, gaz) == std::vector<int>{0, 2, 2, 2});
  CHECK(labels_of({"New", "York", "City"}, gaz) == std::vector<int>{3, 3, 0});
  CHECK(labels_of({"Wolf"}, gaz) == std::vector<int>{1});
}

TEST_CASE("case folding is opt-in") {
  Gazetteer gaz;
  gaz.add({"Paris"}, "LOC");
  CHECK(labels_of({"paris"}, gaz) == std::vector<int>{0});
  CHECK(labels_of({"paris"}, gaz, false) == std::vector<int>{3});
}

TEST_CASE("duplicates collapse and empty phrases are rejected") {
  Gazetteer gaz;
  CHECK(gaz.add({"A"}, "PER"));
  CHECK_FALSE(gaz.add({"A"}, "PER"));
  CHECK(gaz.add({"A"}, "ORG"));
  CHECK(gaz.size() == 2);
  CHECK_THROWS_AS(gaz.add({}, "PER"), SchemaError);
}

TEST_CASE("gazetteer types must belong to the scheme") {
  Gazetteer gaz;
  gaz.add({"May"}, "DATE");
  std::vector<Sentence> corpus{Sentence::from_tokens("s", {"May"})};
  CHECK_THROWS_AS(match_gazetteer(corpus, gaz, kScheme), SchemaError);
}

TEST_CASE("gazetteer file parsing") {
  auto gaz = Gazetteer::parse("Todd Martin\tPER\n\nAcme Corp\tORG\n", "g");
  REQUIRE(gaz.size() == 2);
  CHECK(gaz.entries()[0].phrase == std::vector<std::string>{"Todd", "Martin"});
  CHECK_THROWS_AS(Gazetteer::parse("no tab here\n", "g"), ParseError);
  const auto dir = testing::temp_dir("gaz");
  std::ofstream(dir / "g.tsv") << "Paris\tLOC\n";
  CHECK(Gazetteer::load(dir / "g.tsv").size() == 1);
  CHECK_THROWS_AS(Gazetteer::load(dir / "missing.tsv"), IoError);
}

TEST_CASE("matcher equals the exhaustive-span oracle") {
  const std::vector<std::string> vocab = {"a", "b", "c", "A", "B", "d"};
  const std::vector<std::string> types = {"PER", "ORG", "LOC"};
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Gazetteer gaz;
    const auto entries = 1 + uniform_index(rng, 8);
    for (std::size_t e = 0; e < entries; ++e) {
      std::vector<std::string> phrase;
      const auto len = 1 + uniform_index(rng, 3);
      for (std::size_t k = 0; k < len; ++k) phrase.push_back(vocab[uniform_index(rng, vocab.size())]);
      gaz.add(phrase, types[uniform_index(rng, types.size())]);
    }
    std::vector<Sentence> corpus;
    for (int s = 0; s < 50; ++s) {
      std::vector<std::string> toks;
      const auto n = 1 + uniform_index(rng, 12);
      for (std::size_t k = 0; k < n; ++k) toks.push_back(vocab[uniform_index(rng, vocab.size())]);
      corpus.push_back(Sentence::from_tokens("s" + std::to_string(s), toks));
    }
    for (bool cs : {true, false}) {
      const auto got = match_gazetteer(corpus, gaz, kScheme, cs);
      for (std::size_t s = 0; s < corpus.size(); ++s) {
        REQUIRE(got[s].labels == brute_force(corpus[s].tokens, gaz, cs));
        CHECK(got[s].weight == std::vector<std::uint8_t>(corpus[s].size(), 1));
      }
    }
  }
}

TEST_CASE("ambiguity report") {
  Gazetteer gaz;
  gaz.add({"Wolf"}, "PER");
  gaz.add({"Wolf"}, "ORG");
  gaz.add({"Paris"}, "LOC");
  auto report = ambiguity_report(gaz);
  REQUIRE(report.size() == 1);
  CHECK(report[0].phrase == "Wolf");
  CHECK(report[0].types.size() == 2);

  Gazetteer clean;
  clean.add({"Paris"}, "LOC");
  CHECK(ambiguity_report(clean).empty());
}

TEST_CASE("planted ambiguous phrases are all reported") {
  Rng rng(5);
  Gazetteer gaz;
  std::size_t planted = 0;
  for (int p = 0; p < 500; ++p) {
    const std::string phrase = "P" + std::to_string(p);
    gaz.add({phrase}, "PER");
    if (uniform01(rng) < 0.1) {
      ++planted;
      gaz.add({phrase}, uniform01(rng) < 0.5 ? "ORG" : "LOC");
      if (uniform01(rng) < 0.3) gaz.add({phrase}, "LOC");
    }
  }
  const auto report = ambiguity_report(gaz);
  CHECK(report.size() == planted);
  for (std::size_t k = 1; k < report.size(); ++k) CHECK(report[k - 1].types.size() >= report[k].types.size());
}
