#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "syllab/corpus.hpp"
#include "syllab/error.hpp"

using namespace syllab;

namespace {

std::vector<AnnotatedWord> parse(const std::string& text) {
  std::istringstream in(text);
  return read_records(in);
}

Dataset numbered(std::size_t n) {
  Dataset ds;
  ds.name = "numbered";
  for (std::size_t i = 0; i < n; ++i) {
    std::string w = "w";
    for (std::size_t k = i; k > 0 || w.size() == 1; k /= 26) w.push_back(static_cast<char>('a' + k % 26));
    ds.entries.push_back(make_word(w));
  }
  return ds;
}

}  // namespace

TEST_CASE("records in both layouts") {
  auto recs = parse("# header\nberekening\tbe-re-ke-ning\n\nproteine\tpro-te-i-ne\tprote'jin@\tpro-te'-ji-n@\ne-land\n");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].orth_bounds.to_string() == "0101010000");
  CHECK_FALSE(recs[0].has_phonetic());
  CHECK(recs[1].has_phonetic());
  CHECK(recs[1].orth.size() == 8);
  CHECK(recs[1].phon->size() == 10);
  CHECK(recs[2].orth == U"eland");
  CHECK(parse("").empty());
}

TEST_CASE("parse errors carry the line number") {
  try {
    parse("ok\tok\nkat\tka-t-\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("kat\tka-te\n"), Error);
  CHECK_THROWS_AS(parse("a\tb\tc\n"), Error);
}

TEST_CASE("ambiguity removal") {
  std::vector<AnnotatedWord> raw{make_word("zoe-ven"), make_word("zo-e-ven"), make_word("kat"), make_word("kat"),
                                 make_word("be-re-ke-ning")};
  const auto r = remove_ambiguous(raw);
  CHECK(r.removed == std::vector<Word>{U"zoeven"});
  CHECK(r.duplicates_merged == 1);
  CHECK(r.dataset.size() == 2);
  const auto again = remove_ambiguous(r.dataset.entries);
  CHECK(again.dataset.entries == r.dataset.entries);
  CHECK(again.removed.empty());
}

TEST_CASE("pseudoword filter count") {
  // 99 clean forms plus 21 forms listed twice with different splits.
  std::vector<AnnotatedWord> raw;
  const auto ds = numbered(120);
  for (std::size_t i = 0; i < 99; ++i) raw.push_back(ds.entries[i]);
  for (std::size_t i = 99; i < 120; ++i) {
    auto w = ds.entries[i];
    raw.push_back(w);
    w.orth_bounds.set(0, true);
    raw.push_back(w);
  }
  const auto r = remove_ambiguous(raw);
  CHECK(r.removed.size() == 21);
  CHECK(r.dataset.size() == 99);
}

TEST_CASE("split is a seeded partition") {
  const auto ds = numbered(100);
  const auto folds = split(ds, {0.9, 11, 3});
  REQUIRE(folds.size() == 3);
  for (const auto& f : folds) {
    CHECK(f.train.size() == 90);
    CHECK(f.test.size() == 10);
    std::set<Word> all;
    for (const auto& e : f.train.entries) all.insert(e.orth);
    for (const auto& e : f.test.entries) CHECK(all.insert(e.orth).second);
    CHECK(all.size() == 100);
  }
  CHECK(folds[0].test.entries != folds[1].test.entries);
  const auto again = split(ds, {0.9, 11, 3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(again[k].test.entries == folds[k].test.entries);
  // Fold k equals a single-fold split with seed + k.
  CHECK(split(ds, {0.9, 12, 1})[0].test.entries == folds[1].test.entries);
  CHECK_THROWS_AS(split(Dataset{}, {}), Error);
  CHECK_THROWS_AS(split(ds, {1.0, 0, 1}), Error);
}

TEST_CASE("split sizes at full corpus scale") {
  const std::size_t n = 293714;
  CHECK(static_cast<std::size_t>(std::llround(0.9 * n)) == 264343);
  CHECK(n - 264343 == 29371);
}

TEST_CASE("segmentation rules") {
  CHECK(syllabify_by_rule("cv", U"bakote").to_string() == "010100");
  CHECK(syllabify_by_rule("vccv", U"bakto").to_string() == "00100");
  CHECK(syllabify_by_rule("cv_hiatus", U"kaot").to_string() == "0100");
  CHECK(syllabify_by_rule("cv", U"kaot").to_string() == "0000");
  CHECK_THROWS_AS(syllabify_by_rule("nope", U"a"), Error);
}

TEST_CASE("synthetic corpus") {
  const auto a = gen_synthetic({"cv", 300, 5});
  const auto b = gen_synthetic({"cv", 300, 5});
  CHECK(a.size() == 300);
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != gen_synthetic({"cv", 300, 6}).hash());
  std::set<Word> forms;
  for (const auto& e : a.entries) {
    CHECK(forms.insert(e.orth).second);
    CHECK(e.orth.size() <= 34);
    CHECK(e.orth_bounds == syllabify_by_rule("cv", e.orth));
  }
  CHECK_THROWS_AS(gen_synthetic({"cv", 0, 1}), Error);
  CHECK_THROWS_AS(gen_synthetic({"xx", 5, 1}), Error);
}

TEST_CASE("synthetic phonetic channel disambiguates the digraph") {
  SyntheticSpec spec{"cv", 400, 3, true, 0.5};
  const auto ds = gen_synthetic(spec);
  CHECK(ds.has_phonetic());
  int diphthong = 0, hiatus = 0;
  for (const auto& e : ds.entries) {
    CHECK_NOTHROW(e.validate());
    const auto pos = e.orth.find(U"ie");
    if (pos == Word::npos) {
      CHECK(*e.phon == e.orth);
      continue;
    }
    if (e.phon->find(U'Y') != Word::npos) {
      ++diphthong;
      CHECK_FALSE(e.orth_bounds[pos]);
    } else {
      ++hiatus;
      CHECK(e.orth_bounds[pos]);
    }
  }
  CHECK(diphthong > 50);
  CHECK(hiatus > 50);
}

TEST_CASE("tsv round trip") {
  Dataset ds;
  ds.entries = {make_word("be-re-ke-ning"), make_word("lep-to-soom", "lEp-to-'som")};
  std::ostringstream out;
  save_tsv(ds, out);
  std::istringstream in(out.str());
  CHECK(read_records(in) == ds.entries);
}
