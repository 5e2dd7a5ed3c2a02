#include <doctest.h>

#include "syllab/core.hpp"
#include "syllab/error.hpp"
#include "syllab/rng.hpp"

using namespace syllab;

TEST_CASE("utf8 round trip") {
  const std::string s = "café ruïne aliënatie";
  CHECK(to_utf8(from_utf8(s)) == s);
  CHECK(from_utf8("ë").size() == 1);
  CHECK_THROWS_AS(from_utf8("\xC3"), Error);
  CHECK_THROWS_AS(from_utf8("\xFF"), Error);
}

TEST_CASE("normalize lowercases and composes") {
  CHECK(normalize("Wereldbeker") == U"wereldbeker");
  CHECK(normalize("ALIËNATIE") == U"aliënatie");
  CHECK(normalize("alie\xCC\x88natie") == U"aliënatie");
}

TEST_CASE("encode and decode boundaries") {
  const auto seg = encode_boundaries_utf8("be-re-ke-ning");
  CHECK(seg.word == U"berekening");
  CHECK(seg.bounds.to_string() == "0101010000");
  CHECK(decode_boundaries_utf8(seg.word, seg.bounds) == "be-re-ke-ning");

  const auto single = encode_boundaries_utf8("care");
  CHECK(single.bounds.count() == 0);

  CHECK_THROWS_AS(encode_boundaries_utf8("be--re"), Error);
  CHECK_THROWS_AS(encode_boundaries_utf8("-be"), Error);
  CHECK_THROWS_AS(encode_boundaries_utf8("be-"), Error);
  CHECK_THROWS_AS(decode_boundaries_utf8(U"abc", BoundaryVector(2)), Error);

  BoundaryVector trailing = BoundaryVector::from_string("0011");
  CHECK(decode_boundaries_utf8(U"abcd", trailing) == "abc-d");
}

TEST_CASE("annotated words validate lengths") {
  const auto w = make_word("lep-to-soom", "lEp-to-'som");
  CHECK(w.has_phonetic());
  CHECK(w.orth == U"leptosoom");
  CHECK(w.phon->size() == 9);
  CHECK_NOTHROW(w.validate());
  auto bad = w;
  bad.orth_bounds = BoundaryVector(3);
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("alphabet reserves sentinels") {
  const std::vector<Word> words{U"bab", U"ca"};
  const auto a = Alphabet::from_words(words);
  CHECK(a.size() == Alphabet::kReserved + 3);
  CHECK(a.lookup(U'a') == Alphabet::kReserved);
  CHECK(a.lookup(U'z') == Alphabet::kUnknown);
  CHECK(a.symbol(a.lookup(U'c')) == U'c');
  CHECK_THROWS_AS(a.symbol(Alphabet::kPad), Error);
}

TEST_CASE("rng is reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(7);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 5000; ++i) ++hist[r.below(5)];
  for (int h : hist) CHECK(h > 800);
  CHECK(counter_uniform(1, 2, 3) == counter_uniform(1, 2, 3));
  CHECK(counter_uniform(1, 2, 3) != counter_uniform(1, 2, 4));
}
