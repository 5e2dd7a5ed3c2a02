#include <doctest.h>

#include "syllab/brandt_corstius.hpp"
#include "syllab/error.hpp"

using namespace syllab;

namespace {

std::string rule_split(std::string_view w) {
  const Word word = normalize(w);
  return decode_boundaries_utf8(word, bc::syllabify(word, bc::default_tables()));
}

std::string clusters(std::string_view w) {
  std::string out;
  for (const auto& c : bc::compress(normalize(w), bc::default_tables().clusters)) out += "[" + to_utf8(c.text) + "]";
  return out;
}

}  // namespace

TEST_CASE("cluster compression") {
  CHECK(clusters("loonbrief") == "[l][oo][n][b][r][ie][f]");
  CHECK(clusters("a") == "[a]");
  CHECK(clusters("nieuw") == "[n][ieu][w]");
}

TEST_CASE("rule syllabification") {
  CHECK(rule_split("loonbrief") == "loon-brief");
  CHECK(rule_split("jien") == "jien");
  CHECK(rule_split("leum") == "leum");
  CHECK(rule_split("eland") == "e-land");
  CHECK(rule_split("atoomenergie") == "a-toom-e-ner-gie");
  CHECK(rule_split("gloria") == "glo-ri-a");
  CHECK(rule_split("aliënatie") == "a-li-ë-na-tie");
  CHECK(rule_split("bakoven") == "bak-o-ven");
  CHECK(rule_split("bioscoop") == "bi-o-scoop");
  CHECK(rule_split("ruïne") == "ru-ï-ne");
  CHECK(rule_split("berekening") == "be-re-ke-ning");
}

TEST_CASE("one vowel cluster per syllable") {
  for (const char* w : {"wereldbeker", "straatsteen", "angstschreeuw", "koeieuier", "ooievaar"}) {
    const Word word = normalize(w);
    const auto& t = bc::default_tables();
    const auto bounds = bc::syllabify(word, t);
    std::size_t vowels = 0;
    for (const auto& c : bc::compress(word, t.clusters)) vowels += c.vowel ? 1 : 0;
    CHECK(bounds.count() + 1 == std::max<std::size_t>(vowels, 1));
  }
}

TEST_CASE("custom tables") {
  const auto t = bc::parse_tables("[vowels]\na\ni\n[vowel_clusters]\nai\n[onsets]\ntr\n");
  CHECK(decode_boundaries_utf8(U"taitra", bc::syllabify(U"taitra", t)) == "tai-tra");
  CHECK(decode_boundaries_utf8(U"antra", bc::syllabify(U"antra", t)) == "an-tra");
  CHECK_THROWS_AS(bc::parse_tables("[bogus]\nx\n"), Error);
  CHECK_THROWS_AS(bc::parse_tables("a\n"), Error);
}
