#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "syllab/error.hpp"
#include "syllab/liang.hpp"
#include "syllab/metrics.hpp"
#include "syllab/rng.hpp"

using namespace syllab;
using namespace syllab::liang;

namespace {

// Slides every pattern over ".word." and keeps the per-slot maximum.
BoundaryVector slide_oracle(std::u32string_view word, const std::vector<Pattern>& patterns) {
  const Word dotted = U"." + Word(word) + U".";
  std::vector<int> slot(dotted.size() + 1, 0);
  for (const auto& p : patterns) {
    for (std::size_t at = 0; at + p.letters.size() <= dotted.size(); ++at) {
      if (dotted.compare(at, p.letters.size(), p.letters) != 0) continue;
      for (std::size_t k = 0; k < p.weights.size(); ++k) slot[at + k] = std::max<int>(slot[at + k], p.weights[k]);
    }
  }
  BoundaryVector out(word.size());
  // Slot between word letters i and i+1 is dotted slot i + 2.
  for (std::size_t i = 0; i + 1 < word.size(); ++i) out.set(i, slot[i + 2] % 2 == 1);
  return out;
}

}  // namespace

TEST_CASE("tex tokens") {
  const auto p = Pattern::from_tex("1na");
  CHECK(p.letters == U"na");
  CHECK(p.weights == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(Pattern::from_tex(".ge2s").to_tex() == ".ge2s");
  CHECK(Pattern::from_tex("x0x9").weights == std::vector<std::uint8_t>{0, 0, 9});
  CHECK_THROWS_AS(Pattern::from_tex("12a"), Error);
  CHECK_THROWS_AS(Pattern::from_tex(""), Error);
}

TEST_CASE("application") {
  PatternSet empty;
  CHECK(apply_patterns(U"bakote", empty).count() == 0);

  PatternSet ps;
  ps.insert(Pattern::from_tex("o1ko"));
  CHECK(apply_patterns(U"bakote", ps) == slide_oracle(U"bakote", {Pattern::from_tex("o1ko")}));

  PatternSet eu;
  eu.insert(Pattern::from_tex("e1u"));
  CHECK(apply_patterns(U"leuk", eu).to_string() == "0100");
  eu.insert(Pattern::from_tex("e2u"));
  CHECK(apply_patterns(U"leuk", eu).to_string() == "0000");

  PatternSet edge;
  edge.insert(Pattern::from_tex("1a1"));
  CHECK(apply_patterns(U"a", edge).to_string() == "0");
}

TEST_CASE("application matches sliding oracle and ignores insertion order") {
  Rng rng(3);
  const std::u32string letters = U"abk.";
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Pattern> pats;
    const auto n = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      Pattern p;
      const auto len = 1 + rng.below(3);
      for (std::size_t k = 0; k < len; ++k) p.letters.push_back(letters[rng.below(3)]);
      if (rng.below(3) == 0) p.letters.insert(p.letters.begin(), U'.');
      p.weights.assign(p.letters.size() + 1, 0);
      for (auto& w : p.weights) w = static_cast<std::uint8_t>(rng.below(2) ? rng.below(10) : 0);
      pats.push_back(p);
    }
    Word word;
    const auto wl = 1 + rng.below(8);
    for (std::size_t k = 0; k < wl; ++k) word.push_back(letters[rng.below(3)]);

    PatternSet fwd, rev;
    for (const auto& p : pats) fwd.insert(p);
    for (auto it = pats.rbegin(); it != pats.rend(); ++it) rev.insert(*it);
    const auto got = apply_patterns(word, fwd);
    CHECK(got == apply_patterns(word, rev));
    // The oracle on the merged set equals the oracle on the raw list.
    CHECK(got == slide_oracle(word, pats));
  }
}

TEST_CASE("config parsing") {
  const auto cfg = PatgenConfig::parse("1-3:1,1,2; 2-4:2,1,2");
  REQUIRE(cfg.levels.size() == 2);
  CHECK(cfg.levels[1].min_length == 2);
  CHECK(cfg.levels[1].good_weight == 2);
  CHECK(PatgenConfig::parse(cfg.to_string()).to_string() == cfg.to_string());
  CHECK(PatgenConfig::defaults().levels.size() == 4);
  CHECK_THROWS_AS(PatgenConfig::parse("1-3:0,1,1"), Error);
  CHECK_THROWS_AS(PatgenConfig::parse("3-1:1,1,1"), Error);
  CHECK_THROWS_AS(PatgenConfig::parse(""), Error);
}

TEST_CASE("generation on one word") {
  Dataset ds;
  ds.entries = {make_word("e-land")};
  const auto ps = generate_patterns(ds, PatgenConfig::parse("1-2:1,1,1"));
  CHECK(apply_patterns(U"eland", ps).to_string() == "10000");
  CHECK_THROWS_AS(generate_patterns(Dataset{}, PatgenConfig::defaults()), Error);
}

TEST_CASE("generation is deterministic and levels refine") {
  const auto ds = gen_synthetic({"vccv", 2000, 9});
  std::vector<LevelStats> stats;
  const auto a = generate_patterns(ds, PatgenConfig::defaults(), &stats);
  const auto b = generate_patterns(ds, PatgenConfig::defaults());
  CHECK(a == b);
  REQUIRE(stats.size() == 4);
  for (std::size_t k = 1; k < stats.size(); ++k) {
    if (stats[k].level % 2 == 1) {
      CHECK(stats[k].fn <= stats[k - 1].fn);
    } else {
      CHECK(stats[k].fp <= stats[k - 1].fp);
    }
  }
  EvalAccumulator acc;
  for (const auto& e : ds.entries) acc.add(e.orth_bounds, apply_patterns(e.orth, a));
  CHECK(acc.report().ower_pct < 5.0);
}

TEST_CASE("tex round trip") {
  const auto ds = gen_synthetic({"cv", 200, 2});
  const auto ps = generate_patterns(ds, PatgenConfig::defaults());
  std::stringstream buf;
  save_tex(ps, buf);
  const auto back = load_tex(buf);
  CHECK(back == ps);
  CHECK(parse_tex("% comment\n\\patterns{\n1na .ge2s\n}\n").size() == 2);
  CHECK_THROWS_AS(parse_tex("a1b c22"), Error);
}

TEST_CASE("tuning picks the candidate with fewest validation errors") {
  const auto ds = gen_synthetic({"cv", 600, 4});
  const auto folds = split(ds, {0.9, 0, 1});
  const auto grid = tuning_grid();
  REQUIRE(grid.size() >= 2);
  CHECK(grid.front().to_string() == PatgenConfig::defaults().to_string());
  std::vector<std::size_t> errors;
  for (const auto& cfg : grid) {
    const auto ps = generate_patterns(folds[0].train, cfg);
    std::size_t e = 0;
    for (const auto& w : folds[0].test.entries) e += apply_patterns(w.orth, ps) != w.orth_bounds;
    errors.push_back(e);
  }
  const auto best = std::min_element(errors.begin(), errors.end()) - errors.begin();
  CHECK(tune_patgen(ds, grid).to_string() == grid[best].to_string());
  CHECK(tune_patgen(ds, {grid[1]}).to_string() == grid[1].to_string());
  CHECK_THROWS_AS(tune_patgen(ds, {}), Error);
  CHECK_THROWS_AS(tune_patgen(Dataset{}, grid), Error);
}
