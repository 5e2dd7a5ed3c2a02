#include <doctest.h>

#include <cmath>

#include "syllab/crf.hpp"
#include "syllab/error.hpp"
#include "syllab/metrics.hpp"
#include "syllab/rng.hpp"

using namespace syllab;
using namespace syllab::crf;

namespace {

Dataset tiny() {
  Dataset ds;
  for (const char* w : {"ba-ko-te", "ka-ti", "lo-ba", "ta-ko-bi", "kot"}) ds.entries.push_back(make_word(w));
  return ds;
}

void randomize(CrfModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : m.theta()) v = rng.uniform() * 2.0 - 1.0;
}

}  // namespace

TEST_CASE("feature templates") {
  const std::vector<Word> words{U"kat"};
  FeatureExtractor fx(Alphabet::from_words(words), 6);
  CHECK(fx.left() == 2);
  CHECK(fx.right() == 3);
  const auto keys = fx.keys(U"kat");
  REQUIRE(keys.size() == 3);
  CHECK(keys[0].size() == 22);  // 21 n-grams + bias
  std::vector<std::string> shown;
  for (const auto& k : keys[0]) shown.push_back(fx.describe(k));
  CHECK(std::find(shown.begin(), shown.end(), "-2..3:^^kat$") != shown.end());
  CHECK(std::find(shown.begin(), shown.end(), "0..0:k") != shown.end());
  CHECK(fx.keys(U"kat") == keys);
  CHECK(fx.keys(U"x").size() == 1);
  CHECK(std::find(fx.keys(U"x")[0].begin(), fx.keys(U"x")[0].end(), keys[0][0]) != fx.keys(U"x")[0].end());
}

TEST_CASE("zero weights") {
  CrfModel m(tiny(), 6);
  CHECK(m.log_partition(U"bakote") == doctest::Approx(6 * std::log(2.0)).epsilon(1e-12));
  CHECK(m.viterbi(U"bakote").count() == 0);
}

TEST_CASE("marginals and bounds") {
  CrfModel m(tiny(), 6);
  randomize(m, 4);
  const Word w = U"takobi";
  const auto e = m.emissions(w);
  std::vector<double> node(e.size());
  chain::Transitions<double> edge;
  chain::marginals<double>(e, m.transitions(), node, edge);
  for (std::size_t t = 0; t < w.size(); ++t) CHECK(std::abs(node[2 * t] + node[2 * t + 1] - 1.0) < 1e-9);
  CHECK(m.log_partition(w) >= m.score(w, m.viterbi(w)));

  // Shifting both labels' emission at one position leaves decoding unchanged.
  auto shifted = e;
  shifted[4] += 3.0;
  shifted[5] += 3.0;
  CHECK(chain::viterbi<double>(shifted, m.transitions()) == m.viterbi(w).bits());
}

TEST_CASE("gradient matches finite differences at zero") {
  const auto ds = tiny();
  CrfModel m(ds, 6);
  CrfObjective obj(m, ds, 1.0);
  std::vector<double> theta(obj.dimension(), 0.0), grad(obj.dimension()), tmp(obj.dimension());
  obj.evaluate(theta, grad);
  const double h = 1e-5;
  for (std::size_t i = 0; i < theta.size(); i += 7) {
    auto p = theta, q = theta;
    p[i] += h;
    q[i] -= h;
    const double fd = (obj.evaluate(p, tmp) - obj.evaluate(q, tmp)) / (2 * h);
    CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("training decreases the objective and fits the rule") {
  CrfTrainReport rep;
  const auto m = train_crf(tiny(), {}, &rep);
  for (std::size_t k = 1; k < rep.objective.size(); ++k) CHECK(rep.objective[k] <= rep.objective[k - 1]);
  CHECK(m.viterbi(U"bakote").to_string() == "010100");
  CHECK_THROWS_AS(train_crf(Dataset{}, {}), Error);
}

TEST_CASE("thread count does not change the result") {
  const auto ds = gen_synthetic({"cv", 150, 8});
  CrfHyper h;
  h.max_iterations = 15;
  h.threads = 1;
  const auto a = train_crf(ds, h);
  h.threads = 4;
  const auto b = train_crf(ds, h);
  CHECK(a.to_model_file().serialize() == b.to_model_file().serialize());
}

TEST_CASE("model file round trip") {
  const auto ds = gen_synthetic({"cv", 150, 8});
  CrfHyper h;
  h.max_iterations = 20;
  const auto m = train_crf(ds, h);
  const auto bytes = m.to_model_file().serialize();
  const auto back = CrfModel::from_model_file(ModelFile::parse(bytes));
  CHECK(back.to_model_file().serialize() == bytes);
  for (const auto& e : gen_synthetic({"cv", 100, 99}).entries) CHECK(back.viterbi(e.orth) == m.viterbi(e.orth));
  CHECK(m.viterbi(U"bazq").size() == 4);
  CHECK_THROWS_AS(CrfModel::from_model_file(ModelFile("liang")), Error);
}
