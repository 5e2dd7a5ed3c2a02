#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "syllab/error.hpp"
#include "syllab/fusion.hpp"
#include "syllab/rng.hpp"

using namespace syllab;
using namespace syllab::fusion;
using nn::Channel;
using nn::NeuralConfig;
using nn::NeuralModel;

namespace {

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() * 2.0 - 1.0;
  return m;
}

NeuralConfig trunk_config() {
  NeuralConfig c;
  c.token_len = 12;
  c.embed_dim = 4;
  c.conv_filters = 3;
  c.lstm_units = 4;
  c.seed = 5;
  return c;
}

struct AppendixRow {
  std::string orth, phon, orth_only, combined;
};

std::vector<AppendixRow> appendix_rows() {
  std::ifstream in(std::filesystem::path(SYLLAB_DATA_DIR) / "appendix_b.tsv");
  REQUIRE(in.good());
  std::vector<AppendixRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    AppendixRow r;
    std::getline(fields, r.orth, '\t');
    std::getline(fields, r.phon, '\t');
    std::getline(fields, r.orth_only, '\t');
    std::getline(fields, r.combined, '\t');
    rows.push_back(r);
  }
  return rows;
}

// Phonetic annotation is irrelevant to the head; one unbroken syllable will do.
Dataset appendix_dataset() {
  Dataset ds;
  for (const auto& r : appendix_rows()) ds.entries.push_back(make_word(r.combined, r.phon));
  return ds;
}

std::pair<NeuralModel, NeuralModel> untrained_trunks(const Dataset& ds) {
  std::vector<Word> orth, phon;
  for (const auto& e : ds.entries) {
    orth.push_back(e.orth);
    phon.push_back(*e.phon);
  }
  return {NeuralModel(trunk_config(), Channel::Orth, Alphabet::from_words(orth)),
          NeuralModel(trunk_config(), Channel::Phon, Alphabet::from_words(phon))};
}

}  // namespace

TEST_CASE("attention matches a direct double loop") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lo = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto lp = static_cast<Eigen::Index>(1 + rng.below(7));
    const Eigen::Index d = 5;
    const auto a = random_matrix(lo, d, rng);
    const auto b = random_matrix(lp, d, rng);
    std::vector<std::uint8_t> mask_b(static_cast<std::size_t>(lp), 1);
    for (auto& m : mask_b) m = rng.uniform() < 0.3 ? 0 : 1;
    mask_b[0] = 1;
    const bool scaled = trial % 2 == 1;
    Matrix<double> w;
    const auto ctx = attend<double>(a, b, {}, mask_b, scaled, &w);
    for (Eigen::Index i = 0; i < lo; ++i) {
      double total = 0;
      std::vector<double> e(static_cast<std::size_t>(lp), 0.0);
      for (Eigen::Index j = 0; j < lp; ++j) {
        if (!mask_b[static_cast<std::size_t>(j)]) continue;
        double s = 0;
        for (Eigen::Index k = 0; k < d; ++k) s += a(i, k) * b(j, k);
        if (scaled) s /= std::sqrt(static_cast<double>(d));
        e[static_cast<std::size_t>(j)] = std::exp(s);
        total += e[static_cast<std::size_t>(j)];
      }
      double wsum = 0;
      for (Eigen::Index j = 0; j < lp; ++j) {
        wsum += w(i, j);
        if (!mask_b[static_cast<std::size_t>(j)]) CHECK(w(i, j) == 0.0);
      }
      CHECK(std::abs(wsum - 1.0) < 1e-9);
      for (Eigen::Index k = 0; k < d; ++k) {
        double c = 0;
        for (Eigen::Index j = 0; j < lp; ++j) c += e[static_cast<std::size_t>(j)] / total * b(j, k);
        CHECK(std::abs(ctx(i, k) - c) < 1e-9);
      }
    }
  }
}

TEST_CASE("attention edge cases") {
  Rng rng(4);
  const auto a = random_matrix(4, 3, rng);
  const auto single = random_matrix(1, 3, rng);
  const auto ctx = attend<double>(a, single);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK((ctx.row(i) - single.row(0)).norm() == doctest::Approx(0.0));

  Matrix<double> uniform(5, 3);
  for (Eigen::Index j = 0; j < 5; ++j) uniform.row(j) << 0.25, -1.0, 2.0;
  const auto cu = attend<double>(a, uniform);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK((cu.row(i) - uniform.row(0)).norm() < 1e-12);

  const std::vector<std::uint8_t> none(5, 0);
  CHECK_THROWS_AS(attend<double>(a, uniform, {}, none), Error);
  const std::vector<std::uint8_t> mask_a{1, 0, 1, 1};
  const auto cm = attend<double>(a, uniform, mask_a);
  CHECK(cm.row(1).norm() == 0.0);
  CHECK_THROWS_AS(attend<double>(a, random_matrix(2, 4, rng)), Error);
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(8);
  const int width = 6;
  const auto p = init_head<double>(width, 4, 21);
  std::vector<Matrix<double>> inputs{random_matrix(5, width, rng), random_matrix(3, width, rng),
                                     random_matrix(6, width, rng)};
  const std::vector<BoundaryVector> gold{BoundaryVector::from_string("01010"), BoundaryVector::from_string("100"),
                                         BoundaryVector::from_string("001000")};
  HeadParams<double> grad;
  head_loss<double>(p, inputs, gold, &grad);

  const double h = 1e-5;
  auto probe = p;
  std::vector<Matrix<double>*> blocks;
  probe.for_each([&](const char*, Matrix<double>& m) { blocks.push_back(&m); });
  std::vector<const Matrix<double>*> analytic;
  std::vector<std::string> names;
  grad.for_each([&](const char* n, const Matrix<double>& m) {
    analytic.push_back(&m);
    names.emplace_back(n);
  });
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    Matrix<double> fd(blocks[k]->rows(), blocks[k]->cols());
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      double& v = blocks[k]->data()[i];
      const double saved = v;
      v = saved + h;
      const double up = head_loss<double>(probe, inputs, gold);
      v = saved - h;
      const double down = head_loss<double>(probe, inputs, gold);
      v = saved;
      fd.data()[i] = (up - down) / (2 * h);
    }
    INFO(names[k]);
    const double denom = std::max({analytic[k]->norm(), fd.norm(), 1e-7});
    CHECK((*analytic[k] - fd).norm() / denom < 1e-4);
  }
}

TEST_CASE("head loss of a zero head is L log 2 per word") {
  auto p = init_head<double>(3, 2, 1);
  p.for_each([](const char*, Matrix<double>& m) { m.setZero(); });
  Rng rng(2);
  std::vector<Matrix<double>> inputs{random_matrix(4, 3, rng), random_matrix(2, 3, rng)};
  const std::vector<BoundaryVector> gold{BoundaryVector(4), BoundaryVector(2)};
  CHECK(head_loss<double>(p, inputs, gold) == doctest::Approx(3.0 * std::log(2.0)));
}

TEST_CASE("config checks") {
  FusionConfig c;
  CHECK(c.input_width(8, 8) == 16);
  c.combine = Combine::Sum;
  CHECK(c.input_width(8, 8) == 8);
  CHECK_THROWS_AS(c.validate(8, 6), Error);
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  const FusionConfig d;
  CHECK(FusionConfig::from_json(d.to_json()).to_json() == d.to_json());
  CHECK_THROWS_AS(combine_from_string("product"), Error);
}

TEST_CASE("appendix fixture is consistent") {
  const auto rows = appendix_rows();
  CHECK(rows.size() == 9);
  for (const auto& r : rows) {
    CHECK(encode_boundaries_utf8(r.orth_only).word == from_utf8(r.orth));
    CHECK(encode_boundaries_utf8(r.combined).word == from_utf8(r.orth));
    CHECK(r.orth_only != r.combined);
  }
}

TEST_CASE("fusion fits the appendix pairs with frozen trunks") {
  const auto ds = appendix_dataset();
  const auto [a, b] = untrained_trunks(ds);
  const auto sum_a = a.checksum();
  const auto sum_b = b.checksum();
  FusionConfig cfg;
  cfg.lstm_units = 8;
  cfg.epochs_max = 200;
  cfg.batch_size = 9;
  cfg.learning_rate = 0.02;
  cfg.dropout_p = 0.0;
  cfg.seed = 3;
  const auto r = train_fusion(ds, ds, cfg, a, b);
  CHECK(a.checksum() == sum_a);
  CHECK(b.checksum() == sum_b);
  CHECK(r.model.trunk_a().checksum() == sum_a);
  CHECK(r.model.trunk_b().checksum() == sum_b);
  CHECK(r.val_ower[static_cast<std::size_t>(r.best_epoch - 1)] == 0.0);
  CHECK(decode_boundaries_utf8(U"leptosoom", r.model.predict(U"leptosoom", U"lEpto'som")) == "lep-to-soom");
  for (const auto& e : ds.entries) CHECK(r.model.predict(e.orth, *e.phon) == e.orth_bounds);

  const auto once = r.model.scores(std::vector<Word>{U"suede"}, std::vector<Word>{U"sy'w)d@"});
  const auto twice = r.model.scores(std::vector<Word>{U"suede"}, std::vector<Word>{U"sy'w)d@"});
  CHECK(once.front() == twice.front());
}

TEST_CASE("fusion output length follows the orthography") {
  Dataset ds;
  ds.entries = {make_word("pro-te-i-ne", "pro-te-'jin-@")};
  const auto [a, b] = untrained_trunks(ds);
  FusionConfig cfg;
  cfg.lstm_units = 4;
  const FusionModel m(cfg, a, b);
  CHECK(m.predict(U"proteine", U"prote'jin@").size() == 8);
  CHECK(m.scores(std::vector<Word>{U"proteine"}, std::vector<Word>{U"prote'jin@"}).front().rows() == 8);
  CHECK_THROWS_AS(m.predict(U"proteine", U""), Error);
}

TEST_CASE("fusion training is deterministic and the model file round trips") {
  const auto ds = appendix_dataset();
  const auto [a, b] = untrained_trunks(ds);
  FusionConfig cfg;
  cfg.lstm_units = 4;
  cfg.epochs_max = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const auto r1 = train_fusion(ds, ds, cfg, a, b);
  const auto r2 = train_fusion(ds, ds, cfg, a, b);
  CHECK(r1.train_loss == r2.train_loss);

  const auto dir = std::filesystem::temp_directory_path() / "syllab_fusion_test";
  std::filesystem::create_directories(dir);
  a.to_model_file().save(dir / "a.model");
  b.to_model_file().save(dir / "b.model");
  const auto file = r1.model.to_model_file(dir / "a.model", dir / "b.model");
  CHECK(file.serialize() == r2.model.to_model_file(dir / "a.model", dir / "b.model").serialize());
  const auto back = FusionModel::from_model_file(ModelFile::parse(file.serialize()));
  CHECK(back.predict(ds) == r1.model.predict(ds));

  NeuralModel other(trunk_config(), Channel::Phon, Alphabet(U"xyz"));
  other.to_model_file().save(dir / "b.model");
  CHECK_THROWS_AS(FusionModel::from_model_file(file), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fusion preconditions") {
  const auto ds = appendix_dataset();
  const auto [a, b] = untrained_trunks(ds);
  FusionConfig cfg;
  cfg.lstm_units = 4;
  cfg.epochs_max = 1;
  Dataset orth_only;
  orth_only.entries = {make_word("ka-to")};
  try {
    train_fusion(orth_only, ds, cfg, a, b);
    FAIL("expected MissingPhonetic");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingPhonetic);
  }
  CHECK_THROWS_AS(train_fusion(Dataset{}, ds, cfg, a, b), Error);
  CHECK_THROWS_AS(FusionModel(cfg, b, a), Error);
  const FusionModel m(cfg, a, b);
  CHECK_THROWS_AS(m.predict(orth_only), Error);
}
