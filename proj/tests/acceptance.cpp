// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "syllab/bench.hpp"
#include "syllab/brandt_corstius.hpp"
#include "syllab/crf.hpp"
#include "syllab/fusion.hpp"
#include "syllab/liang.hpp"
#include "syllab/metrics.hpp"
#include "syllab/neural.hpp"
#include "syllab/rng.hpp"

using namespace syllab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Status { Pass, Fail, Skip } status = Fail;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Outcome::Fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.status == Outcome::Pass && secs >= limit_s) {
    o.status = Outcome::Fail;
    o.detail += "; over the " + std::to_string(static_cast<int>(limit_s)) + " s budget";
  }
  const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
  if (o.status == Outcome::Fail) ++failures;
  std::cout << tag << "  " << std::setw(2) << id << "  " << name << ": " << o.detail << "  (" << std::fixed
            << std::setprecision(2) << secs << " s)" << std::endl;
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)}; }

// 1 ---------------------------------------------------------------------------

Outcome metric_fidelity() {
  const auto gold = encode_boundaries_utf8("we-reld-be-ker");
  const auto pred = encode_boundaries_utf8("wereld-beker");
  EvalAccumulator acc;
  acc.add(gold.bounds, pred.bounds);
  const auto r = acc.report();
  // 11 letter slots, two missed breaks out of three gold breaks.
  const double oler = 100.0 * 2 / 11, her = 100.0 * 2 / 3;
  const bool ok = std::abs(r.oler_pct - oler) < 1e-3 && std::abs(r.her_pct - her) < 1e-3 &&
                  std::abs(r.ower_pct - 100.0) < 1e-3 && std::abs(round3(r.oler_pct) - 18.182) < 1e-9 &&
                  std::abs(round3(r.her_pct) - 66.667) < 1e-9;
  return verdict(ok, "OLER " + fmt(r.oler_pct) + " HER " + fmt(r.her_pct) + " OWER " + fmt(r.ower_pct));
}

// 2 ---------------------------------------------------------------------------

Outcome metric_oracle() {
  Rng rng(2024);
  std::vector<BoundaryVector> gold, pred;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t len = 1 + rng.below(14);
    BoundaryVector g(len), p(len);
    for (std::size_t t = 0; t + 1 < len; ++t) {
      g.set(t, rng.uniform() < 0.3);
      p.set(t, rng.uniform() < 0.3);
    }
    if (rng.uniform() < 0.2) p = g;
    gold.push_back(g);
    pred.push_back(p);
  }
  EvalAccumulator acc;
  for (std::size_t i = 0; i < gold.size(); ++i) acc.add(gold[i], pred[i]);
  const auto r = acc.report();

  double tp = 0, fp = 0, fn = 0, tn = 0, wrong_words = 0, letters = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    bool wrong = false;
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      const bool g = gold[i][t], p = pred[i][t];
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
      tn += !g && !p;
      wrong = wrong || g != p;
      ++letters;
    }
    wrong_words += wrong;
  }
  const double ower = 100 * wrong_words / gold.size();
  const double oler = 100 * (fp + fn) / letters;
  const double her = 100 * fn / (tp + fn);
  const double prec = 100 * tp / (tp + fp);
  const double rec = 100 * tp / (tp + fn);
  const double f1 = 2 * prec * rec / (prec + rec);
  const double want[] = {ower, oler, her, prec, rec, f1};
  bool ok = r.counts.tp == tp && r.counts.fp == fp && r.counts.fn == fn && r.counts.tn == tn;
  double worst = 0;
  for (int k = 0; k < 6; ++k) {
    const double got = metric_value(r, kMetricNames[k]);
    worst = std::max(worst, std::abs(got - want[k]));
    ok = ok && round3(got) == round3(want[k]) && std::abs(got - want[k]) < 1e-9;
  }
  ok = ok && r.recall_pct == 100.0 - r.her_pct;
  return verdict(ok, "10000 pairs, max deviation " + sci(worst) + ", R = 100 - HER " +
                         (r.recall_pct == 100.0 - r.her_pct ? "holds" : "broken"));
}

// 3 ---------------------------------------------------------------------------

Outcome crf_exactness() {
  Dataset train;
  for (const char* w : {"ba-ko-te", "ka-ti", "lo-ba", "ta-ko-bi", "kot", "stra-mi", "pel-ko"}) {
    train.entries.push_back(make_word(w));
  }
  crf::CrfModel model(train, 6);
  Rng rng(77);
  for (auto& v : model.theta()) v = (rng.uniform() * 2.0 - 1.0) * 1.5;
  const std::u32string letters = U"abeiklmoprstx";
  const auto trans = model.transitions();
  double worst = 0;
  int viterbi_ok = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    const std::size_t len = 1 + rng.below(12);
    Word w;
    for (std::size_t t = 0; t < len; ++t) w += letters[rng.below(letters.size())];
    const auto e = model.emissions(w);
    double log_z = -INFINITY, best = -INFINITY;
    std::uint32_t arg = 0;
    for (std::uint32_t mask = 0; mask < (1u << len); ++mask) {
      double s = 0;
      int prev = -1;
      for (std::size_t t = 0; t < len; ++t) {
        const int y = (mask >> t) & 1u;
        s += e[2 * t + static_cast<std::size_t>(y)];
        if (prev >= 0) s += trans[static_cast<std::size_t>(prev)][static_cast<std::size_t>(y)];
        prev = y;
      }
      log_z = std::max(log_z, s) + std::log1p(std::exp(-std::abs(log_z - s)));
      if (s > best) {
        best = s;
        arg = mask;
      }
    }
    worst = std::max(worst, std::abs(model.log_partition(w) - log_z));
    const auto v = model.viterbi(w);
    std::uint32_t got = 0;
    for (std::size_t t = 0; t < len; ++t) got |= static_cast<std::uint32_t>(v[t]) << t;
    viterbi_ok += got == arg;
  }
  return verdict(worst < 1e-9 && viterbi_ok == n, "max |log Z - enumeration| " + sci(worst) +
                                                      ", Viterbi agrees on " + std::to_string(viterbi_ok) + "/" +
                                                      std::to_string(n));
}

// 4 ---------------------------------------------------------------------------

template <typename Params, typename Loss>
double worst_block_error(Params p, const Params& grad, Loss loss, std::string& worst_name) {
  const double h = 1e-5;
  std::vector<nn::Matrix<double>*> blocks;
  std::vector<std::string> names;
  p.for_each([&](const auto& name, nn::Matrix<double>& m) {
    blocks.push_back(&m);
    names.emplace_back(name);
  });
  std::vector<const nn::Matrix<double>*> analytic;
  grad.for_each([&](const auto&, const nn::Matrix<double>& m) { analytic.push_back(&m); });
  double worst = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    nn::Matrix<double> fd(blocks[k]->rows(), blocks[k]->cols());
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      double& v = blocks[k]->data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss(p);
      v = saved - h;
      const double down = loss(p);
      v = saved;
      fd.data()[i] = (up - down) / (2 * h);
    }
    // Absolute floor: blocks whose true gradient is zero keep only rounding noise.
    const double denom = std::max({analytic[k]->norm(), fd.norm(), 1e-7});
    const double err = (*analytic[k] - fd).norm() / denom;
    if (err > worst) {
      worst = err;
      worst_name = names[k];
    }
  }
  return worst;
}

Outcome gradient_checks() {
  nn::NeuralConfig cfg;
  cfg.token_len = 8;
  cfg.embed_dim = 4;
  cfg.conv_filters = 3;
  cfg.lstm_units = 5;
  cfg.seed = 17;
  const Alphabet abc(U"abcdeklmnot");
  const auto p = nn::init_params<double>(cfg, abc.size(), 9);
  const std::vector<Word> words{U"abcde", U"kat", U"lemon"};
  const std::vector<BoundaryVector> gold{BoundaryVector::from_string("01000"), BoundaryVector::from_string("100"),
                                         BoundaryVector::from_string("01000")};
  const auto wt = nn::tensorize(words, abc, cfg);
  auto bn = nn::init_bn_stats<double>(cfg);
  nn::NeuralParams<double> grad;
  nn::loss_and_gradient<double>(cfg, p, bn, wt, gold, nn::Mode::Train, 3, &grad);
  std::string nn_worst_name;
  const double nn_worst = worst_block_error(p, grad, [&](const nn::NeuralParams<double>& q) {
    auto fresh = nn::init_bn_stats<double>(cfg);
    return nn::loss_and_gradient<double>(cfg, q, fresh, wt, gold, nn::Mode::Train, 3, nullptr);
  }, nn_worst_name);

  Rng rng(8);
  const int width = 6;
  const auto head = fusion::init_head<double>(width, 4, 21);
  std::vector<nn::Matrix<double>> inputs;
  for (int len : {5, 3, 6}) {
    nn::Matrix<double> m(len, width);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() * 2 - 1;
    inputs.push_back(m);
  }
  const std::vector<BoundaryVector> head_gold{BoundaryVector::from_string("01010"), BoundaryVector::from_string("100"),
                                              BoundaryVector::from_string("001000")};
  fusion::HeadParams<double> head_grad;
  fusion::head_loss<double>(head, inputs, head_gold, &head_grad);
  std::string head_worst_name;
  const double head_worst = worst_block_error(head, head_grad, [&](const fusion::HeadParams<double>& q) {
    return fusion::head_loss<double>(q, inputs, head_gold);
  }, head_worst_name);

  return verdict(nn_worst < 1e-4 && head_worst < 1e-4,
                 "neural worst " + sci(nn_worst) + " (" + nn_worst_name + "), fusion head worst " +
                     sci(head_worst) + " (" + head_worst_name + ")");
}

// 5 ---------------------------------------------------------------------------

std::string shape_text(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

Outcome shapes() {
  nn::NeuralConfig cfg;
  const Alphabet a(U"abcdefghijklmnopqrstuvwxyz");
  const auto p = nn::init_params<float>(cfg, a.size(), 1);
  auto bn = nn::init_bn_stats<float>(cfg);
  Rng rng(5);
  std::vector<Word> words;
  for (int i = 0; i < 64; ++i) {
    Word w;
    const std::size_t len = 1 + rng.below(34);
    for (std::size_t t = 0; t < len; ++t) w += static_cast<char32_t>(U'a' + rng.below(26));
    words.push_back(w);
  }
  words[0] = Word(34, U'a');
  nn::ForwardCache<float> cache;
  nn::forward<float>(cfg, p, bn, nn::tensorize(words, a, cfg), nn::Mode::Train, 0, cache);
  const auto e = cache.embedded_shape(), f = cache.flat_shape(), l = cache.lstm_shape();
  const bool ok = e == std::vector<std::size_t>{64, 34, 5, 128} && f == std::vector<std::size_t>{64, 34, 200} &&
                  l == std::vector<std::size_t>{64, 34, 256};
  return verdict(ok, shape_text(e) + " " + shape_text(f) + " " + shape_text(l));
}

// 6 ---------------------------------------------------------------------------

double accuracy(const std::vector<BoundaryVector>& pred, const Dataset& ds) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) right += pred[i] == ds.entries[i].orth_bounds;
  return 100.0 * static_cast<double>(right) / static_cast<double>(ds.size());
}

nn::NeuralConfig small_neural(std::uint64_t seed, int epochs) {
  nn::NeuralConfig c;
  c.embed_dim = 16;
  c.conv_filters = 16;
  c.lstm_units = 32;
  c.batch_size = 32;
  c.learning_rate = 0.005;
  c.epochs_max = epochs;
  c.seed = seed;
  return c;
}

Outcome learning_sanity() {
  const std::uint64_t seed = 1;
  const auto ds = gen_synthetic({"cv", 2500, seed});
  const auto folds = split(ds, {0.8, seed, 1});
  const Dataset& train = folds[0].train;
  const Dataset& test = folds[0].test;

  const auto crf_model = crf::train_crf(train, {});
  std::vector<BoundaryVector> pred;
  for (const auto& e : test.entries) pred.push_back(crf_model.viterbi(e.orth));
  const double crf_acc = accuracy(pred, test);

  const auto inner = split(train, {0.9, seed + 100, 1});
  const auto nn_run = nn::train_neural(inner[0].train, inner[0].test, small_neural(seed, 20), nn::Channel::Orth);
  std::vector<Word> words;
  for (const auto& e : test.entries) words.push_back(e.orth);
  const double nn_acc = accuracy(nn_run.model.predict(words), test);

  const auto levels = liang::tune_patgen(train, liang::tuning_grid(), 0.9, seed);
  const auto ps = liang::generate_patterns(train, levels);
  pred.clear();
  for (const auto& e : test.entries) pred.push_back(liang::apply_patterns(e.orth, ps));
  const double liang_acc = accuracy(pred, test);

  return verdict(crf_acc >= 99.0 && nn_acc >= 99.0 && liang_acc >= 95.0,
                 std::to_string(train.size()) + " train / " + std::to_string(test.size()) + " test: CRF " +
                     fmt(crf_acc, 1) + "%, neural " + fmt(nn_acc, 1) + "%, Liang " + fmt(liang_acc, 1) +
                     "% (levels " + levels.to_string() + ")");
}

// 7 ---------------------------------------------------------------------------

Outcome fusion_benefit() {
  int wins = 0;
  bool frozen = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto ds = gen_synthetic({"cv", 1500, seed, true, 0.5});
    const auto folds = split(ds, {0.8, seed, 1});
    const auto inner = split(folds[0].train, {0.9, seed + 100, 1});
    const Dataset& train = inner[0].train;
    const Dataset& val = inner[0].test;
    const auto cfg = small_neural(seed, 15);
    const auto a = nn::train_neural(train, val, cfg, nn::Channel::Orth);
    const auto b = nn::train_neural(train, val, cfg, nn::Channel::Phon);
    const auto sum_a = a.model.checksum(), sum_b = b.model.checksum();
    fusion::FusionConfig fc;
    fc.lstm_units = 32;
    fc.epochs_max = 15;
    fc.batch_size = 32;
    fc.learning_rate = 0.005;
    fc.seed = seed;
    const auto f = fusion::train_fusion(train, val, fc, a.model, b.model);
    frozen = frozen && a.model.checksum() == sum_a && b.model.checksum() == sum_b &&
             f.model.trunk_a().checksum() == sum_a && f.model.trunk_b().checksum() == sum_b;
    const double orth_ower = nn::word_error_pct(a.model, val);
    const double fusion_ower = fusion::word_error_pct(f.model, val);
    wins += fusion_ower < orth_ower;
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + " orth " + fmt(orth_ower) +
              " vs fusion " + fmt(fusion_ower);
  }
  return verdict(wins == 3 && frozen, std::to_string(wins) + "/3 lower (" + detail + "), trunks " +
                                          (frozen ? "unchanged" : "CHANGED"));
}

// 8 ---------------------------------------------------------------------------

Outcome bc_regression() {
  const std::pair<const char*, const char*> cases[] = {
      {"loonbrief", "loon-brief"}, {"eland", "e-land"},         {"jien", "jien"},
      {"leum", "leum"},            {"atoomenergie", "a-toom-e-ner-gie"}, {"gloria", "glo-ri-a"},
      {"aliënatie", "a-li-ë-na-tie"}, {"bakoven", "bak-o-ven"}, {"bioscoop", "bi-o-scoop"},
      {"ruïne", "ru-ï-ne"},
  };
  int ok = 0;
  std::string misses;
  for (const auto& [word, want] : cases) {
    const Word w = normalize(word);
    const auto got = decode_boundaries_utf8(w, bc::syllabify(w, bc::default_tables()));
    if (got == want) {
      ++ok;
    } else {
      misses += std::string(" ") + word + "->" + got;
    }
  }
  const int n = static_cast<int>(std::size(cases));
  return verdict(ok == n, std::to_string(ok) + "/" + std::to_string(n) + " match" + misses);
}

// 9 ---------------------------------------------------------------------------

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "syllab_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_tsv(gen_synthetic({"cv", 300, 9}), dir / "cv.tsv");
  save_tsv(gen_synthetic({"cv", 200, 9, true}), dir / "paired.tsv");
  const bench::Hyper small{{"embed_dim", "8"}, {"conv_filters", "8"},     {"lstm_units", "8"},
                           {"epochs", "3"},    {"head_lstm_units", "8"}, {"head_epochs", "3"},
                           {"batch_size", "32"}};
  std::ostringstream log;
  std::string detail;
  bool ok = true;
  const std::pair<bench::EngineKind, const char*> runs[] = {{bench::EngineKind::Liang, "cv.tsv"},
                                                            {bench::EngineKind::Crf, "cv.tsv"},
                                                            {bench::EngineKind::Nn, "cv.tsv"},
                                                            {bench::EngineKind::NnPhon, "paired.tsv"},
                                                            {bench::EngineKind::Fusion, "paired.tsv"}};
  for (const auto& [kind, data] : runs) {
    const std::string name = bench::to_string(kind);
    // Fusion models name their trunk files, so both runs use the same file name.
    const auto first = dir / "a" / (name + ".model"), second = dir / "b" / (name + ".model");
    fs::create_directories(first.parent_path());
    fs::create_directories(second.parent_path());
    const bool trained = bench::cmd_train(kind, dir / data, 7, small, 0.1, first, {}, log) == 0 &&
                         bench::cmd_train(kind, dir / data, 7, small, 0.1, second, {}, log) == 0;
    bool same = trained && read_file_bytes(first) == read_file_bytes(second);
    if (kind == bench::EngineKind::Fusion && same) {
      for (const char* ext : {".orth", ".phon"}) {
        same = same && read_file_bytes(first.string() + ext) == read_file_bytes(second.string() + ext);
      }
    }
    ok = ok && same;
    detail += name + (same ? " identical, " : " DIFFERENT, ");
  }
  const auto ds = gen_synthetic({"cv", 500, 3});
  const auto s1 = split(ds, {0.9, 11, 5});
  const auto s2 = split(ds, {0.9, 11, 5});
  bool same_split = s1.size() == s2.size();
  for (std::size_t k = 0; same_split && k < s1.size(); ++k) {
    same_split = s1[k].train.entries == s2[k].train.entries && s1[k].test.entries == s2[k].test.entries;
  }
  ok = ok && same_split;
  detail += std::string("splits ") + (same_split ? "identical" : "DIFFERENT");
  fs::remove_all(dir);
  return verdict(ok, detail);
}

// 10 --------------------------------------------------------------------------

Outcome full_scale() {
  const char* path = std::getenv("SYLLAB_CELEX");
  if (!path || !*path) return {Outcome::Skip, "set SYLLAB_CELEX to the licensed word list to run"};
  const auto raw = read_records(path);
  const auto rep = remove_ambiguous(raw);
  const Dataset& ds = rep.dataset;
  std::string detail = "removed " + std::to_string(rep.removed.size()) + ", n=" + std::to_string(ds.size());
  bool ok = rep.removed.size() == 33 && ds.size() == 293714;

  const auto bc_ev = bench::evaluate(*bench::make_bc(), ds);
  const double bc_ower = bc_ev.report.ower_pct;
  ok = ok && bc_ower >= 15.0 && bc_ower <= 19.0;

  const auto folds = split(ds, {0.9, 1, 5});
  std::vector<EvalReport> crf_reports, liang_reports;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const auto seed = 1 + k;
    crf_reports.push_back(bench::evaluate(*bench::train_engine(bench::EngineKind::Crf, folds[k].train, {}, seed),
                                          folds[k].test)
                              .report);
    liang_reports.push_back(
        bench::evaluate(*bench::train_engine(bench::EngineKind::Liang, folds[k].train, {{"tune", "true"}}, seed),
                        folds[k].test)
            .report);
  }
  const double crf_ower = summarize(crf_reports)[0].mean;
  const double liang_ower = summarize(liang_reports)[0].mean;
  ok = ok && crf_ower <= 1.0 && liang_ower <= 2.5;
  detail += ", OWER CRF " + fmt(crf_ower) + " Liang " + fmt(liang_ower) + " BC " + fmt(bc_ower);
  return verdict(ok, detail);
}

}  // namespace

int main() {
  run(1, "metric fidelity", 1, metric_fidelity);
  run(2, "metric oracle", 5, metric_oracle);
  run(3, "CRF exactness", 30, crf_exactness);
  run(4, "gradient checks", 120, gradient_checks);
  run(5, "shape conformance", 10, shapes);
  run(6, "learning sanity", 900, learning_sanity);
  run(7, "fusion benefit", 1200, fusion_benefit);
  run(8, "Brandt Corstius regression set", 1, bc_regression);
  run(9, "determinism", 300, determinism);
  run(10, "full-scale path", 1e9, full_scale);
  std::cout << (failures == 0 ? "all criteria met" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
