#include "syllab/crf.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <thread>

#include "syllab/error.hpp"

namespace syllab::crf {

namespace {

constexpr int kOffsetBias = 16;
constexpr std::size_t kChunks = 8;
const std::string kBiasKey = "B";

void append_id(std::string& key, int id) {
  key.push_back(static_cast<char>(id & 0xFF));
  key.push_back(static_cast<char>((id >> 8) & 0xFF));
}

}  // namespace

FeatureExtractor::FeatureExtractor(Alphabet alphabet, int window) : alphabet_(std::move(alphabet)), window_(window) {
  if (window < 1 || window > 12) throw Error(ErrorKind::InvalidArgument, "CRF window must be in 1..12");
  if (alphabet_.size() > 0xFFFF) throw Error(ErrorKind::InvalidArgument, "alphabet too large for CRF features");
}

std::vector<std::vector<std::string>> FeatureExtractor::keys(std::u32string_view word) const {
  const int n = static_cast<int>(word.size());
  std::vector<int> ids(word.size());
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = alphabet_.lookup(word[static_cast<std::size_t>(i)]);
  const auto symbol_at = [&](int p) {
    if (p < 0) return Alphabet::kWordStart;
    if (p >= n) return Alphabet::kWordEnd;
    return ids[static_cast<std::size_t>(p)];
  };
  std::vector<std::vector<std::string>> out(word.size());
  for (int i = 0; i < n; ++i) {
    auto& feats = out[static_cast<std::size_t>(i)];
    feats.push_back(kBiasKey);
    for (int start = -left(); start <= right(); ++start) {
      std::string key;
      key.push_back(static_cast<char>(start + kOffsetBias));
      key.push_back(0);
      for (int end = start; end <= right(); ++end) {
        append_id(key, symbol_at(i + end));
        key[1] = static_cast<char>(end - start + 1);
        feats.push_back(key);
      }
    }
  }
  return out;
}

std::string FeatureExtractor::describe(const std::string& key) const {
  if (key == kBiasKey) return "bias";
  const int start = static_cast<int>(key[0]) - kOffsetBias;
  const int len = static_cast<int>(key[1]);
  std::string out = std::to_string(start) + ".." + std::to_string(start + len - 1) + ":";
  for (int k = 0; k < len; ++k) {
    const int id = static_cast<unsigned char>(key[2 + 2 * k]) | (static_cast<unsigned char>(key[3 + 2 * k]) << 8);
    if (id == Alphabet::kWordStart) out += '^';
    else if (id == Alphabet::kWordEnd) out += '$';
    else if (id == Alphabet::kUnknown) out += '?';
    else out += to_utf8(std::u32string(1, alphabet_.symbol(id)));
  }
  return out;
}

CrfModel::CrfModel(const Dataset& train, int window) {
  std::vector<Word> words;
  words.reserve(train.size());
  for (const auto& e : train.entries) words.push_back(e.orth);
  extractor_ = FeatureExtractor(Alphabet::from_words(words), window);
  for (const auto& w : words) {
    for (auto& pos : extractor_.keys(w)) {
      for (auto& k : pos) {
        if (index_.try_emplace(k, static_cast<std::uint32_t>(keys_.size())).second) keys_.push_back(k);
      }
    }
  }
  theta_.assign(dimension(), 0.0);
}

std::vector<std::vector<std::uint32_t>> CrfModel::extract(std::u32string_view word) const {
  std::vector<std::vector<std::uint32_t>> out;
  for (const auto& pos : extractor_.keys(word)) {
    auto& ids = out.emplace_back();
    for (const auto& k : pos) {
      auto it = index_.find(k);
      if (it != index_.end()) ids.push_back(it->second);
    }
  }
  return out;
}

chain::Transitions<double> CrfModel::transitions() const {
  const std::size_t t = 2 * keys_.size();
  return {{{theta_[t], theta_[t + 1]}, {theta_[t + 2], theta_[t + 3]}}};
}

std::vector<double> CrfModel::emissions(std::u32string_view word) const {
  const auto feats = extract(word);
  std::vector<double> e(2 * feats.size(), 0.0);
  for (std::size_t t = 0; t < feats.size(); ++t) {
    for (auto f : feats[t]) {
      e[2 * t] += theta_[2 * f];
      e[2 * t + 1] += theta_[2 * f + 1];
    }
  }
  return e;
}

double CrfModel::log_partition(std::u32string_view word) const {
  const auto e = emissions(word);
  return chain::log_partition<double>(e, transitions());
}

double CrfModel::score(std::u32string_view word, const BoundaryVector& labels) const {
  if (labels.size() != word.size()) throw Error(ErrorKind::LengthMismatch, "labels do not match word");
  const auto e = emissions(word);
  return chain::sequence_score<double>(e, transitions(), labels.bits());
}

BoundaryVector CrfModel::viterbi(std::u32string_view word) const {
  const auto e = emissions(word);
  return BoundaryVector(chain::viterbi<double>(e, transitions()));
}

std::vector<double> CrfModel::break_marginals(std::u32string_view word) const {
  const auto e = emissions(word);
  std::vector<double> node(e.size());
  chain::Transitions<double> edge;
  chain::marginals<double>(e, transitions(), node, edge);
  std::vector<double> out(word.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = node[2 * t + 1];
  return out;
}

ModelFile CrfModel::to_model_file() const {
  ModelFile m("crf");
  m.config = {{"window", extractor_.window()}, {"l2", l2}, {"seed", seed}, {"features", keys_.size()}};
  std::vector<std::string> alphabet;
  for (char32_t c : extractor_.alphabet().symbols()) alphabet.push_back(to_utf8(std::u32string(1, c)));
  m.add_strings("alphabet", alphabet);
  m.add_strings("feature_keys", keys_);
  m.add_f64("weights", {keys_.size(), 2}, std::span<const double>(theta_.data(), 2 * keys_.size()));
  m.add_f64("transitions", {2, 2}, std::span<const double>(theta_.data() + 2 * keys_.size(), 4));
  return m;
}

CrfModel CrfModel::from_model_file(const ModelFile& file) {
  if (file.engine != "crf") throw Error(ErrorKind::Format, "model file holds '" + file.engine + "', not crf");
  CrfModel m;
  std::u32string symbols;
  for (const auto& s : file.strings("alphabet")) symbols += from_utf8(s);
  m.extractor_ = FeatureExtractor(Alphabet(symbols), file.config.at("window").get<int>());
  m.l2 = file.config.value("l2", 1.0);
  m.seed = file.config.value("seed", std::uint64_t{0});
  m.keys_ = file.strings("feature_keys");
  for (std::size_t i = 0; i < m.keys_.size(); ++i) m.index_.emplace(m.keys_[i], static_cast<std::uint32_t>(i));
  auto w = file.f64("weights", {m.keys_.size(), 2});
  auto t = file.f64("transitions", {2, 2});
  m.theta_ = std::move(w);
  m.theta_.insert(m.theta_.end(), t.begin(), t.end());
  return m;
}

CrfObjective::CrfObjective(const CrfModel& model, const Dataset& data, double l2, int threads)
    : dim_(model.dimension()), l2_(l2), threads_(std::max(1, threads)) {
  words_.reserve(data.size());
  for (const auto& e : data.entries) {
    Compiled c;
    for (const auto& pos : model.extract(e.orth)) {
      c.offsets.push_back(static_cast<std::uint32_t>(c.ids.size()));
      c.ids.insert(c.ids.end(), pos.begin(), pos.end());
    }
    c.offsets.push_back(static_cast<std::uint32_t>(c.ids.size()));
    c.gold = e.orth_bounds.bits();
    words_.push_back(std::move(c));
  }
}

double CrfObjective::word_terms(const Compiled& w, std::span<const double> theta, std::span<double> grad) const {
  const std::size_t n = w.gold.size();
  const std::size_t tbase = dim_ - 4;
  const chain::Transitions<double> trans{{{theta[tbase], theta[tbase + 1]}, {theta[tbase + 2], theta[tbase + 3]}}};
  std::vector<double> emit(2 * n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (auto k = w.offsets[t]; k < w.offsets[t + 1]; ++k) {
      const auto f = w.ids[k];
      emit[2 * t] += theta[2 * f];
      emit[2 * t + 1] += theta[2 * f + 1];
    }
  }
  std::vector<double> node(2 * n);
  chain::Transitions<double> edge;
  const double log_z = chain::marginals<double>(emit, trans, node, edge);
  const double gold_score = chain::sequence_score<double>(emit, trans, w.gold);

  for (std::size_t t = 0; t < n; ++t) {
    const double d0 = node[2 * t] - (w.gold[t] == 0 ? 1.0 : 0.0);
    const double d1 = node[2 * t + 1] - (w.gold[t] == 1 ? 1.0 : 0.0);
    for (auto k = w.offsets[t]; k < w.offsets[t + 1]; ++k) {
      const auto f = w.ids[k];
      grad[2 * f] += d0;
      grad[2 * f + 1] += d1;
    }
  }
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) grad[tbase + 2 * a + b] += edge[a][b];
  }
  for (std::size_t t = 1; t < n; ++t) grad[tbase + 2 * w.gold[t - 1] + w.gold[t]] -= 1.0;
  return log_z - gold_score;
}

double CrfObjective::evaluate(std::span<const double> theta, std::span<double> grad) const {
  if (theta.size() != dim_ || grad.size() != dim_) throw Error(ErrorKind::ShapeMismatch, "CRF parameter vector");
  // Fixed chunking with an ordered reduction keeps the result independent
  // of the thread count.
  std::vector<std::vector<double>> partial_grad(kChunks, std::vector<double>(dim_, 0.0));
  std::vector<double> partial_f(kChunks, 0.0);
  const std::size_t per = (words_.size() + kChunks - 1) / kChunks;
  const auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = std::min(words_.size(), c * per);
    const std::size_t hi = std::min(words_.size(), lo + per);
    for (std::size_t i = lo; i < hi; ++i) partial_f[c] += word_terms(words_[i], theta, partial_grad[c]);
  };
  const auto n_threads = static_cast<std::size_t>(std::min<int>(threads_, static_cast<int>(kChunks)));
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < kChunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < kChunks; c += n_threads) run_chunk(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  double f = 0.0;
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t c = 0; c < kChunks; ++c) {
    f += partial_f[c];
    for (std::size_t i = 0; i < dim_; ++i) grad[i] += partial_grad[c][i];
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    sq += theta[i] * theta[i];
    grad[i] += l2_ * theta[i];
  }
  return f + 0.5 * l2_ * sq;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

CrfModel train_crf(const Dataset& train, const CrfHyper& hyper, CrfTrainReport* report) {
  if (train.empty()) throw Error(ErrorKind::EmptyTraining, "CRF training set is empty");
  CrfModel model(train, hyper.window);
  model.l2 = hyper.l2;
  const int threads = hyper.threads > 0 ? hyper.threads
                                        : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  CrfObjective objective(model, train, hyper.l2, threads);
  const std::size_t dim = objective.dimension();

  std::vector<double> x(dim, 0.0), g(dim), x_new(dim), g_new(dim), d(dim);
  double f = objective.evaluate(x, g);
  if (!std::isfinite(f)) throw Error(ErrorKind::Divergence, "CRF objective is not finite at start");

  constexpr std::size_t kMemory = 10;
  std::deque<std::pair<std::vector<double>, std::vector<double>>> pairs;  // (s, y)
  CrfTrainReport local;
  CrfTrainReport& rep = report ? *report : local;
  rep = {};
  rep.objective.push_back(f);

  for (int it = 0; it < hyper.max_iterations; ++it) {
    if (norm(g) <= hyper.tolerance * std::max(1.0, norm(x))) {
      rep.converged = true;
      break;
    }
    // Two-loop recursion.
    d = g;
    std::vector<double> alphas(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
      const auto& [s, y] = pairs[k];
      alphas[k] = dot(s, d) / dot(y, s);
      for (std::size_t i = 0; i < dim; ++i) d[i] -= alphas[k] * y[i];
    }
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      const double gamma = dot(s, y) / dot(y, y);
      for (auto& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& [s, y] = pairs[k];
      const double beta = dot(y, d) / dot(y, s);
      for (std::size_t i = 0; i < dim; ++i) d[i] += s[i] * (alphas[k] - beta);
    }
    for (auto& v : d) v = -v;
    double slope = dot(g, d);
    if (slope >= 0.0) {
      pairs.clear();
      for (std::size_t i = 0; i < dim; ++i) d[i] = -g[i];
      slope = dot(g, d);
    }

    double step = pairs.empty() ? 1.0 / std::max(1.0, norm(g)) : 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 40; ++tries) {
      for (std::size_t i = 0; i < dim; ++i) x_new[i] = x[i] + step * d[i];
      f_new = objective.evaluate(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!std::isfinite(f_new)) throw Error(ErrorKind::Divergence, "CRF objective became non-finite");
      rep.converged = true;  // no further decrease along any tried step
      break;
    }

    std::vector<double> s(dim), y(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    if (dot(s, y) > 1e-10) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (pairs.size() > kMemory) pairs.pop_front();
    }
    const double decrease = f - f_new;
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    rep.objective.push_back(f);
    rep.iterations = it + 1;
    if (hyper.on_iteration) hyper.on_iteration(it + 1, f);
    if (decrease <= 1e-10 * std::max(1.0, std::abs(f))) {
      rep.converged = true;
      break;
    }
  }
  std::copy(x.begin(), x.end(), model.theta().begin());
  return model;
}

}  // namespace syllab::crf
