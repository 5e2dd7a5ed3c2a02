#include "syllab/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "syllab/error.hpp"
#include "syllab/rng.hpp"

namespace syllab::fusion {

const char* to_string(Combine c) { return c == Combine::Concat ? "concat" : "sum"; }

Combine combine_from_string(std::string_view s) {
  if (s == "concat") return Combine::Concat;
  if (s == "sum") return Combine::Sum;
  throw Error(ErrorKind::InvalidArgument, "unknown combine mode '" + std::string(s) + "'");
}

int FusionConfig::input_width(int width_a, int width_b) const {
  return combine == Combine::Concat ? width_a + width_b : width_a;
}

void FusionConfig::validate(int width_a, int width_b) const {
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorKind::InvalidArgument, "dropout_p must be in [0,1)");
  if (lstm_units <= 0 || epochs_max <= 0 || batch_size <= 0) {
    throw Error(ErrorKind::InvalidArgument, "lstm_units, epochs_max and batch_size must be positive");
  }
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be positive");
  if (patience < 0 || grad_clip < 0) throw Error(ErrorKind::InvalidArgument, "patience and grad_clip must be >= 0");
  if (combine == Combine::Sum && width_a > 0 && width_b > 0 && width_a != width_b) {
    throw Error(ErrorKind::InvalidArgument, "combine=sum needs equal trunk widths, got " + std::to_string(width_a) +
                                                " and " + std::to_string(width_b));
  }
}

nlohmann::json FusionConfig::to_json() const {
  return {{"dropout_p", dropout_p},   {"lstm_units", lstm_units},       {"combine", to_string(combine)},
          {"scaled", scaled},         {"epochs_max", epochs_max},       {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"grad_clip", grad_clip}, {"patience", patience},
          {"seed", seed}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
  FusionConfig c;
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.lstm_units = j.value("lstm_units", c.lstm_units);
  c.combine = combine_from_string(j.value("combine", std::string(to_string(c.combine))));
  c.scaled = j.value("scaled", c.scaled);
  c.epochs_max = j.value("epochs_max", c.epochs_max);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

template <typename T>
Matrix<T> attend(const Matrix<T>& a, const Matrix<T>& b, std::span<const std::uint8_t> mask_a,
                 std::span<const std::uint8_t> mask_b, bool scaled, Matrix<T>* weights) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "attention widths differ: " + std::to_string(a.cols()) + " vs " +
                                              std::to_string(b.cols()));
  }
  if ((!mask_a.empty() && mask_a.size() != static_cast<std::size_t>(a.rows())) ||
      (!mask_b.empty() && mask_b.size() != static_cast<std::size_t>(b.rows()))) {
    throw Error(ErrorKind::ShapeMismatch, "attention mask length differs from its rows");
  }
  const auto real_b = [&](Eigen::Index j) { return mask_b.empty() || mask_b[static_cast<std::size_t>(j)] != 0; };
  const auto real_a = [&](Eigen::Index i) { return mask_a.empty() || mask_a[static_cast<std::size_t>(i)] != 0; };
  bool any = false;
  for (Eigen::Index j = 0; j < b.rows(); ++j) any = any || real_b(j);
  if (!any) throw Error(ErrorKind::DegenerateMask, "no unmasked phonetic position to attend to");

  const T scale = scaled ? T(1) / std::sqrt(static_cast<T>(a.cols())) : T(1);
  Matrix<T> w = Matrix<T>::Zero(a.rows(), b.rows());
  Matrix<T> scores = (a * b.transpose()) * scale;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!real_a(i)) continue;
    T top = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (real_b(j)) top = std::max(top, scores(i, j));
    }
    T total = 0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (!real_b(j)) continue;
      w(i, j) = std::exp(scores(i, j) - top);
      total += w(i, j);
    }
    w.row(i) /= total;
  }
  Matrix<T> context = w * b;
  if (weights) *weights = std::move(w);
  return context;
}

template <typename T>
HeadParams<T> HeadParams<T>::zeros_like() const {
  HeadParams<T> z = *this;
  z.for_each([](const char*, Matrix<T>& m) { m.setZero(); });
  return z;
}

template <typename T>
HeadParams<T> init_head(int input_width, int units, std::uint64_t seed) {
  HeadParams<T> p;
  p.fwd = nn::init_lstm<T>(input_width, units, seed, 11);
  p.bwd = nn::init_lstm<T>(input_width, units, seed, 12);
  Rng rng(mix64(seed ^ mix64(13)));
  const double scale = 1.0 / std::sqrt(2.0 * units);
  p.out_w = Matrix<T>(2, 2 * units);
  for (Eigen::Index i = 0; i < p.out_w.size(); ++i) {
    p.out_w.data()[i] = static_cast<T>((rng.uniform() * 2.0 - 1.0) * scale);
  }
  p.out_b = Matrix<T>::Zero(1, 2);
  return p;
}

namespace {

template <typename T>
Matrix<T> dropout(const Matrix<T>& x, double p, std::uint64_t seed, std::uint64_t step, std::uint64_t tag) {
  if (p <= 0.0) return x;
  Matrix<T> out = x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    const double u = counter_uniform(seed, step, (tag << 24) | static_cast<std::uint64_t>(k));
    out.data()[k] = u < p ? T(0) : out.data()[k] * keep_scale;
  }
  return out;
}

template <typename T>
struct HeadForward {
  std::vector<std::size_t> lengths;
  std::size_t steps = 0;
  Matrix<T> input;
  Matrix<T> hidden;
  Matrix<T> probs;  // [B*steps x 2]
  nn::LstmCache<T> cf, cb;
};

template <typename T>
void head_forward(const HeadParams<T>& p, std::span<const Matrix<T>> inputs, HeadForward<T>& f) {
  f.lengths.clear();
  for (const auto& x : inputs) f.lengths.push_back(static_cast<std::size_t>(x.rows()));
  f.steps = f.lengths.empty() ? 0 : *std::max_element(f.lengths.begin(), f.lengths.end());
  const Eigen::Index width = p.fwd.wx.cols();
  f.input = Matrix<T>::Zero(static_cast<Eigen::Index>(inputs.size() * f.steps), width);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].cols() != width) {
      throw Error(ErrorKind::ShapeMismatch, "head input has width " + std::to_string(inputs[b].cols()) +
                                                ", expected " + std::to_string(width));
    }
    f.input.middleRows(static_cast<Eigen::Index>(b * f.steps), inputs[b].rows()) = inputs[b];
  }
  nn::bilstm_forward<T>(p.fwd, p.bwd, f.input, f.lengths, f.steps, f.hidden, f.cf, f.cb);
  Matrix<T> logits = f.hidden * p.out_w.transpose();
  logits.rowwise() += p.out_b.row(0);
  f.probs.resize(logits.rows(), 2);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T top = std::max(logits(r, 0), logits(r, 1));
    const T e0 = std::exp(logits(r, 0) - top), e1 = std::exp(logits(r, 1) - top);
    f.probs(r, 0) = e0 / (e0 + e1);
    f.probs(r, 1) = e1 / (e0 + e1);
  }
}

}  // namespace

template <typename T>
Matrix<T> head_input(const FusionConfig& cfg, const PairFeatures<T>& f, nn::Mode mode, std::uint64_t step,
                     std::uint64_t word_index) {
  const bool train = mode == nn::Mode::Train;
  const Matrix<T> a = train ? dropout(f.a, cfg.dropout_p, cfg.seed, step, 2 * word_index) : f.a;
  const Matrix<T> b = train ? dropout(f.b, cfg.dropout_p, cfg.seed, step, 2 * word_index + 1) : f.b;
  const Matrix<T> context = attend<T>(a, b, {}, {}, cfg.scaled);
  if (cfg.combine == Combine::Sum) return a + context;
  Matrix<T> out(a.rows(), a.cols() + context.cols());
  out << a, context;
  return out;
}

template <typename T>
T head_loss(const HeadParams<T>& p, std::span<const Matrix<T>> inputs, std::span<const BoundaryVector> gold,
            HeadParams<T>* grad) {
  if (inputs.size() != gold.size()) throw Error(ErrorKind::ShapeMismatch, "head_loss: inputs and gold differ");
  if (inputs.empty()) return T(0);
  HeadForward<T> f;
  head_forward(p, inputs, f);
  const T inv_batch = T(1) / static_cast<T>(inputs.size());
  T loss = 0;
  Matrix<T> d_logits = Matrix<T>::Zero(f.probs.rows(), 2);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    for (std::size_t t = 0; t < f.lengths[b]; ++t) {
      const auto r = static_cast<Eigen::Index>(b * f.steps + t);
      const int y = t < gold[b].size() ? gold[b][t] : 0;
      loss -= std::log(std::max(f.probs(r, y), std::numeric_limits<T>::min()));
      d_logits(r, 0) = (f.probs(r, 0) - T(y == 0)) * inv_batch;
      d_logits(r, 1) = (f.probs(r, 1) - T(y == 1)) * inv_batch;
    }
  }
  if (grad) {
    *grad = p.zeros_like();
    grad->out_w = d_logits.transpose() * f.hidden;
    grad->out_b = d_logits.colwise().sum();
    const Matrix<T> d_hidden = d_logits * p.out_w;
    nn::bilstm_backward<T>(p.fwd, p.bwd, f.lengths, f.steps, f.cf, f.cb, d_hidden, grad->fwd, grad->bwd, nullptr);
  }
  return loss * inv_batch;
}

template <typename T>
std::vector<Matrix<T>> head_scores(const HeadParams<T>& p, std::span<const Matrix<T>> inputs) {
  std::vector<Matrix<T>> out;
  if (inputs.empty()) return out;
  HeadForward<T> f;
  head_forward(p, inputs, f);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    out.push_back(f.probs.middleRows(static_cast<Eigen::Index>(b * f.steps), static_cast<Eigen::Index>(f.lengths[b])));
  }
  return out;
}

FusionModel::FusionModel(FusionConfig cfg, nn::NeuralModel trunk_a, nn::NeuralModel trunk_b)
    : cfg_(cfg), a_(std::move(trunk_a)), b_(std::move(trunk_b)) {
  if (a_.channel() != nn::Channel::Orth || b_.channel() != nn::Channel::Phon) {
    throw Error(ErrorKind::InvalidArgument, "fusion needs an orthographic trunk A and a phonetic trunk B");
  }
  const int wa = 2 * a_.config().lstm_units;
  const int wb = 2 * b_.config().lstm_units;
  if (wa != wb) {
    throw Error(ErrorKind::ShapeMismatch, "trunk widths differ: " + std::to_string(wa) + " vs " + std::to_string(wb));
  }
  cfg_.validate(wa, wb);
  head_ = init_head<float>(cfg_.input_width(wa, wb), cfg_.lstm_units, cfg_.seed);
}

std::vector<PairFeatures<float>> FusionModel::features(std::span<const Word> orth, std::span<const Word> phon) const {
  if (orth.size() != phon.size()) throw Error(ErrorKind::LengthMismatch, "orthographic and phonetic lists differ");
  auto fa = a_.first_lstm_features(orth);
  auto fb = b_.first_lstm_features(phon);
  std::vector<PairFeatures<float>> out(orth.size());
  for (std::size_t i = 0; i < orth.size(); ++i) {
    if (fb[i].rows() == 0) {
      throw Error(ErrorKind::DegenerateMask, "'" + to_utf8(orth[i]) + "' has an empty phonetic form");
    }
    out[i] = {std::move(fa[i]), std::move(fb[i])};
  }
  return out;
}

std::vector<Matrix<float>> FusionModel::scores(std::span<const Word> orth, std::span<const Word> phon) const {
  const auto feats = features(orth, phon);
  std::vector<Matrix<float>> inputs;
  inputs.reserve(feats.size());
  for (const auto& f : feats) inputs.push_back(head_input<float>(cfg_, f, nn::Mode::Eval, 0, 0));
  std::vector<Matrix<float>> out;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    const std::size_t n = std::min(chunk, inputs.size() - start);
    auto part = head_scores<float>(head_, std::span<const Matrix<float>>(inputs.data() + start, n));
    for (auto& m : part) out.push_back(std::move(m));
  }
  return out;
}

std::vector<BoundaryVector> FusionModel::predict(std::span<const Word> orth, std::span<const Word> phon) const {
  const auto sc = scores(orth, phon);
  std::vector<BoundaryVector> out;
  out.reserve(sc.size());
  for (std::size_t i = 0; i < sc.size(); ++i) {
    BoundaryVector bv(orth[i].size());
    for (Eigen::Index t = 0; t < sc[i].rows(); ++t) bv.set(static_cast<std::size_t>(t), sc[i](t, 1) > sc[i](t, 0));
    out.push_back(std::move(bv));
  }
  return out;
}

BoundaryVector FusionModel::predict(std::u32string_view orth, std::u32string_view phon) const {
  const Word o(orth), p(phon);
  return predict(std::span<const Word>(&o, 1), std::span<const Word>(&p, 1)).front();
}

std::vector<BoundaryVector> FusionModel::predict(const Dataset& ds) const {
  std::vector<Word> orth, phon;
  for (const auto& e : ds.entries) {
    if (!e.phon) throw Error(ErrorKind::MissingPhonetic, "'" + to_utf8(e.orth) + "' has no phonetic form");
    orth.push_back(e.orth);
    phon.push_back(*e.phon);
  }
  return predict(orth, phon);
}

ModelFile FusionModel::to_model_file(const std::filesystem::path& trunk_a_path,
                                     const std::filesystem::path& trunk_b_path) const {
  ModelFile m("fusion");
  m.config = cfg_.to_json();
  m.config["trunk_a"] = trunk_a_path.generic_string();
  m.config["trunk_b"] = trunk_b_path.generic_string();
  m.config["trunk_a_hash"] = hex64(ModelFile::load(trunk_a_path).content_hash());
  m.config["trunk_b_hash"] = hex64(ModelFile::load(trunk_b_path).content_hash());
  m.config["trunk_a_checksum"] = hex64(a_.checksum());
  m.config["trunk_b_checksum"] = hex64(b_.checksum());
  head_.for_each([&m](const char* name, const Matrix<float>& t) {
    m.add_f32(name, {static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())},
              std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
  });
  return m;
}

FusionModel FusionModel::from_model_file(const ModelFile& file, const std::filesystem::path& base_dir) {
  if (file.engine != "fusion") throw Error(ErrorKind::Format, "model file holds '" + file.engine + "', not fusion");
  const auto load_trunk = [&](const char* key) {
    std::filesystem::path path = file.config.at(key).get<std::string>();
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    const auto trunk = ModelFile::load(path);
    const auto want = file.config.at(std::string(key) + "_hash").get<std::string>();
    if (hex64(trunk.content_hash()) != want) {
      throw Error(ErrorKind::Format, "trunk file " + path.string() + " does not match the stored hash " + want);
    }
    return nn::NeuralModel::from_model_file(trunk);
  };
  FusionModel m(FusionConfig::from_json(file.config), load_trunk("trunk_a"), load_trunk("trunk_b"));
  m.head_.for_each([&file](const char* name, Matrix<float>& t) {
    const auto values = file.f32(name, {static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())});
    std::copy(values.begin(), values.end(), t.data());
  });
  return m;
}

double word_error_pct(const FusionModel& model, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  const auto pred = model.predict(ds);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) errors += pred[i] != ds.entries[i].orth_bounds;
  return 100.0 * static_cast<double>(errors) / static_cast<double>(ds.size());
}

namespace {

void require_phonetic(const Dataset& ds) {
  for (const auto& e : ds.entries) {
    if (!e.has_phonetic()) throw Error(ErrorKind::MissingPhonetic, "'" + to_utf8(e.orth) + "' has no phonetic form");
  }
}

}  // namespace

FusionTrainResult train_fusion(const Dataset& train, const Dataset& val, const FusionConfig& cfg,
                               const nn::NeuralModel& trunk_a, const nn::NeuralModel& trunk_b,
                               const EpochCallback& on_epoch) {
  if (train.empty()) throw Error(ErrorKind::EmptyTraining, "fusion training set is empty");
  if (val.empty()) throw Error(ErrorKind::InvalidArgument, "fusion validation set is empty");
  require_phonetic(train);
  require_phonetic(val);
  const std::uint64_t sum_a = trunk_a.checksum();
  const std::uint64_t sum_b = trunk_b.checksum();

  FusionTrainResult result;
  result.model = FusionModel(cfg, trunk_a, trunk_b);
  FusionModel& model = result.model;

  std::vector<Word> orth, phon;
  std::vector<BoundaryVector> gold;
  for (const auto& e : train.entries) {
    orth.push_back(e.orth);
    phon.push_back(*e.phon);
    gold.push_back(e.orth_bounds);
  }
  const auto feats = model.features(orth, phon);

  std::vector<Matrix<float>*> params;
  model.head().for_each([&params](const char*, Matrix<float>& m) { params.push_back(&m); });
  std::vector<Matrix<float>> adam_m, adam_v;
  for (auto* m : params) {
    adam_m.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
    adam_v.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  HeadParams<float> best = model.head();
  double best_ower = std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  std::vector<std::size_t> order(feats.size());
  std::vector<Matrix<float>> batch_inputs;
  std::vector<BoundaryVector> batch_gold;
  HeadParams<float> grad;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(epoch))));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      batch_inputs.clear();
      batch_gold.clear();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t w = order[start + i];
        batch_inputs.push_back(head_input<float>(model.config(), feats[w], nn::Mode::Train, step, w));
        batch_gold.push_back(gold[w]);
      }
      const float loss = head_loss<float>(model.head(), batch_inputs, batch_gold, &grad);
      if (!std::isfinite(loss)) throw Error(ErrorKind::Divergence, "fusion loss became non-finite");
      loss_sum += static_cast<double>(loss) * static_cast<double>(n);

      std::vector<Matrix<float>*> grads;
      grad.for_each([&grads](const char*, Matrix<float>& m) { grads.push_back(&m); });
      double norm_sq = 0.0;
      for (auto* g : grads) norm_sq += g->cast<double>().squaredNorm();
      if (!std::isfinite(norm_sq)) throw Error(ErrorKind::Divergence, "fusion gradient became non-finite");
      const double norm = std::sqrt(norm_sq);
      const float clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? static_cast<float>(cfg.grad_clip / norm) : 1.0f;

      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const auto lr = static_cast<float>(cfg.learning_rate);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Matrix<float> g = *grads[k] * clip;
        adam_m[k] = static_cast<float>(kBeta1) * adam_m[k] + static_cast<float>(1.0 - kBeta1) * g;
        adam_v[k] = static_cast<float>(kBeta2) * adam_v[k] + static_cast<float>(1.0 - kBeta2) * g.cwiseAbs2();
        const auto m_hat = adam_m[k].array() / static_cast<float>(c1);
        const auto v_hat = adam_v[k].array() / static_cast<float>(c2);
        params[k]->array() -= lr * m_hat / (v_hat.sqrt() + static_cast<float>(kEps));
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(feats.size());
    const double ower = word_error_pct(model, val);
    result.train_loss.push_back(mean_loss);
    result.val_ower.push_back(ower);
    if (ower < best_ower) {
      best_ower = ower;
      best = model.head();
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, mean_loss, ower);
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) break;
  }
  model.head() = best;

  if (trunk_a.checksum() != sum_a || trunk_b.checksum() != sum_b || model.trunk_a().checksum() != sum_a ||
      model.trunk_b().checksum() != sum_b) {
    throw Error(ErrorKind::TrunkMutation, "a trunk changed during fusion training");
  }
  return result;
}

#define SYLLAB_FUSION_INSTANTIATE(T)                                                                              \
  template struct HeadParams<T>;                                                                                \
  template Matrix<T> attend<T>(const Matrix<T>&, const Matrix<T>&, std::span<const std::uint8_t>,               \
                               std::span<const std::uint8_t>, bool, Matrix<T>*);                                \
  template HeadParams<T> init_head<T>(int, int, std::uint64_t);                                                 \
  template Matrix<T> head_input<T>(const FusionConfig&, const PairFeatures<T>&, nn::Mode, std::uint64_t,       \
                                   std::uint64_t);                                                              \
  template T head_loss<T>(const HeadParams<T>&, std::span<const Matrix<T>>, std::span<const BoundaryVector>,    \
                          HeadParams<T>*);                                                                      \
  template std::vector<Matrix<T>> head_scores<T>(const HeadParams<T>&, std::span<const Matrix<T>>);

SYLLAB_FUSION_INSTANTIATE(float)
SYLLAB_FUSION_INSTANTIATE(double)

}  // namespace syllab::fusion
