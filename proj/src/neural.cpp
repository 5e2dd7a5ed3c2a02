#include "syllab/neural.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "syllab/error.hpp"
#include "syllab/linear_chain.hpp"
#include "syllab/rng.hpp"

namespace syllab::nn {

const char* to_string(Channel c) { return c == Channel::Orth ? "orth" : "phon"; }

Channel channel_from_string(std::string_view s) {
  if (s == "orth") return Channel::Orth;
  if (s == "phon") return Channel::Phon;
  throw Error(ErrorKind::InvalidArgument, "unknown channel '" + std::string(s) + "'");
}

const Word& channel_word(const AnnotatedWord& w, Channel c) {
  if (c == Channel::Orth) return w.orth;
  if (!w.has_phonetic()) throw Error(ErrorKind::MissingPhonetic, "'" + to_utf8(w.orth) + "' has no phonetic form");
  return *w.phon;
}

const BoundaryVector& channel_bounds(const AnnotatedWord& w, Channel c) {
  if (c == Channel::Orth) return w.orth_bounds;
  if (!w.has_phonetic()) throw Error(ErrorKind::MissingPhonetic, "'" + to_utf8(w.orth) + "' has no phonetic form");
  return *w.phon_bounds;
}

void NeuralConfig::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v <= 0) throw Error(ErrorKind::InvalidArgument, std::string(name) + " must be positive");
  };
  positive(token_len, "token_len");
  positive(window, "window");
  positive(embed_dim, "embed_dim");
  positive(conv_filters, "conv_filters");
  positive(conv_kernel, "conv_kernel");
  positive(conv_stride, "conv_stride");
  positive(pool_kernel, "pool_kernel");
  positive(lstm_units, "lstm_units");
  positive(batch_size, "batch_size");
  positive(epochs_max, "epochs_max");
  if (window % 2 == 0) throw Error(ErrorKind::InvalidArgument, "window must be odd");
  if (conv_kernel % 2 == 0 || pool_kernel % 2 == 0) {
    throw Error(ErrorKind::InvalidArgument, "conv and pool kernels must be odd for same padding");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorKind::InvalidArgument, "dropout_p must be in [0,1)");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be positive");
  if (patience < 0 || grad_clip < 0) throw Error(ErrorKind::InvalidArgument, "patience and grad_clip must be >= 0");
}

nlohmann::json NeuralConfig::to_json() const {
  return {{"token_len", token_len},
          {"window", window},
          {"embed_dim", embed_dim},
          {"conv_filters", conv_filters},
          {"conv_kernel", conv_kernel},
          {"conv_stride", conv_stride},
          {"dropout_p", dropout_p},
          {"pool_kernel", pool_kernel},
          {"lstm_units", lstm_units},
          {"batch_size", batch_size},
          {"epochs_max", epochs_max},
          {"learning_rate", learning_rate},
          {"grad_clip", grad_clip},
          {"bn_momentum", bn_momentum},
          {"bn_eps", bn_eps},
          {"patience", patience},
          {"seed", seed}};
}

NeuralConfig NeuralConfig::from_json(const nlohmann::json& j) {
  NeuralConfig c;
  c.token_len = j.value("token_len", c.token_len);
  c.window = j.value("window", c.window);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.conv_filters = j.value("conv_filters", c.conv_filters);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.conv_stride = j.value("conv_stride", c.conv_stride);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.pool_kernel = j.value("pool_kernel", c.pool_kernel);
  c.lstm_units = j.value("lstm_units", c.lstm_units);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs_max = j.value("epochs_max", c.epochs_max);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

template <typename T>
NeuralParams<T> NeuralParams<T>::zeros_like() const {
  NeuralParams<T> z = *this;
  z.for_each([](const std::string&, Matrix<T>& m) { m.setZero(); });
  return z;
}

template <typename T>
std::size_t NeuralParams<T>::size() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

namespace {

template <typename T>
Matrix<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((rng.uniform() * 2.0 - 1.0) * scale);
  return m;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
LstmParams<T> init_lstm(int input_dim, int units, std::uint64_t seed, std::uint64_t stream) {
  Rng rng(mix64(seed ^ mix64(stream)));
  LstmParams<T> l;
  l.wx = uniform_matrix<T>(4 * units, input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  l.wh = uniform_matrix<T>(4 * units, units, 1.0 / std::sqrt(static_cast<double>(units)), rng);
  l.b = uniform_matrix<T>(1, 4 * units, 1.0 / std::sqrt(static_cast<double>(units)), rng);
  return l;
}

template <typename T>
NeuralParams<T> init_params(const NeuralConfig& cfg, int alphabet_size, std::uint64_t seed) {
  cfg.validate();
  const int e = cfg.embed_dim, f = cfg.conv_filters, h = cfg.lstm_units;
  NeuralParams<T> p;
  Rng rng(mix64(seed));
  p.embed = uniform_matrix<T>(alphabet_size, e, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  const double conv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel * e));
  p.conv_w = uniform_matrix<T>(f, cfg.conv_kernel * e, conv_scale, rng);
  p.conv_b = uniform_matrix<T>(1, f, conv_scale, rng);
  p.bn_gamma = Matrix<T>::Ones(1, f);
  p.bn_beta = Matrix<T>::Zero(1, f);
  p.lstm1_fwd = init_lstm<T>(cfg.flat_width(), h, seed, 1);
  p.lstm1_bwd = init_lstm<T>(cfg.flat_width(), h, seed, 2);
  p.lstm2_fwd = init_lstm<T>(2 * h, h, seed, 3);
  p.lstm2_bwd = init_lstm<T>(2 * h, h, seed, 4);
  const double out_scale = 1.0 / std::sqrt(2.0 * h);
  p.out_w = uniform_matrix<T>(2, 2 * h, out_scale, rng);
  p.out_b = uniform_matrix<T>(1, 2, out_scale, rng);
  p.trans = Matrix<T>::Zero(2, 2);
  return p;
}

template <typename T>
BatchNormStats<T> init_bn_stats(const NeuralConfig& cfg) {
  return {Matrix<T>::Zero(1, cfg.conv_filters), Matrix<T>::Ones(1, cfg.conv_filters)};
}

WindowTensor tensorize(std::span<const Word> words, const Alphabet& alphabet, const NeuralConfig& cfg) {
  WindowTensor wt;
  wt.batch = words.size();
  wt.token_len = static_cast<std::size_t>(cfg.token_len);
  wt.window = static_cast<std::size_t>(cfg.window);
  wt.ids.assign(wt.batch * wt.token_len * wt.window, Alphabet::kPad);
  wt.mask.assign(wt.batch * wt.token_len, 0);
  const int half = cfg.window / 2;
  for (std::size_t b = 0; b < words.size(); ++b) {
    const auto& w = words[b];
    if (w.size() > wt.token_len) {
      throw Error(ErrorKind::WordTooLong, "'" + to_utf8(w) + "' has " + std::to_string(w.size()) +
                                              " letters; the limit is " + std::to_string(wt.token_len));
    }
    wt.lengths.push_back(w.size());
    const auto len = static_cast<int>(w.size());
    for (int t = 0; t < len; ++t) {
      wt.mask[b * wt.token_len + static_cast<std::size_t>(t)] = 1;
      for (int k = 0; k < cfg.window; ++k) {
        const int pos = t + k - half;
        if (pos < 0 || pos >= len) continue;
        wt.ids[(b * wt.token_len + static_cast<std::size_t>(t)) * wt.window + static_cast<std::size_t>(k)] =
            alphabet.lookup(w[static_cast<std::size_t>(pos)]);
      }
    }
  }
  return wt;
}

template <typename T>
std::vector<std::size_t> ForwardCache<T>::embedded_shape() const {
  const std::size_t t = batch ? mask.size() / batch : 0;
  const std::size_t w = mask.empty() ? 0 : ids.size() / mask.size();
  return {batch, t, w, static_cast<std::size_t>(embedded.cols())};
}

template <typename T>
std::vector<std::size_t> ForwardCache<T>::flat_shape() const {
  const std::size_t t = batch ? mask.size() / batch : 0;
  const std::size_t width = mask.empty() ? 0 : static_cast<std::size_t>(pooled.size()) / mask.size();
  return {batch, t, width};
}

template <typename T>
std::vector<std::size_t> ForwardCache<T>::lstm_shape() const {
  const std::size_t t = batch ? mask.size() / batch : 0;
  return {batch, t, static_cast<std::size_t>(lstm1.cols())};
}

namespace {

// Position of step t for a word of length len, in original order.
inline std::size_t step_position(std::size_t t, std::size_t len, bool reverse) {
  return reverse ? len - 1 - t : t;
}

template <typename T>
void lstm_direction(const LstmParams<T>& p, bool reverse, const Matrix<T>& input,
                    std::span<const std::size_t> lengths, std::size_t stride, Matrix<T>& out, Eigen::Index offset,
                    LstmCache<T>& cache) {
  const auto batch = static_cast<Eigen::Index>(lengths.size());
  const Eigen::Index h = p.wh.cols();
  const std::size_t steps = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  cache.inputs.assign(steps, {});
  cache.gates.assign(steps, {});
  cache.cells.assign(steps, {});
  cache.hidden.assign(steps, {});
  Matrix<T> hid = Matrix<T>::Zero(batch, h);
  Matrix<T> cell = Matrix<T>::Zero(batch, h);
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix<T> x = Matrix<T>::Zero(batch, input.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto len = lengths[static_cast<std::size_t>(b)];
      if (t >= len) continue;
      x.row(b) = input.row(static_cast<Eigen::Index>(static_cast<std::size_t>(b) * stride +
                                                     step_position(t, len, reverse)));
    }
    Matrix<T> g = x * p.wx.transpose() + hid * p.wh.transpose();
    g.rowwise() += p.b.row(0);
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (t >= lengths[static_cast<std::size_t>(b)]) {
        g.row(b).setZero();
        continue;
      }
      for (Eigen::Index k = 0; k < h; ++k) {
        g(b, k) = sigmoid(g(b, k));
        g(b, h + k) = sigmoid(g(b, h + k));
        g(b, 2 * h + k) = std::tanh(g(b, 2 * h + k));
        g(b, 3 * h + k) = sigmoid(g(b, 3 * h + k));
      }
    }
    Matrix<T> c_new = Matrix<T>::Zero(batch, h);
    Matrix<T> h_new = Matrix<T>::Zero(batch, h);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto len = lengths[static_cast<std::size_t>(b)];
      if (t >= len) continue;
      for (Eigen::Index k = 0; k < h; ++k) {
        const T c = g(b, h + k) * cell(b, k) + g(b, k) * g(b, 2 * h + k);
        c_new(b, k) = c;
        h_new(b, k) = g(b, 3 * h + k) * std::tanh(c);
      }
      out.block(static_cast<Eigen::Index>(static_cast<std::size_t>(b) * stride + step_position(t, len, reverse)),
                offset, 1, h) = h_new.row(b);
    }
    cache.inputs[t] = std::move(x);
    cache.gates[t] = std::move(g);
    cache.cells[t] = c_new;
    cache.hidden[t] = h_new;
    hid = std::move(h_new);
    cell = std::move(c_new);
  }
}

template <typename T>
void lstm_direction_backward(const LstmParams<T>& p, bool reverse, std::span<const std::size_t> lengths,
                             std::size_t stride, const LstmCache<T>& cache, const Matrix<T>& d_out,
                             Eigen::Index offset, LstmParams<T>& g, Matrix<T>* d_input) {
  const auto batch = static_cast<Eigen::Index>(lengths.size());
  const Eigen::Index h = p.wh.cols();
  const std::size_t steps = cache.gates.size();
  Matrix<T> dh_next = Matrix<T>::Zero(batch, h);
  Matrix<T> dc_next = Matrix<T>::Zero(batch, h);
  const Matrix<T> zeros = Matrix<T>::Zero(batch, h);
  for (std::size_t t = steps; t-- > 0;) {
    const Matrix<T>& gate = cache.gates[t];
    const Matrix<T>& cell = cache.cells[t];
    const Matrix<T>& c_prev = t > 0 ? cache.cells[t - 1] : zeros;
    const Matrix<T>& h_prev = t > 0 ? cache.hidden[t - 1] : zeros;
    Matrix<T> da = Matrix<T>::Zero(batch, 4 * h);
    Matrix<T> dc = Matrix<T>::Zero(batch, h);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const auto len = lengths[static_cast<std::size_t>(b)];
      if (t >= len) continue;
      const auto row = static_cast<Eigen::Index>(static_cast<std::size_t>(b) * stride + step_position(t, len, reverse));
      for (Eigen::Index k = 0; k < h; ++k) {
        const T dh = dh_next(b, k) + d_out(row, offset + k);
        const T i = gate(b, k), f = gate(b, h + k), gg = gate(b, 2 * h + k), o = gate(b, 3 * h + k);
        const T tc = std::tanh(cell(b, k));
        const T c = dc_next(b, k) + dh * o * (T(1) - tc * tc);
        dc(b, k) = c;
        da(b, k) = c * gg * i * (T(1) - i);
        da(b, h + k) = c * c_prev(b, k) * f * (T(1) - f);
        da(b, 2 * h + k) = c * i * (T(1) - gg * gg);
        da(b, 3 * h + k) = dh * tc * o * (T(1) - o);
      }
    }
    g.wx.noalias() += da.transpose() * cache.inputs[t];
    g.wh.noalias() += da.transpose() * h_prev;
    g.b += da.colwise().sum();
    if (d_input) {
      const Matrix<T> dx = da * p.wx;
      for (Eigen::Index b = 0; b < batch; ++b) {
        const auto len = lengths[static_cast<std::size_t>(b)];
        if (t >= len) continue;
        d_input->row(static_cast<Eigen::Index>(static_cast<std::size_t>(b) * stride +
                                               step_position(t, len, reverse))) += dx.row(b);
      }
    }
    dh_next = da * p.wh;
    dc_next = dc.cwiseProduct(gate.middleCols(h, h));
  }
}

}  // namespace

template <typename T>
void bilstm_forward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, const Matrix<T>& input,
                    std::span<const std::size_t> lengths, std::size_t steps, Matrix<T>& out, LstmCache<T>& cf,
                    LstmCache<T>& cb) {
  const Eigen::Index h = fwd.wh.cols();
  out = Matrix<T>::Zero(input.rows(), 2 * h);
  lstm_direction(fwd, false, input, lengths, steps, out, 0, cf);
  lstm_direction(bwd, true, input, lengths, steps, out, h, cb);
}

template <typename T>
void bilstm_backward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, std::span<const std::size_t> lengths,
                     std::size_t steps, const LstmCache<T>& cf, const LstmCache<T>& cb, const Matrix<T>& d_out,
                     LstmParams<T>& g_fwd, LstmParams<T>& g_bwd, Matrix<T>* d_input) {
  const Eigen::Index h = fwd.wh.cols();
  lstm_direction_backward(fwd, false, lengths, steps, cf, d_out, 0, g_fwd, d_input);
  lstm_direction_backward(bwd, true, lengths, steps, cb, d_out, h, g_bwd, d_input);
}

template <typename T>
void forward(const NeuralConfig& cfg, const NeuralParams<T>& p, BatchNormStats<T>& bn, const WindowTensor& wt,
             Mode mode, std::uint64_t step, ForwardCache<T>& cache, Depth depth) {
  if (wt.token_len != static_cast<std::size_t>(cfg.token_len) || wt.window != static_cast<std::size_t>(cfg.window) ||
      wt.ids.size() != wt.batch * wt.token_len * wt.window || wt.lengths.size() != wt.batch) {
    throw Error(ErrorKind::ShapeMismatch, "window tensor does not match the network configuration");
  }
  if (p.embed.cols() != cfg.embed_dim || p.conv_w.rows() != cfg.conv_filters ||
      p.lstm1_fwd.wx.cols() != cfg.flat_width()) {
    throw Error(ErrorKind::ShapeMismatch, "parameters do not match the network configuration");
  }
  const auto B = wt.batch, T_ = wt.token_len, W = wt.window;
  const auto E = static_cast<Eigen::Index>(cfg.embed_dim);
  const auto F = static_cast<Eigen::Index>(cfg.conv_filters);
  const auto K = cfg.conv_kernel, pad = cfg.conv_pad(), stride = cfg.conv_stride;
  const auto Wc = static_cast<std::size_t>(cfg.conv_out_len());
  const auto rows = B * T_;

  cache.mode = mode;
  cache.batch = B;
  cache.steps = T_;
  cache.lengths = wt.lengths;
  cache.mask = wt.mask;
  cache.ids = wt.ids;

  cache.embedded.resize(static_cast<Eigen::Index>(rows * W), E);
  for (std::size_t i = 0; i < rows * W; ++i) {
    const int id = wt.ids[i];
    if (id < 0 || id >= p.embed.rows()) throw Error(ErrorKind::ShapeMismatch, "symbol id outside the embedding");
    cache.embedded.row(static_cast<Eigen::Index>(i)) = p.embed.row(id);
  }

  cache.patches = Matrix<T>::Zero(static_cast<Eigen::Index>(rows * Wc), K * E);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < Wc; ++j) {
      for (int k = 0; k < K; ++k) {
        const int src = static_cast<int>(j) * stride + k - pad;
        if (src < 0 || src >= static_cast<int>(W)) continue;
        cache.patches.block(static_cast<Eigen::Index>(r * Wc + j), k * E, 1, E) =
            cache.embedded.row(static_cast<Eigen::Index>(r * W + static_cast<std::size_t>(src)));
      }
    }
  }
  cache.conv.noalias() = cache.patches * p.conv_w.transpose();
  cache.conv.rowwise() += p.conv_b.row(0);

  // Normalization statistics come from real positions only.
  std::size_t n_real = 0;
  for (auto m : wt.mask) n_real += m;
  const std::size_t count = n_real * Wc;
  Matrix<T> mean = bn.mean, var = bn.var;
  cache.batch_stats = mode == Mode::Train && count > 0;
  if (cache.batch_stats) {
    Matrix<T> sum = Matrix<T>::Zero(1, F);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!wt.mask[r]) continue;
      for (std::size_t j = 0; j < Wc; ++j) sum += cache.conv.row(static_cast<Eigen::Index>(r * Wc + j));
    }
    mean = sum / static_cast<T>(count);
    Matrix<T> sq = Matrix<T>::Zero(1, F);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!wt.mask[r]) continue;
      for (std::size_t j = 0; j < Wc; ++j) {
        sq += (cache.conv.row(static_cast<Eigen::Index>(r * Wc + j)) - mean).cwiseAbs2();
      }
    }
    var = sq / static_cast<T>(count);
    const T m = static_cast<T>(cfg.bn_momentum);
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
    bn.mean = (T(1) - m) * bn.mean + m * mean;
    bn.var = (T(1) - m) * bn.var + m * unbias * var;
  }
  cache.bn_inv_std = (var.array() + static_cast<T>(cfg.bn_eps)).rsqrt().matrix();
  cache.xhat = ((cache.conv.rowwise() - mean.row(0)).array().rowwise() * cache.bn_inv_std.row(0).array()).matrix();
  cache.dropped = (cache.xhat.array().rowwise() * p.bn_gamma.row(0).array()).matrix();
  cache.dropped.rowwise() += p.bn_beta.row(0);

  if (mode == Mode::Train && cfg.dropout_p > 0.0) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_p));
    cache.drop_scale.resize(cache.dropped.rows(), cache.dropped.cols());
    for (Eigen::Index i = 0; i < cache.drop_scale.size(); ++i) {
      const double u = counter_uniform(cfg.seed, step, static_cast<std::uint64_t>(i));
      cache.drop_scale.data()[i] = u < cfg.dropout_p ? T(0) : keep_scale;
    }
    cache.dropped = cache.dropped.cwiseProduct(cache.drop_scale);
  } else {
    cache.drop_scale.resize(0, 0);
  }

  const int half = cfg.pool_kernel / 2;
  cache.pooled.resize(cache.dropped.rows(), F);
  cache.pool_source.assign(static_cast<std::size_t>(cache.pooled.size()), 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < Wc; ++j) {
      const auto out_row = static_cast<Eigen::Index>(r * Wc + j);
      for (Eigen::Index f = 0; f < F; ++f) {
        T best = -std::numeric_limits<T>::infinity();
        int arg = static_cast<int>(j);
        for (int d = -half; d <= half; ++d) {
          const int src = static_cast<int>(j) + d;
          if (src < 0 || src >= static_cast<int>(Wc)) continue;
          const T v = cache.dropped(static_cast<Eigen::Index>(r * Wc) + src, f);
          if (v > best) {
            best = v;
            arg = src;
          }
        }
        cache.pooled(out_row, f) = best;
        cache.pool_source[static_cast<std::size_t>(out_row * F + f)] = arg;
      }
    }
  }

  const Eigen::Map<const Matrix<T>> flat(cache.pooled.data(), static_cast<Eigen::Index>(rows),
                                         static_cast<Eigen::Index>(Wc) * F);
  bilstm_forward<T>(p.lstm1_fwd, p.lstm1_bwd, flat, wt.lengths, T_, cache.lstm1, cache.l1f, cache.l1b);
  if (depth == Depth::FirstLstm) return;
  bilstm_forward<T>(p.lstm2_fwd, p.lstm2_bwd, cache.lstm1, wt.lengths, T_, cache.lstm2, cache.l2f, cache.l2b);
  cache.emissions.noalias() = cache.lstm2 * p.out_w.transpose();
  cache.emissions.rowwise() += p.out_b.row(0);
}

template <typename T>
T crf_loss(const ForwardCache<T>& cache, const Matrix<T>& trans, std::span<const BoundaryVector> gold,
           Matrix<T>* d_emissions, Matrix<T>* d_trans) {
  if (gold.size() != cache.batch) throw Error(ErrorKind::ShapeMismatch, "one gold vector per word is required");
  const chain::Transitions<T> tr{{{trans(0, 0), trans(0, 1)}, {trans(1, 0), trans(1, 1)}}};
  if (d_emissions) *d_emissions = Matrix<T>::Zero(cache.emissions.rows(), 2);
  if (d_trans) *d_trans = Matrix<T>::Zero(2, 2);
  if (cache.batch == 0) return T(0);
  const T scale = T(1) / static_cast<T>(cache.batch);
  T total = 0;
  std::vector<T> node;
  for (std::size_t b = 0; b < cache.batch; ++b) {
    const std::size_t len = cache.lengths[b];
    if (gold[b].size() != len) throw Error(ErrorKind::LengthMismatch, "gold labels do not match the word length");
    if (len == 0) continue;
    const std::span<const T> emit(cache.emissions.data() + 2 * b * cache.steps, 2 * len);
    node.assign(2 * len, T(0));
    chain::Transitions<T> edge;
    const T log_z = chain::marginals<T>(emit, tr, node, edge);
    total += log_z - chain::sequence_score<T>(emit, tr, gold[b].bits());
    if (d_emissions) {
      for (std::size_t t = 0; t < len; ++t) {
        const auto row = static_cast<Eigen::Index>(b * cache.steps + t);
        for (int y = 0; y < 2; ++y) {
          const T target = gold[b][t] == (y == 1) ? T(1) : T(0);
          (*d_emissions)(row, y) = (node[2 * t + static_cast<std::size_t>(y)] - target) * scale;
        }
      }
    }
    if (d_trans) {
      for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 2; ++c) (*d_trans)(a, c) += edge[a][c] * scale;
      }
      for (std::size_t t = 1; t < len; ++t) (*d_trans)(gold[b][t - 1], gold[b][t]) -= scale;
    }
  }
  return total * scale;
}

template <typename T>
void backward(const NeuralConfig& cfg, const NeuralParams<T>& p, const ForwardCache<T>& cache,
              const Matrix<T>& d_emissions, NeuralParams<T>& grad) {
  const auto rows = cache.batch * cache.steps;
  const auto W = rows ? cache.ids.size() / rows : 0;
  const auto Wc = static_cast<std::size_t>(cfg.conv_out_len());
  const auto E = static_cast<Eigen::Index>(cfg.embed_dim);
  const auto F = static_cast<Eigen::Index>(cfg.conv_filters);
  const auto K = cfg.conv_kernel, pad = cfg.conv_pad(), stride = cfg.conv_stride;

  grad.out_w.noalias() += d_emissions.transpose() * cache.lstm2;
  grad.out_b += d_emissions.colwise().sum();
  const Matrix<T> d_lstm2 = d_emissions * p.out_w;

  Matrix<T> d_lstm1 = Matrix<T>::Zero(cache.lstm1.rows(), cache.lstm1.cols());
  bilstm_backward<T>(p.lstm2_fwd, p.lstm2_bwd, cache.lengths, cache.steps, cache.l2f, cache.l2b, d_lstm2,
                     grad.lstm2_fwd, grad.lstm2_bwd, &d_lstm1);
  Matrix<T> d_flat = Matrix<T>::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(Wc) * F);
  bilstm_backward<T>(p.lstm1_fwd, p.lstm1_bwd, cache.lengths, cache.steps, cache.l1f, cache.l1b, d_lstm1,
                     grad.lstm1_fwd, grad.lstm1_bwd, &d_flat);
  const Eigen::Map<const Matrix<T>> d_pooled(d_flat.data(), static_cast<Eigen::Index>(rows * Wc), F);

  Matrix<T> d_y = Matrix<T>::Zero(cache.pooled.rows(), F);
  for (Eigen::Index i = 0; i < d_pooled.rows(); ++i) {
    const auto base = (i / static_cast<Eigen::Index>(Wc)) * static_cast<Eigen::Index>(Wc);
    for (Eigen::Index f = 0; f < F; ++f) {
      const T g = d_pooled(i, f);
      if (g == T(0)) continue;
      d_y(base + cache.pool_source[static_cast<std::size_t>(i * F + f)], f) += g;
    }
  }
  if (cache.drop_scale.size() > 0) d_y = d_y.cwiseProduct(cache.drop_scale);

  grad.bn_gamma += d_y.cwiseProduct(cache.xhat).colwise().sum();
  grad.bn_beta += d_y.colwise().sum();
  const Matrix<T> d_xhat = (d_y.array().rowwise() * p.bn_gamma.row(0).array()).matrix();
  Matrix<T> d_conv = Matrix<T>::Zero(d_xhat.rows(), F);
  if (cache.batch_stats) {
    std::size_t count = 0;
    Matrix<T> s1 = Matrix<T>::Zero(1, F), s2 = Matrix<T>::Zero(1, F);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!cache.mask[r]) continue;
      for (std::size_t j = 0; j < Wc; ++j) {
        const auto i = static_cast<Eigen::Index>(r * Wc + j);
        s1 += d_xhat.row(i);
        s2 += d_xhat.row(i).cwiseProduct(cache.xhat.row(i));
        ++count;
      }
    }
    const T n = static_cast<T>(count);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!cache.mask[r]) continue;
      for (std::size_t j = 0; j < Wc; ++j) {
        const auto i = static_cast<Eigen::Index>(r * Wc + j);
        d_conv.row(i) = ((n * d_xhat.row(i) - s1 - cache.xhat.row(i).cwiseProduct(s2)).array() *
                         cache.bn_inv_std.row(0).array() / n)
                            .matrix();
      }
    }
  } else {
    d_conv = (d_xhat.array().rowwise() * cache.bn_inv_std.row(0).array()).matrix();
  }

  grad.conv_w.noalias() += d_conv.transpose() * cache.patches;
  grad.conv_b += d_conv.colwise().sum();
  const Matrix<T> d_patches = d_conv * p.conv_w;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < Wc; ++j) {
      for (int k = 0; k < K; ++k) {
        const int src = static_cast<int>(j) * stride + k - pad;
        if (src < 0 || src >= static_cast<int>(W)) continue;
        const int id = cache.ids[r * W + static_cast<std::size_t>(src)];
        grad.embed.row(id) += d_patches.block(static_cast<Eigen::Index>(r * Wc + j), k * E, 1, E);
      }
    }
  }
}

template <typename T>
T loss_and_gradient(const NeuralConfig& cfg, const NeuralParams<T>& p, BatchNormStats<T>& bn, const WindowTensor& wt,
                    std::span<const BoundaryVector> gold, Mode mode, std::uint64_t step, NeuralParams<T>* grad) {
  ForwardCache<T> cache;
  forward(cfg, p, bn, wt, mode, step, cache);
  if (!grad) return crf_loss<T>(cache, p.trans, gold);
  Matrix<T> d_emit, d_trans;
  const T loss = crf_loss<T>(cache, p.trans, gold, &d_emit, &d_trans);
  *grad = p.zeros_like();
  backward(cfg, p, cache, d_emit, *grad);
  grad->trans += d_trans;
  return loss;
}

NeuralModel::NeuralModel(NeuralConfig cfg, Channel channel, Alphabet alphabet)
    : cfg_(cfg), channel_(channel), alphabet_(std::move(alphabet)) {
  cfg_.validate();
  params_ = init_params<float>(cfg_, alphabet_.size(), cfg_.seed);
  bn_ = init_bn_stats<float>(cfg_);
}

std::vector<Word> NeuralModel::clip(std::span<const Word> words) const {
  std::vector<Word> out(words.begin(), words.end());
  for (auto& w : out) {
    if (w.size() > static_cast<std::size_t>(cfg_.token_len)) {
      std::cerr << "warning: '" << to_utf8(w) << "' is longer than " << cfg_.token_len
                << " letters and was truncated\n";
      w.resize(static_cast<std::size_t>(cfg_.token_len));
    }
  }
  return out;
}

std::vector<BoundaryVector> NeuralModel::predict(std::span<const Word> words) const {
  const auto clipped = clip(words);
  std::vector<BoundaryVector> out;
  out.reserve(words.size());
  const std::size_t chunk = 256;
  BatchNormStats<float> bn = bn_;
  ForwardCache<float> cache;
  const chain::Transitions<float> tr{
      {{params_.trans(0, 0), params_.trans(0, 1)}, {params_.trans(1, 0), params_.trans(1, 1)}}};
  for (std::size_t start = 0; start < clipped.size(); start += chunk) {
    const std::size_t n = std::min(chunk, clipped.size() - start);
    const auto wt = tensorize(std::span<const Word>(clipped.data() + start, n), alphabet_, cfg_);
    forward<float>(cfg_, params_, bn, wt, Mode::Eval, 0, cache);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t len = wt.lengths[b];
      const std::span<const float> emit(cache.emissions.data() + 2 * b * wt.token_len, 2 * len);
      auto labels = chain::viterbi<float>(emit, tr);
      labels.resize(words[start + b].size(), 0);
      out.emplace_back(std::move(labels));
    }
  }
  return out;
}

BoundaryVector NeuralModel::predict(std::u32string_view word) const {
  const Word w(word);
  return predict(std::span<const Word>(&w, 1)).front();
}

std::vector<Matrix<float>> NeuralModel::first_lstm_features(std::span<const Word> words) const {
  const auto clipped = clip(words);
  std::vector<Matrix<float>> out;
  out.reserve(words.size());
  const std::size_t chunk = 256;
  BatchNormStats<float> bn = bn_;
  ForwardCache<float> cache;
  for (std::size_t start = 0; start < clipped.size(); start += chunk) {
    const std::size_t n = std::min(chunk, clipped.size() - start);
    const auto wt = tensorize(std::span<const Word>(clipped.data() + start, n), alphabet_, cfg_);
    forward<float>(cfg_, params_, bn, wt, Mode::Eval, 0, cache, Depth::FirstLstm);
    for (std::size_t b = 0; b < n; ++b) {
      out.push_back(cache.lstm1.middleRows(static_cast<Eigen::Index>(b * wt.token_len),
                                           static_cast<Eigen::Index>(wt.lengths[b])));
    }
  }
  return out;
}

ModelFile NeuralModel::to_model_file() const {
  ModelFile m("nn");
  m.config = cfg_.to_json();
  m.config["channel"] = to_string(channel_);
  std::vector<std::string> symbols;
  for (char32_t c : alphabet_.symbols()) symbols.push_back(to_utf8(std::u32string(1, c)));
  m.add_strings("alphabet", symbols);
  const auto add = [&m](const std::string& name, const Matrix<float>& t) {
    m.add_f32(name, {static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())},
              std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
  };
  params_.for_each(add);
  add("bn_running_mean", bn_.mean);
  add("bn_running_var", bn_.var);
  return m;
}

NeuralModel NeuralModel::from_model_file(const ModelFile& file) {
  if (file.engine != "nn") throw Error(ErrorKind::Format, "model file holds '" + file.engine + "', not nn");
  std::u32string symbols;
  for (const auto& s : file.strings("alphabet")) symbols += from_utf8(s);
  NeuralModel m(NeuralConfig::from_json(file.config), channel_from_string(file.config.value("channel", "orth")),
                Alphabet(symbols));
  const auto load = [&file](const std::string& name, Matrix<float>& t) {
    const auto values =
        file.f32(name, {static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())});
    std::copy(values.begin(), values.end(), t.data());
  };
  m.params_.for_each(load);
  load("bn_running_mean", m.bn_.mean);
  load("bn_running_var", m.bn_.var);
  return m;
}

std::uint64_t NeuralModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](const std::string&, const Matrix<float>& t) {
    h = fnv1a(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float), h);
  };
  params_.for_each(feed);
  feed("", bn_.mean);
  feed("", bn_.var);
  return h;
}

double word_error_pct(const NeuralModel& model, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::vector<Word> words;
  words.reserve(ds.size());
  for (const auto& e : ds.entries) words.push_back(channel_word(e, model.channel()));
  const auto pred = model.predict(words);
  std::size_t errors = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != channel_bounds(ds.entries[i], model.channel())) ++errors;
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(ds.size());
}

namespace {

void check_lengths(const Dataset& ds, Channel channel, int limit) {
  for (const auto& e : ds.entries) {
    const auto& w = channel_word(e, channel);
    if (w.size() > static_cast<std::size_t>(limit)) {
      throw Error(ErrorKind::WordTooLong, "training word '" + to_utf8(w) + "' has " + std::to_string(w.size()) +
                                              " letters; the limit is " + std::to_string(limit));
    }
  }
}

}  // namespace

NeuralTrainResult train_neural(const Dataset& train, const Dataset& val, const NeuralConfig& cfg, Channel channel,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorKind::EmptyTraining, "neural training set is empty");
  if (val.empty()) throw Error(ErrorKind::InvalidArgument, "neural validation set is empty");
  check_lengths(train, channel, cfg.token_len);
  check_lengths(val, channel, cfg.token_len);

  std::vector<Word> words;
  std::vector<BoundaryVector> gold;
  for (const auto& e : train.entries) {
    words.push_back(channel_word(e, channel));
    gold.push_back(channel_bounds(e, channel));
  }
  NeuralTrainResult result;
  result.model = NeuralModel(cfg, channel, Alphabet::from_words(words));
  NeuralModel& model = result.model;

  std::vector<Matrix<float>*> params;
  model.params().for_each([&params](const std::string&, Matrix<float>& m) { params.push_back(&m); });
  std::vector<Matrix<float>> adam_m, adam_v;
  for (auto* m : params) {
    adam_m.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
    adam_v.push_back(Matrix<float>::Zero(m->rows(), m->cols()));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  NeuralParams<float> best_params = model.params();
  BatchNormStats<float> best_bn = model.bn_stats();
  double best_ower = std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  std::vector<std::size_t> order(words.size());
  std::vector<Word> batch_words;
  std::vector<BoundaryVector> batch_gold;
  NeuralParams<float> grad;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(epoch))));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      batch_words.clear();
      batch_gold.clear();
      for (std::size_t i = 0; i < n; ++i) {
        batch_words.push_back(words[order[start + i]]);
        batch_gold.push_back(gold[order[start + i]]);
      }
      const auto wt = tensorize(batch_words, model.alphabet(), cfg);
      const float loss = loss_and_gradient<float>(cfg, model.params(), model.bn_stats(), wt, batch_gold, Mode::Train,
                                                  step, &grad);
      if (!std::isfinite(loss)) throw Error(ErrorKind::Divergence, "neural loss became non-finite");
      loss_sum += static_cast<double>(loss) * static_cast<double>(n);

      std::vector<Matrix<float>*> grads;
      grad.for_each([&grads](const std::string&, Matrix<float>& m) { grads.push_back(&m); });
      double norm_sq = 0.0;
      for (auto* g : grads) norm_sq += static_cast<double>(g->cast<double>().squaredNorm());
      if (!std::isfinite(norm_sq)) throw Error(ErrorKind::Divergence, "neural gradient became non-finite");
      const double norm = std::sqrt(norm_sq);
      const float clip = cfg.grad_clip > 0.0 && norm > cfg.grad_clip ? static_cast<float>(cfg.grad_clip / norm) : 1.0f;

      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const auto lr = static_cast<float>(cfg.learning_rate);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = adam_m[k];
        auto& v = adam_v[k];
        const Matrix<float> g = *grads[k] * clip;
        m = static_cast<float>(kBeta1) * m + static_cast<float>(1.0 - kBeta1) * g;
        v = static_cast<float>(kBeta2) * v + static_cast<float>(1.0 - kBeta2) * g.cwiseAbs2();
        const auto m_hat = m.array() / static_cast<float>(c1);
        const auto v_hat = v.array() / static_cast<float>(c2);
        params[k]->array() -= lr * m_hat / (v_hat.sqrt() + static_cast<float>(kEps));
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(words.size());
    const double ower = word_error_pct(model, val);
    result.train_loss.push_back(mean_loss);
    result.val_ower.push_back(ower);
    if (ower < best_ower) {
      best_ower = ower;
      best_params = model.params();
      best_bn = model.bn_stats();
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, mean_loss, ower);
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) break;
  }
  model.params() = best_params;
  model.bn_stats() = best_bn;
  return result;
}

#define SYLLAB_NN_INSTANTIATE(T)                                                                                    \
  template struct NeuralParams<T>;                                                                                \
  template struct ForwardCache<T>;                                                                                \
  template NeuralParams<T> init_params<T>(const NeuralConfig&, int, std::uint64_t);                               \
  template BatchNormStats<T> init_bn_stats<T>(const NeuralConfig&);                                               \
  template LstmParams<T> init_lstm<T>(int, int, std::uint64_t, std::uint64_t);                                    \
  template void forward<T>(const NeuralConfig&, const NeuralParams<T>&, BatchNormStats<T>&, const WindowTensor&,  \
                           Mode, std::uint64_t, ForwardCache<T>&, Depth);                                         \
  template T crf_loss<T>(const ForwardCache<T>&, const Matrix<T>&, std::span<const BoundaryVector>, Matrix<T>*,   \
                         Matrix<T>*);                                                                             \
  template void backward<T>(const NeuralConfig&, const NeuralParams<T>&, const ForwardCache<T>&, const Matrix<T>&, \
                            NeuralParams<T>&);                                                                    \
  template T loss_and_gradient<T>(const NeuralConfig&, const NeuralParams<T>&, BatchNormStats<T>&,                \
                                  const WindowTensor&, std::span<const BoundaryVector>, Mode, std::uint64_t,      \
                                  NeuralParams<T>*);                                                              \
  template void bilstm_forward<T>(const LstmParams<T>&, const LstmParams<T>&, const Matrix<T>&,                   \
                                  std::span<const std::size_t>, std::size_t, Matrix<T>&, LstmCache<T>&,           \
                                  LstmCache<T>&);                                                                 \
  template void bilstm_backward<T>(const LstmParams<T>&, const LstmParams<T>&, std::span<const std::size_t>,      \
                                   std::size_t, const LstmCache<T>&, const LstmCache<T>&, const Matrix<T>&,       \
                                   LstmParams<T>&, LstmParams<T>&, Matrix<T>*);

SYLLAB_NN_INSTANTIATE(float)
SYLLAB_NN_INSTANTIATE(double)

}  // namespace syllab::nn
