#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "syllab/core.hpp"
#include "syllab/corpus.hpp"
#include "syllab/model_file.hpp"

namespace syllab::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which string of an AnnotatedWord a model reads.
enum class Channel { Orth, Phon };

const char* to_string(Channel c);
Channel channel_from_string(std::string_view s);
const Word& channel_word(const AnnotatedWord& w, Channel c);
const BoundaryVector& channel_bounds(const AnnotatedWord& w, Channel c);

struct NeuralConfig {
  int token_len = 34;
  int window = 5;
  int embed_dim = 128;
  int conv_filters = 40;
  int conv_kernel = 3;
  int conv_stride = 1;
  double dropout_p = 0.3;
  int pool_kernel = 3;
  int lstm_units = 128;  // per direction, both layers
  int batch_size = 64;
  int epochs_max = 180;
  double learning_rate = 1e-3;
  double grad_clip = 5.0;  // global norm; 0 disables
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  /// Stop after this many epochs without a better validation OWER; 0 runs
  /// every epoch.
  int patience = 0;
  std::uint64_t seed = 0;

  int conv_pad() const noexcept { return (conv_kernel - 1) / 2; }
  int conv_out_len() const noexcept { return (window + 2 * conv_pad() - conv_kernel) / conv_stride + 1; }
  /// Same-padded, stride 1: the pool keeps the conv length.
  int pool_out_len() const noexcept { return conv_out_len(); }
  int flat_width() const noexcept { return pool_out_len() * conv_filters; }

  /// Throws InvalidArgument.
  void validate() const;
  nlohmann::json to_json() const;
  static NeuralConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct LstmParams {
  Matrix<T> wx;  // [4H x D], gate order i, f, g, o
  Matrix<T> wh;  // [4H x H]
  Matrix<T> b;   // [1 x 4H]
};

template <typename T>
struct NeuralParams {
  Matrix<T> embed;     // [alphabet x E]
  Matrix<T> conv_w;    // [F x K*E], tap-major
  Matrix<T> conv_b;    // [1 x F]
  Matrix<T> bn_gamma;  // [1 x F]
  Matrix<T> bn_beta;   // [1 x F]
  LstmParams<T> lstm1_fwd, lstm1_bwd, lstm2_fwd, lstm2_bwd;
  Matrix<T> out_w;  // [2 x 2H]
  Matrix<T> out_b;  // [1 x 2]
  Matrix<T> trans;  // [2 x 2], row = previous label

  /// Visits every trainable block in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  /// Same shapes, all zero.
  NeuralParams zeros_like() const;
  template <typename U>
  NeuralParams<U> cast() const;
  std::size_t size() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& s, F& f) {
    f("embed", s.embed);
    f("conv_w", s.conv_w);
    f("conv_b", s.conv_b);
    f("bn_gamma", s.bn_gamma);
    f("bn_beta", s.bn_beta);
    visit_lstm("lstm1_fwd", s.lstm1_fwd, f);
    visit_lstm("lstm1_bwd", s.lstm1_bwd, f);
    visit_lstm("lstm2_fwd", s.lstm2_fwd, f);
    visit_lstm("lstm2_bwd", s.lstm2_bwd, f);
    f("out_w", s.out_w);
    f("out_b", s.out_b);
    f("trans", s.trans);
  }
  template <typename L, typename F>
  static void visit_lstm(const std::string& name, L& l, F& f) {
    f(name + ".wx", l.wx);
    f(name + ".wh", l.wh);
    f(name + ".b", l.b);
  }
};

template <typename T>
template <typename U>
NeuralParams<U> NeuralParams<T>::cast() const {
  NeuralParams<U> out;
  out.embed = embed.template cast<U>();
  out.conv_w = conv_w.template cast<U>();
  out.conv_b = conv_b.template cast<U>();
  out.bn_gamma = bn_gamma.template cast<U>();
  out.bn_beta = bn_beta.template cast<U>();
  const auto lc = [](const LstmParams<T>& l) {
    return LstmParams<U>{l.wx.template cast<U>(), l.wh.template cast<U>(), l.b.template cast<U>()};
  };
  out.lstm1_fwd = lc(lstm1_fwd);
  out.lstm1_bwd = lc(lstm1_bwd);
  out.lstm2_fwd = lc(lstm2_fwd);
  out.lstm2_bwd = lc(lstm2_bwd);
  out.out_w = out_w.template cast<U>();
  out.out_b = out_b.template cast<U>();
  out.trans = trans.template cast<U>();
  return out;
}

/// Running batch-norm statistics (not trained by gradient).
template <typename T>
struct BatchNormStats {
  Matrix<T> mean;  // [1 x F]
  Matrix<T> var;   // [1 x F]
};

/// Seeded init: uniform in +-1/sqrt(fan_in), batch-norm scale 1 and shift
/// 0, zero transitions.
template <typename T>
NeuralParams<T> init_params(const NeuralConfig& cfg, int alphabet_size, std::uint64_t seed);
template <typename T>
BatchNormStats<T> init_bn_stats(const NeuralConfig& cfg);

/// Window ids [batch x token_len x window] and mask [batch x token_len].
struct WindowTensor {
  std::size_t batch = 0;
  std::size_t token_len = 0;
  std::size_t window = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;

  int id(std::size_t b, std::size_t t, std::size_t k) const { return ids[(b * token_len + t) * window + k]; }
};

/// Position t's window covers offsets t-window/2 .. t+window/2, PAD beyond
/// the word. Throws WordTooLong.
WindowTensor tensorize(std::span<const Word> words, const Alphabet& alphabet, const NeuralConfig& cfg);

enum class Mode { Train, Eval };
enum class Depth { Full, FirstLstm };

template <typename T>
struct LstmCache {
  std::vector<Matrix<T>> inputs;  // per step [B x D]
  std::vector<Matrix<T>> gates;   // per step [B x 4H], after activation
  std::vector<Matrix<T>> cells;   // per step [B x H]
  std::vector<Matrix<T>> hidden;  // per step [B x H]
};

/// Every intermediate of one forward pass, kept for the backward pass.
/// Row layouts are padded to the full token length so the shapes are the
/// nominal [batch x token_len x ...] ones.
template <typename T>
struct ForwardCache {
  Mode mode = Mode::Eval;
  bool batch_stats = false;  // normalization used this batch's statistics
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> mask;  // [B*T]
  std::vector<int> ids;            // [B*T*W]

  Matrix<T> embedded;  // [B*T*W x E]
  Matrix<T> patches;   // [B*T*Wc x K*E]
  Matrix<T> conv;      // [B*T*Wc x F]
  Matrix<T> xhat;      // normalized conv
  Matrix<T> bn_inv_std;
  Matrix<T> dropped;   // after scale/shift and dropout
  Matrix<T> drop_scale;
  Matrix<T> pooled;    // [B*T*Wc x F] == flat [B*T x Wc*F]
  std::vector<int> pool_source;
  Matrix<T> lstm1;     // [B*T x 2H]
  Matrix<T> lstm2;     // [B*T x 2H]
  Matrix<T> emissions; // [B*T x 2]
  LstmCache<T> l1f, l1b, l2f, l2b;

  std::vector<std::size_t> embedded_shape() const;
  std::vector<std::size_t> flat_shape() const;
  std::vector<std::size_t> lstm_shape() const;
};

/// Runs the network. Train mode uses batch statistics, updates the running
/// ones and applies dropout drawn from (cfg.seed, step); eval mode is
/// deterministic. Depth::FirstLstm stops after the first BiLSTM.
template <typename T>
void forward(const NeuralConfig& cfg, const NeuralParams<T>& p, BatchNormStats<T>& bn, const WindowTensor& wt,
             Mode mode, std::uint64_t step, ForwardCache<T>& cache, Depth depth = Depth::Full);

/// Mean over words of the per-word CRF negative log-likelihood, restricted
/// to real positions. Writes d(loss)/d(emissions) and d(loss)/d(trans)
/// when requested.
template <typename T>
T crf_loss(const ForwardCache<T>& cache, const Matrix<T>& trans, std::span<const BoundaryVector> gold,
           Matrix<T>* d_emissions = nullptr, Matrix<T>* d_trans = nullptr);

/// Accumulates parameter gradients given d(loss)/d(emissions).
template <typename T>
void backward(const NeuralConfig& cfg, const NeuralParams<T>& p, const ForwardCache<T>& cache,
              const Matrix<T>& d_emissions, NeuralParams<T>& grad);

/// forward + crf_loss + backward. grad is overwritten when given.
template <typename T>
T loss_and_gradient(const NeuralConfig& cfg, const NeuralParams<T>& p, BatchNormStats<T>& bn, const WindowTensor& wt,
                    std::span<const BoundaryVector> gold, Mode mode, std::uint64_t step, NeuralParams<T>* grad);

/// One BiLSTM layer over padded rows; exposed for the fusion head.
template <typename T>
void bilstm_forward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, const Matrix<T>& input,
                    std::span<const std::size_t> lengths, std::size_t steps, Matrix<T>& out, LstmCache<T>& cf,
                    LstmCache<T>& cb);
template <typename T>
void bilstm_backward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, std::span<const std::size_t> lengths,
                     std::size_t steps, const LstmCache<T>& cf, const LstmCache<T>& cb, const Matrix<T>& d_out,
                     LstmParams<T>& g_fwd, LstmParams<T>& g_bwd, Matrix<T>* d_input);
template <typename T>
LstmParams<T> init_lstm(int input_dim, int units, std::uint64_t seed, std::uint64_t stream);

class NeuralModel {
 public:
  NeuralModel() = default;
  NeuralModel(NeuralConfig cfg, Channel channel, Alphabet alphabet);

  const NeuralConfig& config() const noexcept { return cfg_; }
  Channel channel() const noexcept { return channel_; }
  const Alphabet& alphabet() const noexcept { return alphabet_; }
  NeuralParams<float>& params() noexcept { return params_; }
  const NeuralParams<float>& params() const noexcept { return params_; }
  BatchNormStats<float>& bn_stats() noexcept { return bn_; }
  const BatchNormStats<float>& bn_stats() const noexcept { return bn_; }

  /// Viterbi labels per word. Words longer than token_len are truncated
  /// (with a warning on stderr) and the tail gets no breaks.
  std::vector<BoundaryVector> predict(std::span<const Word> words) const;
  BoundaryVector predict(std::u32string_view word) const;

  /// Eval-mode output of the first BiLSTM, one [length x 2H] block per word.
  std::vector<Matrix<float>> first_lstm_features(std::span<const Word> words) const;

  ModelFile to_model_file() const;
  static NeuralModel from_model_file(const ModelFile& file);
  /// FNV-1a over every parameter and running statistic.
  std::uint64_t checksum() const;

 private:
  std::vector<Word> clip(std::span<const Word> words) const;

  NeuralConfig cfg_;
  Channel channel_ = Channel::Orth;
  Alphabet alphabet_;
  NeuralParams<float> params_;
  BatchNormStats<float> bn_;
};

struct NeuralTrainResult {
  NeuralModel model;
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_ower;    // per epoch
  int best_epoch = 0;              // 1-based
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_ower)>;

/// Adam on mini-batches; returns the parameters with the lowest validation
/// OWER. Throws EmptyTraining, WordTooLong, MissingPhonetic, Divergence.
NeuralTrainResult train_neural(const Dataset& train, const Dataset& val, const NeuralConfig& cfg, Channel channel,
                               const EpochCallback& on_epoch = {});

/// Word-level error rate (percent) of a model on a dataset's channel.
double word_error_pct(const NeuralModel& model, const Dataset& ds);

}  // namespace syllab::nn
