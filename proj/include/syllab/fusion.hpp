#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "syllab/core.hpp"
#include "syllab/corpus.hpp"
#include "syllab/model_file.hpp"
#include "syllab/neural.hpp"

namespace syllab::fusion {

using nn::Matrix;

enum class Combine { Concat, Sum };

const char* to_string(Combine c);
Combine combine_from_string(std::string_view s);

struct FusionConfig {
  double dropout_p = 0.5;
  int lstm_units = 128;
  Combine combine = Combine::Concat;
  /// Divide attention scores by sqrt(width).
  bool scaled = false;
  int epochs_max = 30;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double grad_clip = 5.0;
  int patience = 0;
  std::uint64_t seed = 0;

  /// Width of the head input for trunk outputs of the given widths.
  int input_width(int width_a, int width_b) const;
  /// Throws InvalidArgument; widths of 0 skip the combine check.
  void validate(int width_a = 0, int width_b = 0) const;
  nlohmann::json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);
};

/// Scores exp(a_i . b_j) normalized over the unmasked rows of b. Rows of a
/// whose mask is 0 get a zero context. Empty masks mean "all real". Throws
/// DegenerateMask when b has no unmasked row, ShapeMismatch on width or mask
/// length mismatches.
template <typename T>
Matrix<T> attend(const Matrix<T>& a, const Matrix<T>& b, std::span<const std::uint8_t> mask_a = {},
                 std::span<const std::uint8_t> mask_b = {}, bool scaled = false, Matrix<T>* weights = nullptr);

template <typename T>
struct HeadParams {
  nn::LstmParams<T> fwd;
  nn::LstmParams<T> bwd;
  Matrix<T> out_w;  // [2 x 2H]
  Matrix<T> out_b;  // [1 x 2]

  template <typename F>
  void for_each(F&& f) {
    f("head_fwd_wx", fwd.wx);
    f("head_fwd_wh", fwd.wh);
    f("head_fwd_b", fwd.b);
    f("head_bwd_wx", bwd.wx);
    f("head_bwd_wh", bwd.wh);
    f("head_bwd_b", bwd.b);
    f("head_out_w", out_w);
    f("head_out_b", out_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<HeadParams*>(this)->for_each([&f](const char* name, const Matrix<T>& m) { f(name, m); });
  }

  HeadParams zeros_like() const;
  template <typename U>
  HeadParams<U> cast() const {
    HeadParams<U> out;
    out.fwd = {fwd.wx.template cast<U>(), fwd.wh.template cast<U>(), fwd.b.template cast<U>()};
    out.bwd = {bwd.wx.template cast<U>(), bwd.wh.template cast<U>(), bwd.b.template cast<U>()};
    out.out_w = out_w.template cast<U>();
    out.out_b = out_b.template cast<U>();
    return out;
  }
};

template <typename T>
HeadParams<T> init_head(int input_width, int units, std::uint64_t seed);

/// Trunk outputs for one paired word, rows = letters (clipped to token_len).
template <typename T>
struct PairFeatures {
  Matrix<T> a;
  Matrix<T> b;
};

/// Head input per word: dropout (train only) on both trunk outputs, then
/// attention from a over b, then concat or sum.
template <typename T>
Matrix<T> head_input(const FusionConfig& cfg, const PairFeatures<T>& f, nn::Mode mode, std::uint64_t step,
                     std::uint64_t word_index);

/// Mean over words of the summed per-letter cross-entropy. Inputs are the
/// head_input rows per word, gold is cut to the input length.
template <typename T>
T head_loss(const HeadParams<T>& p, std::span<const Matrix<T>> inputs, std::span<const BoundaryVector> gold,
            HeadParams<T>* grad = nullptr);

/// Per-letter class scores [L x 2] (softmax probabilities).
template <typename T>
std::vector<Matrix<T>> head_scores(const HeadParams<T>& p, std::span<const Matrix<T>> inputs);

class FusionModel {
 public:
  FusionModel() = default;
  /// Trunk a must be orthographic and b phonetic. Throws InvalidArgument.
  FusionModel(FusionConfig cfg, nn::NeuralModel trunk_a, nn::NeuralModel trunk_b);

  const FusionConfig& config() const noexcept { return cfg_; }
  const nn::NeuralModel& trunk_a() const noexcept { return a_; }
  const nn::NeuralModel& trunk_b() const noexcept { return b_; }
  HeadParams<float>& head() noexcept { return head_; }
  const HeadParams<float>& head() const noexcept { return head_; }

  std::vector<PairFeatures<float>> features(std::span<const Word> orth, std::span<const Word> phon) const;
  std::vector<Matrix<float>> scores(std::span<const Word> orth, std::span<const Word> phon) const;
  /// Boundary vectors have the orthographic length.
  std::vector<BoundaryVector> predict(std::span<const Word> orth, std::span<const Word> phon) const;
  BoundaryVector predict(std::u32string_view orth, std::u32string_view phon) const;
  /// Throws MissingPhonetic.
  std::vector<BoundaryVector> predict(const Dataset& ds) const;

  /// The trunk paths are stored as given; hashes are taken from the files.
  ModelFile to_model_file(const std::filesystem::path& trunk_a_path,
                          const std::filesystem::path& trunk_b_path) const;
  /// Relative trunk paths resolve against base_dir. Throws Format when a
  /// trunk file's hash no longer matches.
  static FusionModel from_model_file(const ModelFile& file, const std::filesystem::path& base_dir = {});

 private:
  FusionConfig cfg_;
  nn::NeuralModel a_;
  nn::NeuralModel b_;
  HeadParams<float> head_;
};

struct FusionTrainResult {
  FusionModel model;
  std::vector<double> train_loss;
  std::vector<double> val_ower;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(int epoch, double loss, double val_ower)>;

/// Trains the head only; trunks stay frozen and are checksummed before and
/// after (TrunkMutation). Throws MissingPhonetic, EmptyTraining,
/// InvalidArgument, Divergence.
FusionTrainResult train_fusion(const Dataset& train, const Dataset& val, const FusionConfig& cfg,
                               const nn::NeuralModel& trunk_a, const nn::NeuralModel& trunk_b,
                               const EpochCallback& on_epoch = {});

/// Percentage of words with at least one orthographic boundary error.
double word_error_pct(const FusionModel& model, const Dataset& ds);

}  // namespace syllab::fusion
