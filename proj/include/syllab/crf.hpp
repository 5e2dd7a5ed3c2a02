#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "syllab/core.hpp"
#include "syllab/corpus.hpp"
#include "syllab/linear_chain.hpp"
#include "syllab/model_file.hpp"

namespace syllab::crf {

/// Character n-gram features over a fixed window around the gap after each
/// letter. For a window of 6 the span is letters i-2 .. i+3; every
/// contiguous n-gram inside the span is one template, plus a bias feature.
/// Positions outside the word read WORD_START / WORD_END sentinels.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(Alphabet alphabet, int window);

  /// Feature keys at every position, before dictionary lookup.
  std::vector<std::vector<std::string>> keys(std::u32string_view word) const;

  const Alphabet& alphabet() const noexcept { return alphabet_; }
  int window() const noexcept { return window_; }
  int left() const noexcept { return (window_ - 1) / 2; }
  int right() const noexcept { return window_ - 1 - left(); }

  /// Human-readable form of a key, e.g. "-2..0:^^k".
  std::string describe(const std::string& key) const;

 private:
  Alphabet alphabet_;
  int window_ = 6;
};

struct CrfHyper {
  int window = 6;
  double l2 = 1.0;
  int max_iterations = 200;
  /// Stop when ||grad|| <= tolerance * max(1, ||theta||).
  double tolerance = 1e-5;
  int threads = 0;  // 0: hardware concurrency
  std::function<void(int iteration, double objective)> on_iteration;
};

/// Feature weights are stored as [feature x label] followed by the 2x2
/// transition matrix.
class CrfModel {
 public:
  CrfModel() = default;
  /// Builds the alphabet and feature dictionary from the training words;
  /// every feature seen at least once is kept. Weights start at zero.
  CrfModel(const Dataset& train, int window);

  const FeatureExtractor& features() const noexcept { return extractor_; }
  std::size_t feature_count() const noexcept { return keys_.size(); }
  std::size_t dimension() const noexcept { return 2 * keys_.size() + 4; }

  /// Known feature ids per position; unseen features are dropped.
  std::vector<std::vector<std::uint32_t>> extract(std::u32string_view word) const;

  std::span<double> theta() noexcept { return theta_; }
  std::span<const double> theta() const noexcept { return theta_; }
  chain::Transitions<double> transitions() const;

  /// Emission scores [length x 2].
  std::vector<double> emissions(std::u32string_view word) const;
  double log_partition(std::u32string_view word) const;
  double score(std::u32string_view word, const BoundaryVector& labels) const;
  BoundaryVector viterbi(std::u32string_view word) const;
  /// Posterior marginals P(label_t = 1).
  std::vector<double> break_marginals(std::u32string_view word) const;

  double l2 = 1.0;
  std::uint64_t seed = 0;

  ModelFile to_model_file() const;
  static CrfModel from_model_file(const ModelFile& file);

 private:
  FeatureExtractor extractor_;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<double> theta_;
};

/// Negative L2-regularized conditional log-likelihood of a dataset under a
/// model structure. Per-word feature ids are compiled once.
class CrfObjective {
 public:
  CrfObjective(const CrfModel& model, const Dataset& data, double l2, int threads = 1);

  std::size_t dimension() const noexcept { return dim_; }
  /// Returns the objective and writes its gradient.
  double evaluate(std::span<const double> theta, std::span<double> grad) const;

 private:
  struct Compiled {
    std::vector<std::uint32_t> offsets;  // per position into ids
    std::vector<std::uint32_t> ids;
    std::vector<std::uint8_t> gold;
  };
  double word_terms(const Compiled& w, std::span<const double> theta, std::span<double> grad) const;

  std::size_t dim_;
  double l2_;
  int threads_;
  std::vector<Compiled> words_;
};

struct CrfTrainReport {
  std::vector<double> objective;  // per accepted iteration
  int iterations = 0;
  bool converged = false;
};

/// L-BFGS on the regularized objective. Throws EmptyTraining and
/// Divergence (non-finite objective).
CrfModel train_crf(const Dataset& train, const CrfHyper& hyper, CrfTrainReport* report = nullptr);

}  // namespace syllab::crf
