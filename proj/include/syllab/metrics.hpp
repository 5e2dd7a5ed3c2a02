#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "syllab/core.hpp"

namespace syllab {

/// Per-letter boundary decisions, every letter including the last.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct WordScore {
  ConfusionCounts counts;
  bool correct = true;
};

/// Throws LengthMismatch.
WordScore score_word(const BoundaryVector& gold, const BoundaryVector& pred);

struct EvalReport {
  ConfusionCounts counts;
  std::uint64_t word_errors = 0;
  std::uint64_t word_total = 0;
  double ower_pct = 0;
  double oler_pct = 0;
  double her_pct = 0;
  double precision_pct = 0;
  double recall_pct = 0;
  double f1_pct = 0;
};

/// Micro-averaged metrics from pooled counts. When there are no gold
/// boundaries HER is 0 and recall 100; with no predicted boundaries
/// precision is 100 if nothing was missed, else 0. Throws InvalidArgument
/// for an empty set.
EvalReport aggregate(std::span<const WordScore> scores);
EvalReport report_from_counts(const ConfusionCounts& counts, std::uint64_t word_errors,
                              std::uint64_t word_total);

/// Running totals for streaming evaluation.
class EvalAccumulator {
 public:
  void add(const WordScore& s) noexcept {
    counts_ += s.counts;
    ++words_;
    if (!s.correct) ++errors_;
  }
  void add(const BoundaryVector& gold, const BoundaryVector& pred) { add(score_word(gold, pred)); }
  EvalReport report() const { return report_from_counts(counts_, errors_, words_); }
  std::uint64_t words() const noexcept { return words_; }

 private:
  ConfusionCounts counts_;
  std::uint64_t words_ = 0;
  std::uint64_t errors_ = 0;
};

/// Metric names in report order.
inline constexpr const char* kMetricNames[] = {"ower_pct",      "oler_pct",   "her_pct",
                                               "precision_pct", "recall_pct", "f1_pct"};

double metric_value(const EvalReport& r, std::string_view name);

/// Rounds to the three decimals used in every printed table.
double round3(double x);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct MetricSummary {
  std::string metric;
  double mean = 0;
  /// Sample standard deviation; absent for a single run.
  std::optional<double> sd;
};

std::vector<MetricSummary> summarize(std::span<const EvalReport> folds);

/// One-line table rendering: "OWER 0.446 OLER ..." with 3 decimals.
std::string format_report(const EvalReport& r);

}  // namespace syllab
