#include "syllab/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "syllab/error.hpp"

namespace syllab {

WordScore score_word(const BoundaryVector& gold, const BoundaryVector& pred) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorKind::LengthMismatch, "gold has " + std::to_string(gold.size()) +
                                               " labels, prediction " + std::to_string(pred.size()));
  }
  WordScore s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i];
    const bool p = pred[i];
    if (g && p) ++s.counts.tp;
    else if (!g && p) ++s.counts.fp;
    else if (g && !p) ++s.counts.fn;
    else ++s.counts.tn;
  }
  s.correct = s.counts.fp == 0 && s.counts.fn == 0;
  return s;
}

EvalReport report_from_counts(const ConfusionCounts& c, std::uint64_t word_errors,
                              std::uint64_t word_total) {
  if (word_total == 0) throw Error(ErrorKind::InvalidArgument, "cannot score an empty evaluation set");
  EvalReport r;
  r.counts = c;
  r.word_errors = word_errors;
  r.word_total = word_total;
  const auto pct = [](std::uint64_t num, std::uint64_t den) {
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  r.ower_pct = pct(word_errors, word_total);
  r.oler_pct = c.total() == 0 ? 0.0 : pct(c.fn + c.fp, c.total());
  if (c.tp + c.fn == 0) {
    r.her_pct = 0.0;
    r.recall_pct = 100.0;
  } else {
    r.her_pct = pct(c.fn, c.tp + c.fn);
    // Same numerator and denominator as HER, so R + HER = 100 up to rounding
    // of the two quotients; computed as a complement to hold it exactly.
    r.recall_pct = 100.0 - r.her_pct;
  }
  if (c.tp + c.fp == 0) {
    r.precision_pct = c.fn == 0 ? 100.0 : 0.0;
  } else {
    r.precision_pct = pct(c.tp, c.tp + c.fp);
  }
  const double ps = r.precision_pct + r.recall_pct;
  r.f1_pct = ps == 0.0 ? 0.0 : 2.0 * r.precision_pct * r.recall_pct / ps;
  return r;
}

EvalReport aggregate(std::span<const WordScore> scores) {
  EvalAccumulator acc;
  for (const auto& s : scores) acc.add(s);
  return acc.report();
}

double metric_value(const EvalReport& r, std::string_view name) {
  if (name == "ower_pct") return r.ower_pct;
  if (name == "oler_pct") return r.oler_pct;
  if (name == "her_pct") return r.her_pct;
  if (name == "precision_pct") return r.precision_pct;
  if (name == "recall_pct") return r.recall_pct;
  if (name == "f1_pct") return r.f1_pct;
  throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

double round3(double x) { return std::round(x * 1000.0) / 1000.0; }

nlohmann::json to_json(const EvalReport& r) {
  return {
      {"ower_pct", round3(r.ower_pct)},
      {"oler_pct", round3(r.oler_pct)},
      {"her_pct", round3(r.her_pct)},
      {"precision_pct", round3(r.precision_pct)},
      {"recall_pct", round3(r.recall_pct)},
      {"f1_pct", round3(r.f1_pct)},
      {"tp", r.counts.tp},
      {"fp", r.counts.fp},
      {"fn", r.counts.fn},
      {"tn", r.counts.tn},
      {"word_errors", r.word_errors},
      {"word_total", r.word_total},
  };
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  ConfusionCounts c;
  c.tp = j.at("tp").get<std::uint64_t>();
  c.fp = j.at("fp").get<std::uint64_t>();
  c.fn = j.at("fn").get<std::uint64_t>();
  c.tn = j.at("tn").get<std::uint64_t>();
  return report_from_counts(c, j.at("word_errors").get<std::uint64_t>(),
                            j.at("word_total").get<std::uint64_t>());
}

std::vector<MetricSummary> summarize(std::span<const EvalReport> folds) {
  if (folds.empty()) throw Error(ErrorKind::InvalidArgument, "no folds to summarize");
  std::vector<MetricSummary> out;
  const double n = static_cast<double>(folds.size());
  for (const char* name : kMetricNames) {
    double sum = 0;
    for (const auto& r : folds) sum += metric_value(r, name);
    MetricSummary m{name, sum / n, std::nullopt};
    if (folds.size() > 1) {
      double ss = 0;
      for (const auto& r : folds) {
        const double d = metric_value(r, name) - m.mean;
        ss += d * d;
      }
      m.sd = std::sqrt(ss / (n - 1.0));
    }
    out.push_back(m);
  }
  return out;
}

std::string format_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "OWER %.3f  OLER %.3f  HER %.3f  P %.3f  R %.3f  F1 %.3f  (%llu/%llu words)",
                r.ower_pct, r.oler_pct, r.her_pct, r.precision_pct, r.recall_pct, r.f1_pct,
                static_cast<unsigned long long>(r.word_errors),
                static_cast<unsigned long long>(r.word_total));
  return buf;
}

}  // namespace syllab
