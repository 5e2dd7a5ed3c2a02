#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "syllab/core.hpp"

namespace syllab {

enum class Provenance { Dictionary, Loanword, Pseudoword, Synthetic };

const char* to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct Dataset {
  std::string name;
  std::vector<AnnotatedWord> entries;
  Provenance provenance = Provenance::Dictionary;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  bool has_phonetic() const noexcept;
  /// Content hash over every channel of every entry, in order.
  std::uint64_t hash() const;
};

/// Reads a corpus without enforcing uniqueness. Accepts both the TSV layout
/// (orth, orth_syllabified[, phon, phon_syllabified]) and plain lists with
/// one syllabified word per line; the layout is chosen per line by the
/// presence of a tab. Lines starting with '#' and blank lines are skipped.
std::vector<AnnotatedWord> read_records(std::istream& in);
std::vector<AnnotatedWord> read_records(const std::filesystem::path& path);

/// read_records followed by de-duplication of identical entries. Throws
/// ParseError if a form appears with conflicting annotations.
Dataset load_tsv(const std::filesystem::path& path);

void save_tsv(const Dataset& ds, std::ostream& out);
void save_tsv(const Dataset& ds, const std::filesystem::path& path);

struct AmbiguityReport {
  Dataset dataset;
  /// Orthographic forms dropped because they carried two or more distinct
  /// orthographic segmentations, in first-seen order.
  std::vector<Word> removed;
  /// Number of exact repeats collapsed into a single entry.
  std::size_t duplicates_merged = 0;
};

AmbiguityReport remove_ambiguous(const std::vector<AnnotatedWord>& raw);

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  int fold_count = 1;
};

struct Fold {
  Dataset train;
  Dataset test;
};

/// Fold k shuffles with seed + k and keeps round(train_fraction * n) words
/// for training. Both halves preserve the dataset's original order.
std::vector<Fold> split(const Dataset& ds, const SplitSpec& spec);

/// Deterministic segmentation rules for synthetic corpora.
///   cv         break after a vowel that is followed by consonant + vowel
///   vccv       cv, plus a break between the consonants of vowel-C-C-vowel
///   cv_hiatus  cv, plus a break between two adjacent vowels
BoundaryVector syllabify_by_rule(std::string_view rule, std::u32string_view word);

struct SyntheticSpec {
  std::string rule = "cv";
  std::size_t count = 0;
  std::uint64_t seed = 0;
  /// Emit a phonetic channel. The orthographic digraph "ie" then stands
  /// either for a single vowel (phonetic 'Y', no break inside) or for two
  /// vowels in hiatus (phonetic "i"+"e", break between). Gold boundaries
  /// are computed on the phonetic form, so the orthography alone cannot
  /// resolve the digraph.
  bool phonetic = false;
  /// Fraction of words that carry one "ie" digraph when phonetic is set.
  double digraph_rate = 0.5;
};

/// Throws RuleUnknown for unknown rules and InvalidArgument for count == 0.
Dataset gen_synthetic(const SyntheticSpec& spec);

}  // namespace syllab
