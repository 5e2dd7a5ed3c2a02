#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "syllab/core.hpp"

namespace syllab::bc {

/// Vowel inventory and multigraphs. Multigraphs are kept sorted longest
/// first, then lexicographically, which makes the greedy match total.
class ClusterTable {
 public:
  ClusterTable() = default;
  ClusterTable(std::u32string vowels, std::vector<Word> clusters, std::vector<Word> closed = {});

  bool is_vowel(char32_t c) const noexcept;
  /// Length of the longest multigraph starting at word[pos]; 1 for a plain
  /// vowel, 0 for a consonant.
  std::size_t match(std::u32string_view word, std::size_t pos) const noexcept;
  bool closes_syllable(std::u32string_view cluster) const noexcept;

  const std::vector<Word>& clusters() const noexcept { return clusters_; }

 private:
  std::u32string vowels_;
  std::vector<Word> clusters_;
  std::vector<Word> closed_;
};

class OnsetTable {
 public:
  OnsetTable() = default;
  explicit OnsetTable(std::vector<Word> onsets);

  /// Single consonants are always valid.
  bool valid(std::u32string_view onset) const noexcept;
  std::size_t max_length() const noexcept { return max_length_; }

 private:
  std::vector<Word> onsets_;  // sorted
  std::size_t max_length_ = 1;
};

/// Forced morpheme boundary: left|right with optional anchors.
struct PriorityRule {
  Word left;
  Word right;
  bool anchored_start = false;
  bool anchored_end = false;
};

struct Cluster {
  Word text;
  bool vowel = false;
  std::size_t start = 0;  // letter offset in the word
};

struct Tables {
  ClusterTable clusters;
  OnsetTable onsets;
  std::vector<PriorityRule> priority;
};

/// Parses the sectioned table format. Throws Format with a line number.
Tables parse_tables(std::string_view text);
Tables load_tables(const std::filesystem::path& path);
/// The Dutch tables shipped in data/dutch_bc.tbl, compiled in.
const Tables& default_tables();
std::string_view default_table_text();

/// Splits a word into vowel and consonant clusters. Unknown symbols become
/// single consonant clusters.
std::vector<Cluster> compress(std::u32string_view word, const ClusterTable& table);

BoundaryVector syllabify(std::u32string_view word, const Tables& tables);

}  // namespace syllab::bc
