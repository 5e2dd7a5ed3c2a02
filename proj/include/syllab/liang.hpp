#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "syllab/core.hpp"
#include "syllab/corpus.hpp"

namespace syllab::liang {

inline constexpr char32_t kEdge = U'.';

/// Letters plus one digit per interletter slot (letters.size() + 1 slots).
struct Pattern {
  Word letters;
  std::vector<std::uint8_t> weights;

  /// TeX notation, e.g. ".ge2s" or "1na".
  std::string to_tex() const;
  /// Throws ParseError naming the token.
  static Pattern from_tex(std::string_view token);

  friend bool operator==(const Pattern&, const Pattern&) = default;
};

/// Pattern dictionary with a trie for application. Inserting a pattern that
/// already exists keeps the per-slot maximum, so application results do not
/// depend on insertion order.
class PatternSet {
 public:
  PatternSet();
  PatternSet(const PatternSet& other);
  PatternSet& operator=(const PatternSet& other);
  PatternSet(PatternSet&&) noexcept;
  PatternSet& operator=(PatternSet&&) noexcept;
  ~PatternSet();

  void insert(const Pattern& p);
  /// Raises a single slot of the pattern over `letters` to at least `digit`.
  void insert_digit(std::u32string_view letters, std::size_t slot, std::uint8_t digit);

  /// Stored weights, or nullptr.
  const std::vector<std::uint8_t>* find(std::u32string_view letters) const;

  std::size_t size() const noexcept { return patterns_.size(); }
  bool empty() const noexcept { return patterns_.empty(); }

  /// Max digit per slot of ".word." (word.size() + 3 slots).
  std::vector<std::uint8_t> slot_values(std::u32string_view word) const;

  /// Sorted by letters.
  std::vector<Pattern> patterns() const;

  int levels = 0;

  friend bool operator==(const PatternSet& a, const PatternSet& b) { return a.patterns_ == b.patterns_; }

 private:
  struct Trie;
  void rebuild_trie() const;

  std::map<Word, std::vector<std::uint8_t>> patterns_;
  mutable std::unique_ptr<Trie> trie_;
};

/// Odd digits break, even digits inhibit; the slot after the last letter
/// never breaks.
BoundaryVector apply_patterns(std::u32string_view word, const PatternSet& ps);

struct LevelConfig {
  std::size_t min_length = 1;
  std::size_t max_length = 3;
  int good_weight = 1;
  int bad_weight = 1;
  int threshold = 1;
};

/// Level k (1-based) writes digit k: odd levels add breaks, even levels
/// inhibit them.
struct PatgenConfig {
  std::vector<LevelConfig> levels;

  static PatgenConfig defaults();
  /// "1-3:1,1,2; 2-4:2,1,2" -> two levels.
  static PatgenConfig parse(std::string_view text);
  std::string to_string() const;
  void validate() const;
};

struct LevelStats {
  int level = 0;
  std::size_t patterns_added = 0;
  std::uint64_t fn = 0;  // on the training data after the level
  std::uint64_t fp = 0;
};

/// Exhaustive PATGEN-style generation over the training words' orthographic
/// channel. Throws EmptyTraining.
PatternSet generate_patterns(const Dataset& train, const PatgenConfig& cfg,
                             std::vector<LevelStats>* stats = nullptr);

/// Small grid of level settings, defaults first.
std::vector<PatgenConfig> tuning_grid();

/// Trains each candidate on a train_fraction slice of `train` and returns the
/// one with the fewest word errors on the rest (earliest wins ties).
PatgenConfig tune_patgen(const Dataset& train, const std::vector<PatgenConfig>& candidates,
                         double train_fraction = 0.9, std::uint64_t seed = 0);

void save_tex(const PatternSet& ps, std::ostream& out);
void save_tex(const PatternSet& ps, const std::filesystem::path& path);
PatternSet load_tex(std::istream& in);
PatternSet load_tex(const std::filesystem::path& path);
PatternSet parse_tex(std::string_view text);

}  // namespace syllab::liang
