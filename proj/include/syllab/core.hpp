#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace syllab {

/// A word is a sequence of unicode scalar values; one element per letter.
using Word = std::u32string;

inline constexpr char32_t kSyllableSeparator = U'-';

Word from_utf8(std::string_view text);
std::string to_utf8(std::u32string_view text);

/// Decodes UTF-8, composes the combining diacritics found in Dutch
/// orthography into precomposed letters and lowercases the result.
Word normalize(std::string_view utf8);

/// Per-letter break labels: bit i set means a syllable boundary follows
/// letter i.
class BoundaryVector {
 public:
  BoundaryVector() = default;
  explicit BoundaryVector(std::size_t length) : bits_(length, 0) {}
  explicit BoundaryVector(std::vector<std::uint8_t> bits);

  /// Parses a string of '0'/'1' characters.
  static BoundaryVector from_string(std::string_view bits);

  std::size_t size() const noexcept { return bits_.size(); }
  bool empty() const noexcept { return bits_.empty(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool value) { bits_.at(i) = value ? 1 : 0; }
  std::size_t count() const noexcept;
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::string to_string() const;

  friend bool operator==(const BoundaryVector&, const BoundaryVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct Segmentation {
  Word word;
  BoundaryVector bounds;

  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

/// "be-re-ke-ning" -> ("berekening", 0101010000). Throws
/// MalformedSyllabification on empty syllables.
Segmentation encode_boundaries(std::u32string_view syllabified);
Segmentation encode_boundaries_utf8(std::string_view syllabified);

/// Inverse of encode_boundaries. A set bit on the final letter has no
/// rendering and is dropped. Throws LengthMismatch.
Word decode_boundaries(std::u32string_view word, const BoundaryVector& bounds);
std::string decode_boundaries_utf8(std::u32string_view word, const BoundaryVector& bounds);

struct AnnotatedWord {
  Word orth;
  BoundaryVector orth_bounds;
  std::optional<Word> phon;
  std::optional<BoundaryVector> phon_bounds;

  /// Checks the length invariants; throws LengthMismatch.
  void validate() const;
  bool has_phonetic() const noexcept { return phon.has_value() && phon_bounds.has_value(); }

  friend bool operator==(const AnnotatedWord&, const AnnotatedWord&) = default;
};

AnnotatedWord make_word(std::string_view orth_syllabified);
AnnotatedWord make_word(std::string_view orth_syllabified, std::string_view phon_syllabified);

/// Dense symbol inventory. Ids 0..3 are reserved sentinels; real symbols
/// follow in codepoint order.
class Alphabet {
 public:
  static constexpr int kPad = 0;
  static constexpr int kWordStart = 1;
  static constexpr int kWordEnd = 2;
  static constexpr int kUnknown = 3;
  static constexpr int kReserved = 4;

  Alphabet() = default;
  explicit Alphabet(std::u32string_view symbols);

  template <typename Range>
  static Alphabet from_words(const Range& words) {
    std::u32string all;
    for (const auto& w : words) all.append(w.begin(), w.end());
    return Alphabet(all);
  }

  /// Id for a symbol; kUnknown when absent.
  int lookup(char32_t symbol) const noexcept;
  /// Inverse of lookup on real symbols; throws InvalidArgument on reserved ids.
  char32_t symbol(int id) const;
  int size() const noexcept { return kReserved + static_cast<int>(symbols_.size()); }
  const std::u32string& symbols() const noexcept { return symbols_; }

  friend bool operator==(const Alphabet&, const Alphabet&) = default;

 private:
  std::u32string symbols_;  // sorted, unique
};

}  // namespace syllab
