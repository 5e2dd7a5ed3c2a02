#include "syllab/core.hpp"

#include <algorithm>
#include <array>

#include "syllab/error.hpp"

namespace syllab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedSyllabification: return "MalformedSyllabification";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::RuleUnknown: return "RuleUnknown";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyTraining: return "EmptyTraining";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::WordTooLong: return "WordTooLong";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateMask: return "DegenerateMask";
    case ErrorKind::MissingPhonetic: return "MissingPhonetic";
    case ErrorKind::TrunkMutation: return "TrunkMutation";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Format: return "Format";
  }
  return "Error";
}

Word from_utf8(std::string_view text) {
  Word out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    char32_t cp = 0;
    int extra = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw Error(ErrorKind::Format, "invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (extra > 0 && i + extra >= text.size()) {
      throw Error(ErrorKind::Format, "truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        throw Error(ErrorKind::Format, "invalid UTF-8 continuation at offset " + std::to_string(i + k));
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    static constexpr std::array<char32_t, 4> kMin = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw Error(ErrorKind::Format, "invalid scalar value at offset " + std::to_string(i));
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string to_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

namespace {

char32_t lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c == 0x178) return 0xFF;
  return c;
}

struct Composition {
  char32_t base;
  char32_t mark;
  char32_t composed;
};

// Lowercase Latin letters with the combining marks that occur in Dutch
// word lists (loanwords included).
constexpr Composition kCompositions[] = {
    {U'a', 0x300, 0xE0}, {U'e', 0x300, 0xE8}, {U'i', 0x300, 0xEC}, {U'o', 0x300, 0xF2},
    {U'u', 0x300, 0xF9}, {U'a', 0x301, 0xE1}, {U'e', 0x301, 0xE9}, {U'i', 0x301, 0xED},
    {U'o', 0x301, 0xF3}, {U'u', 0x301, 0xFA}, {U'y', 0x301, 0xFD}, {U'a', 0x302, 0xE2},
    {U'e', 0x302, 0xEA}, {U'i', 0x302, 0xEE}, {U'o', 0x302, 0xF4}, {U'u', 0x302, 0xFB},
    {U'a', 0x303, 0xE3}, {U'n', 0x303, 0xF1}, {U'o', 0x303, 0xF5}, {U'a', 0x308, 0xE4},
    {U'e', 0x308, 0xEB}, {U'i', 0x308, 0xEF}, {U'o', 0x308, 0xF6}, {U'u', 0x308, 0xFC},
    {U'y', 0x308, 0xFF}, {U'c', 0x327, 0xE7}, {U'a', 0x30A, 0xE5},
};

}  // namespace

Word normalize(std::string_view utf8) {
  Word decoded = from_utf8(utf8);
  Word out;
  out.reserve(decoded.size());
  for (char32_t c : decoded) {
    c = lower(c);
    if (!out.empty()) {
      auto it = std::find_if(std::begin(kCompositions), std::end(kCompositions),
                             [&](const Composition& k) { return k.base == out.back() && k.mark == c; });
      if (it != std::end(kCompositions)) {
        out.back() = it->composed;
        continue;
      }
    }
    out.push_back(c);
  }
  return out;
}

BoundaryVector::BoundaryVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

BoundaryVector BoundaryVector::from_string(std::string_view bits) {
  std::vector<std::uint8_t> v;
  v.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') {
      throw Error(ErrorKind::ParseError, "boundary string must contain only 0/1: " + std::string(bits));
    }
    v.push_back(c == '1' ? 1 : 0);
  }
  return BoundaryVector(std::move(v));
}

std::size_t BoundaryVector::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string BoundaryVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

namespace {

bool is_disallowed(char32_t c) {
  return c < 0x20 || c == U' ' || c == 0x7F || c == 0xA0;
}

}  // namespace

Segmentation encode_boundaries(std::u32string_view syllabified) {
  Segmentation seg;
  std::vector<std::uint8_t> bits;
  bool last_was_separator = true;
  for (std::size_t i = 0; i < syllabified.size(); ++i) {
    const char32_t c = syllabified[i];
    if (c == kSyllableSeparator) {
      if (last_was_separator) {
        throw Error(ErrorKind::MalformedSyllabification,
                    "empty syllable in '" + to_utf8(syllabified) + "'");
      }
      bits.back() = 1;
      last_was_separator = true;
      continue;
    }
    if (is_disallowed(c)) {
      throw Error(ErrorKind::MalformedSyllabification,
                  "illegal character in '" + to_utf8(syllabified) + "'");
    }
    seg.word.push_back(c);
    bits.push_back(0);
    last_was_separator = false;
  }
  if (last_was_separator) {
    throw Error(ErrorKind::MalformedSyllabification,
                syllabified.empty() ? std::string("empty word")
                                    : "trailing separator in '" + to_utf8(syllabified) + "'");
  }
  seg.bounds = BoundaryVector(std::move(bits));
  return seg;
}

Segmentation encode_boundaries_utf8(std::string_view syllabified) {
  return encode_boundaries(normalize(syllabified));
}

Word decode_boundaries(std::u32string_view word, const BoundaryVector& bounds) {
  if (word.size() != bounds.size()) {
    throw Error(ErrorKind::LengthMismatch, "word '" + to_utf8(word) + "' has " +
                                               std::to_string(word.size()) + " letters but " +
                                               std::to_string(bounds.size()) + " labels");
  }
  Word out;
  out.reserve(word.size() * 2);
  for (std::size_t i = 0; i < word.size(); ++i) {
    out.push_back(word[i]);
    if (bounds[i] && i + 1 < word.size()) out.push_back(kSyllableSeparator);
  }
  return out;
}

std::string decode_boundaries_utf8(std::u32string_view word, const BoundaryVector& bounds) {
  return to_utf8(decode_boundaries(word, bounds));
}

void AnnotatedWord::validate() const {
  if (orth.size() != orth_bounds.size()) {
    throw Error(ErrorKind::LengthMismatch, "orthographic labels do not match '" + to_utf8(orth) + "'");
  }
  if (phon && phon_bounds && phon->size() != phon_bounds->size()) {
    throw Error(ErrorKind::LengthMismatch, "phonetic labels do not match '" + to_utf8(*phon) + "'");
  }
}

AnnotatedWord make_word(std::string_view orth_syllabified) {
  auto seg = encode_boundaries_utf8(orth_syllabified);
  return AnnotatedWord{std::move(seg.word), std::move(seg.bounds), std::nullopt, std::nullopt};
}

AnnotatedWord make_word(std::string_view orth_syllabified, std::string_view phon_syllabified) {
  AnnotatedWord w = make_word(orth_syllabified);
  // Phonetic notation is case-sensitive (DISC uses upper case symbols).
  auto seg = encode_boundaries(from_utf8(phon_syllabified));
  w.phon = std::move(seg.word);
  w.phon_bounds = std::move(seg.bounds);
  return w;
}

Alphabet::Alphabet(std::u32string_view symbols) : symbols_(symbols) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
}

int Alphabet::lookup(char32_t symbol) const noexcept {
  auto it = std::lower_bound(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end() || *it != symbol) return kUnknown;
  return kReserved + static_cast<int>(it - symbols_.begin());
}

char32_t Alphabet::symbol(int id) const {
  if (id < kReserved || id >= size()) {
    throw Error(ErrorKind::InvalidArgument, "symbol id " + std::to_string(id) + " is not a real symbol");
  }
  return symbols_[static_cast<std::size_t>(id - kReserved)];
}

}  // namespace syllab
