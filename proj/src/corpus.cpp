#include "syllab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "syllab/error.hpp"
#include "syllab/rng.hpp"

namespace syllab {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Dictionary: return "dictionary";
    case Provenance::Loanword: return "loanword";
    case Provenance::Pseudoword: return "pseudoword";
    case Provenance::Synthetic: return "synthetic";
  }
  return "dictionary";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "dictionary") return Provenance::Dictionary;
  if (s == "loanword") return Provenance::Loanword;
  if (s == "pseudoword") return Provenance::Pseudoword;
  if (s == "synthetic") return Provenance::Synthetic;
  throw Error(ErrorKind::InvalidArgument, "unknown provenance '" + std::string(s) + "'");
}

bool Dataset::has_phonetic() const noexcept {
  if (entries.empty()) return false;
  for (const auto& e : entries) {
    if (!e.has_phonetic()) return false;
  }
  return true;
}

std::uint64_t Dataset::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    h = fnv1a(s.data(), s.size(), h);
    const char sep = '\x1f';
    h = fnv1a(&sep, 1, h);
  };
  for (const auto& e : entries) {
    feed(to_utf8(e.orth));
    feed(e.orth_bounds.to_string());
    feed(e.phon ? to_utf8(*e.phon) : std::string());
    feed(e.phon_bounds ? e.phon_bounds->to_string() : std::string());
  }
  return h;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

AnnotatedWord parse_line(const std::string& line, std::size_t line_no) {
  const auto fail = [&](const std::string& what) {
    return Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + what);
  };
  try {
    if (line.find('\t') == std::string::npos) return make_word(line);
    auto cols = split_tabs(line);
    if (cols.size() != 2 && cols.size() != 4) {
      throw fail("expected 2 or 4 tab-separated columns, got " + std::to_string(cols.size()));
    }
    AnnotatedWord w = cols.size() == 4 ? make_word(cols[1], cols[3]) : make_word(cols[1]);
    if (normalize(cols[0]) != w.orth) {
      throw fail("orthographic form '" + cols[0] + "' does not match its syllabification");
    }
    if (cols.size() == 4) {
      Word phon = from_utf8(cols[2]);
      if (phon != *w.phon) {
        throw fail("phonetic form '" + cols[2] + "' does not match its syllabification");
      }
    }
    return w;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::MalformedSyllabification) {
      throw Error(ErrorKind::MalformedSyllabification, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (e.kind() == ErrorKind::ParseError) throw;
    throw fail(e.what());
  }
}

}  // namespace

std::vector<AnnotatedWord> read_records(std::istream& in) {
  std::vector<AnnotatedWord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back(parse_line(line, line_no));
  }
  return out;
}

std::vector<AnnotatedWord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_records(in);
}

Dataset load_tsv(const std::filesystem::path& path) {
  auto raw = read_records(path);
  Dataset ds;
  ds.name = path.stem().string();
  std::unordered_map<Word, std::size_t> seen;
  for (auto& w : raw) {
    auto [it, inserted] = seen.emplace(w.orth, ds.entries.size());
    if (!inserted) {
      if (ds.entries[it->second] != w) {
        throw Error(ErrorKind::ParseError, "'" + to_utf8(w.orth) +
                                               "' has conflicting annotations; run prepare to filter it");
      }
      continue;
    }
    ds.entries.push_back(std::move(w));
  }
  return ds;
}

void save_tsv(const Dataset& ds, std::ostream& out) {
  for (const auto& e : ds.entries) {
    out << to_utf8(e.orth) << '\t' << decode_boundaries_utf8(e.orth, e.orth_bounds);
    if (e.has_phonetic()) {
      out << '\t' << to_utf8(*e.phon) << '\t' << decode_boundaries_utf8(*e.phon, *e.phon_bounds);
    }
    out << '\n';
  }
}

void save_tsv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  save_tsv(ds, out);
}

AmbiguityReport remove_ambiguous(const std::vector<AnnotatedWord>& raw) {
  // First pass: collect the distinct segmentations per form.
  std::unordered_map<Word, std::vector<BoundaryVector>> variants;
  std::vector<Word> order;
  for (const auto& w : raw) {
    auto [it, inserted] = variants.try_emplace(w.orth);
    if (inserted) order.push_back(w.orth);
    auto& v = it->second;
    if (std::find(v.begin(), v.end(), w.orth_bounds) == v.end()) v.push_back(w.orth_bounds);
  }

  AmbiguityReport report;
  std::unordered_set<Word> kept;
  for (const auto& form : order) {
    if (variants[form].size() >= 2) report.removed.push_back(form);
  }
  const std::unordered_set<Word> removed(report.removed.begin(), report.removed.end());
  for (const auto& w : raw) {
    if (removed.count(w.orth)) continue;
    if (!kept.insert(w.orth).second) {
      ++report.duplicates_merged;
      continue;
    }
    report.dataset.entries.push_back(w);
  }
  return report;
}

std::vector<Fold> split(const Dataset& ds, const SplitSpec& spec) {
  if (ds.empty()) throw Error(ErrorKind::InvalidArgument, "cannot split an empty dataset");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "train fraction must lie strictly between 0 and 1");
  }
  if (spec.fold_count < 1) throw Error(ErrorKind::InvalidArgument, "fold count must be positive");

  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  std::vector<Fold> folds;
  folds.reserve(static_cast<std::size_t>(spec.fold_count));
  for (int k = 0; k < spec.fold_count; ++k) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed + static_cast<std::uint64_t>(k));
    rng.shuffle(order);

    std::vector<std::uint8_t> in_train(n, 0);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = 1;

    Fold fold;
    fold.train.name = ds.name + ".train" + std::to_string(k);
    fold.test.name = ds.name + ".test" + std::to_string(k);
    fold.train.provenance = fold.test.provenance = ds.provenance;
    fold.train.entries.reserve(n_train);
    fold.test.entries.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) {
      (in_train[i] ? fold.train : fold.test).entries.push_back(ds.entries[i]);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

namespace {

bool synthetic_vowel(char32_t c) {
  return c == U'a' || c == U'e' || c == U'i' || c == U'o' || c == U'u' || c == U'Y';
}

}  // namespace

BoundaryVector syllabify_by_rule(std::string_view rule, std::u32string_view word) {
  const bool vccv = rule == "vccv";
  const bool hiatus = rule == "cv_hiatus";
  if (rule != "cv" && !vccv && !hiatus) {
    throw Error(ErrorKind::RuleUnknown, "unknown segmentation rule '" + std::string(rule) + "'");
  }
  BoundaryVector bv(word.size());
  const auto v = [&](std::size_t i) { return i < word.size() && synthetic_vowel(word[i]); };
  const auto c = [&](std::size_t i) { return i < word.size() && !synthetic_vowel(word[i]); };
  for (std::size_t i = 0; i + 1 < word.size(); ++i) {
    if (v(i) && c(i + 1) && v(i + 2)) bv.set(i, true);
    if (vccv && v(i) && c(i + 1) && c(i + 2) && v(i + 3)) bv.set(i + 1, true);
    if (hiatus && v(i) && v(i + 1)) bv.set(i, true);
  }
  return bv;
}

namespace {

constexpr std::u32string_view kConsonants = U"bdfgklmnprstvz";
constexpr std::u32string_view kVowels = U"aeiou";
constexpr std::u32string_view kOnsets[] = {U"br", U"kl", U"st", U"tr", U"pl", U"gr", U"sp"};

struct Syllable {
  std::u32string onset;
  char32_t vowel = U'a';
  std::u32string coda;
};

// Bare-vowel syllables are only drawn word-initially so that no vowel
// sequences arise outside the designated digraph.
Syllable random_syllable(Rng& rng, bool initial) {
  Syllable s;
  double shape = rng.uniform();
  if (!initial && shape >= 0.75 && shape < 0.85) shape = 0.0;
  if (shape < 0.45) {
    s.onset = kConsonants[rng.below(kConsonants.size())];
  } else if (shape < 0.75) {
    s.onset = kConsonants[rng.below(kConsonants.size())];
    s.coda = kConsonants[rng.below(kConsonants.size())];
  } else if (shape < 0.85) {
    // bare vowel
  } else {
    s.onset = kOnsets[rng.below(std::size(kOnsets))];
  }
  s.vowel = kVowels[rng.below(kVowels.size())];
  return s;
}

std::size_t random_syllable_count(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.15) return 1;
  if (u < 0.50) return 2;
  if (u < 0.85) return 3;
  return 4;
}

std::size_t count_digraphs(std::u32string_view orth) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < orth.size(); ++i) {
    if (orth[i] == U'i' && orth[i + 1] == U'e') ++n;
  }
  return n;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.count == 0) throw Error(ErrorKind::InvalidArgument, "synthetic corpus size must be positive");
  // Validates the rule name before any work.
  (void)syllabify_by_rule(spec.rule, U"");

  Rng rng(spec.seed);
  Dataset ds;
  ds.name = "synthetic-" + spec.rule;
  ds.provenance = Provenance::Synthetic;
  std::unordered_set<Word> seen;
  const std::size_t max_attempts = spec.count * 1000 + 1000;
  for (std::size_t attempt = 0; ds.size() < spec.count; ++attempt) {
    if (attempt >= max_attempts) {
      throw Error(ErrorKind::InvalidArgument, "could not generate " + std::to_string(spec.count) +
                                                  " distinct words for rule " + spec.rule);
    }
    std::vector<Syllable> syllables(random_syllable_count(rng));
    for (std::size_t k = 0; k < syllables.size(); ++k) syllables[k] = random_syllable(rng, k == 0);

    bool designated = false;
    if (spec.phonetic && rng.uniform() < spec.digraph_rate) {
      designated = true;
      const auto j = static_cast<std::size_t>(rng.below(syllables.size()));
      if (rng.uniform() < 0.5) {
        syllables[j].vowel = U'Y';
      } else {
        syllables[j].vowel = U'i';
        syllables[j].coda.clear();
        Syllable e;
        e.vowel = U'e';
        if (rng.uniform() < 0.5) e.coda = kConsonants[rng.below(kConsonants.size())];
        syllables.insert(syllables.begin() + static_cast<std::ptrdiff_t>(j) + 1, e);
      }
    }

    Word phon;
    for (const auto& s : syllables) {
      phon += s.onset;
      phon.push_back(s.vowel);
      phon += s.coda;
    }
    Word orth;
    std::vector<std::size_t> last_letter;  // orth index of each phonetic symbol's last letter
    for (char32_t c : phon) {
      if (c == U'Y') {
        orth += U"ie";
      } else {
        orth.push_back(c);
      }
      last_letter.push_back(orth.size() - 1);
    }
    if (orth.size() > 34) continue;
    if (spec.phonetic && count_digraphs(orth) != (designated ? 1u : 0u)) continue;
    if (!seen.insert(orth).second) continue;

    AnnotatedWord w;
    if (spec.phonetic) {
      const auto rule = spec.rule == "cv" ? std::string("cv_hiatus") : spec.rule;
      BoundaryVector pb = syllabify_by_rule(rule, phon);
      if (spec.rule == "vccv") {
        BoundaryVector hiatus = syllabify_by_rule("cv_hiatus", phon);
        for (std::size_t i = 0; i < pb.size(); ++i) pb.set(i, pb[i] || hiatus[i]);
      }
      BoundaryVector ob(orth.size());
      for (std::size_t i = 0; i < phon.size(); ++i) {
        if (pb[i]) ob.set(last_letter[i], true);
      }
      w.orth = orth;
      w.orth_bounds = ob;
      w.phon = phon;
      w.phon_bounds = pb;
    } else {
      w.orth = orth;
      w.orth_bounds = syllabify_by_rule(spec.rule, orth);
    }
    ds.entries.push_back(std::move(w));
  }
  return ds;
}

}  // namespace syllab
