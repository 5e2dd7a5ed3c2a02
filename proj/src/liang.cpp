#include "syllab/liang.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "syllab/error.hpp"

namespace syllab::liang {

std::string Pattern::to_tex() const {
  std::string out;
  for (std::size_t i = 0; i <= letters.size(); ++i) {
    if (weights[i] != 0) out.push_back(static_cast<char>('0' + weights[i]));
    if (i < letters.size()) out += to_utf8(std::u32string_view(&letters[i], 1));
  }
  return out;
}

Pattern Pattern::from_tex(std::string_view token) {
  const auto fail = [&](const char* why) {
    return Error(ErrorKind::ParseError, "pattern '" + std::string(token) + "': " + why);
  };
  const Word text = from_utf8(token);
  Pattern p;
  p.weights.push_back(0);
  bool pending_digit = false;
  for (char32_t c : text) {
    if (c >= U'0' && c <= U'9') {
      if (pending_digit) throw fail("two digits in one slot");
      p.weights.back() = static_cast<std::uint8_t>(c - U'0');
      pending_digit = true;
      continue;
    }
    p.letters.push_back(c);
    p.weights.push_back(0);
    pending_digit = false;
  }
  if (p.letters.empty()) throw fail("no letters");
  for (std::size_t i = 1; i + 1 < p.letters.size(); ++i) {
    if (p.letters[i] == kEdge) throw fail("'.' is only allowed at either end");
  }
  if (std::all_of(p.weights.begin(), p.weights.end(), [](std::uint8_t w) { return w == 0; })) {
    throw fail("no nonzero digit");
  }
  return p;
}

struct PatternSet::Trie {
  struct Node {
    std::vector<std::pair<char32_t, std::uint32_t>> next;  // sorted by symbol
    const std::vector<std::uint8_t>* weights = nullptr;
  };
  std::vector<Node> nodes{Node{}};

  std::uint32_t child(std::uint32_t n, char32_t c) const {
    const auto& nx = nodes[n].next;
    auto it = std::lower_bound(nx.begin(), nx.end(), c,
                               [](const auto& e, char32_t v) { return e.first < v; });
    return (it != nx.end() && it->first == c) ? it->second : 0;
  }

  std::uint32_t add_child(std::uint32_t n, char32_t c) {
    if (auto existing = child(n, c)) return existing;
    const auto id = static_cast<std::uint32_t>(nodes.size());
    nodes.emplace_back();
    auto& nx = nodes[n].next;
    auto it = std::lower_bound(nx.begin(), nx.end(), c,
                               [](const auto& e, char32_t v) { return e.first < v; });
    nx.insert(it, {c, id});
    return id;
  }
};

PatternSet::PatternSet() : trie_(std::make_unique<Trie>()) {}

PatternSet::PatternSet(const PatternSet& other) : levels(other.levels), trie_(std::make_unique<Trie>()) {
  patterns_ = other.patterns_;
  rebuild_trie();
}

PatternSet& PatternSet::operator=(const PatternSet& other) {
  if (this != &other) {
    patterns_ = other.patterns_;
    levels = other.levels;
    rebuild_trie();
  }
  return *this;
}

PatternSet::PatternSet(PatternSet&&) noexcept = default;
PatternSet& PatternSet::operator=(PatternSet&&) noexcept = default;
PatternSet::~PatternSet() = default;

void PatternSet::rebuild_trie() const {
  trie_ = std::make_unique<Trie>();
  for (const auto& [letters, weights] : patterns_) {
    std::uint32_t n = 0;
    for (char32_t c : letters) n = trie_->add_child(n, c);
    trie_->nodes[n].weights = &weights;
  }
}

void PatternSet::insert(const Pattern& p) {
  if (p.weights.size() != p.letters.size() + 1) {
    throw Error(ErrorKind::InvalidArgument, "pattern weights must have letters+1 slots");
  }
  auto [it, inserted] = patterns_.try_emplace(p.letters, p.weights);
  if (!inserted) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) it->second[i] = std::max(it->second[i], p.weights[i]);
    return;
  }
  if (!trie_) trie_ = std::make_unique<Trie>();
  std::uint32_t n = 0;
  for (char32_t c : p.letters) n = trie_->add_child(n, c);
  trie_->nodes[n].weights = &it->second;
}

void PatternSet::insert_digit(std::u32string_view letters, std::size_t slot, std::uint8_t digit) {
  Pattern p{Word(letters), std::vector<std::uint8_t>(letters.size() + 1, 0)};
  p.weights.at(slot) = digit;
  insert(p);
}

const std::vector<std::uint8_t>* PatternSet::find(std::u32string_view letters) const {
  auto it = patterns_.find(Word(letters));
  return it == patterns_.end() ? nullptr : &it->second;
}

std::vector<std::uint8_t> PatternSet::slot_values(std::u32string_view word) const {
  Word dotted;
  dotted.reserve(word.size() + 2);
  dotted.push_back(kEdge);
  dotted.append(word);
  dotted.push_back(kEdge);
  std::vector<std::uint8_t> values(dotted.size() + 1, 0);
  if (!trie_) return values;
  for (std::size_t start = 0; start < dotted.size(); ++start) {
    std::uint32_t n = 0;
    for (std::size_t i = start; i < dotted.size(); ++i) {
      n = trie_->child(n, dotted[i]);
      if (n == 0) break;
      if (const auto* w = trie_->nodes[n].weights) {
        for (std::size_t k = 0; k < w->size(); ++k) {
          values[start + k] = std::max(values[start + k], (*w)[k]);
        }
      }
    }
  }
  return values;
}

std::vector<Pattern> PatternSet::patterns() const {
  std::vector<Pattern> out;
  out.reserve(patterns_.size());
  for (const auto& [letters, weights] : patterns_) out.push_back({letters, weights});
  return out;
}

BoundaryVector apply_patterns(std::u32string_view word, const PatternSet& ps) {
  BoundaryVector bits(word.size());
  if (word.size() < 2 || ps.empty()) return bits;
  const auto values = ps.slot_values(word);
  // Slot between letters k and k+1 of the word is slot k+2 of ".word.".
  for (std::size_t k = 0; k + 1 < word.size(); ++k) bits.set(k, values[k + 2] % 2 == 1);
  return bits;
}

PatgenConfig PatgenConfig::defaults() {
  return PatgenConfig{{{1, 3, 1, 1, 2}, {2, 4, 2, 1, 2}, {3, 5, 1, 2, 2}, {4, 6, 2, 1, 2}}};
}

std::vector<PatgenConfig> tuning_grid() {
  return {PatgenConfig::defaults(),
          PatgenConfig::parse("1-3:1,1,1; 2-4:2,1,1; 3-5:1,1,1; 4-6:2,1,1"),
          PatgenConfig::parse("2-3:1,1,2; 2-4:2,1,2; 3-5:1,1,2; 4-6:2,1,2"),
          PatgenConfig::parse("1-3:1,2,1; 2-4:2,2,1; 3-5:1,1,1; 4-6:2,1,1")};
}

PatgenConfig tune_patgen(const Dataset& train, const std::vector<PatgenConfig>& candidates,
                         double train_fraction, std::uint64_t seed) {
  if (candidates.empty()) throw Error(ErrorKind::InvalidArgument, "tune_patgen: no candidates");
  if (train.entries.empty()) throw Error(ErrorKind::EmptyTraining, "tune_patgen: empty training set");
  auto folds = split(train, {train_fraction, seed, 1});
  const auto& fit = folds[0].train.entries.empty() ? train : folds[0].train;
  const auto& val = folds[0].test.entries.empty() ? train : folds[0].test;
  std::size_t best = 0;
  std::size_t best_errors = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto ps = generate_patterns(fit, candidates[c]);
    std::size_t errors = 0;
    for (const auto& e : val.entries) errors += apply_patterns(e.orth, ps) != e.orth_bounds;
    if (errors < best_errors) {
      best_errors = errors;
      best = c;
    }
  }
  return candidates[best];
}

PatgenConfig PatgenConfig::parse(std::string_view text) {
  PatgenConfig cfg;
  std::string s(text);
  std::replace(s.begin(), s.end(), ';', '\n');
  std::istringstream in(s);
  std::string level;
  while (std::getline(in, level)) {
    if (level.find_first_not_of(" \t") == std::string::npos) continue;
    LevelConfig lc;
    char dash = 0, colon = 0, c1 = 0, c2 = 0;
    std::istringstream ls(level);
    if (!(ls >> lc.min_length >> dash >> lc.max_length >> colon >> lc.good_weight >> c1 >> lc.bad_weight >> c2 >>
          lc.threshold) ||
        dash != '-' || colon != ':' || c1 != ',' || c2 != ',') {
      throw Error(ErrorKind::ParseError, "patgen level '" + level + "' is not min-max:good,bad,threshold");
    }
    cfg.levels.push_back(lc);
  }
  cfg.validate();
  return cfg;
}

std::string PatgenConfig::to_string() const {
  std::string out;
  for (const auto& l : levels) {
    if (!out.empty()) out += "; ";
    out += std::to_string(l.min_length) + "-" + std::to_string(l.max_length) + ":" +
           std::to_string(l.good_weight) + "," + std::to_string(l.bad_weight) + "," +
           std::to_string(l.threshold);
  }
  return out;
}

void PatgenConfig::validate() const {
  if (levels.empty()) throw Error(ErrorKind::InvalidArgument, "patgen needs at least one level");
  if (levels.size() > 9) throw Error(ErrorKind::InvalidArgument, "patgen supports at most 9 levels");
  for (const auto& l : levels) {
    if (l.min_length < 1 || l.max_length < l.min_length) {
      throw Error(ErrorKind::InvalidArgument, "patgen level has an empty length range");
    }
    if (l.good_weight < 1 || l.bad_weight < 1 || l.threshold < 1) {
      throw Error(ErrorKind::InvalidArgument, "patgen weights and thresholds must be at least 1");
    }
  }
}

namespace {

struct Counts {
  std::uint64_t good = 0;
  std::uint64_t bad = 0;
};

struct TrainingWord {
  Word dotted;
  const BoundaryVector* gold;
};

}  // namespace

namespace {

// Slot positions within a pattern of the given length, middle first and
// then alternating outwards, as in the original generator.
std::vector<std::size_t> dot_order(std::size_t len) {
  std::vector<std::size_t> out;
  std::size_t dot = len / 2;
  std::size_t dot1 = dot * 2;
  do {
    dot = dot1 - dot;
    dot1 = len * 2 - dot1 - 1;
    out.push_back(dot);
  } while (dot != len);
  return out;
}

}  // namespace

PatternSet generate_patterns(const Dataset& train, const PatgenConfig& cfg, std::vector<LevelStats>* stats) {
  if (train.empty()) throw Error(ErrorKind::EmptyTraining, "pattern generation needs training words");
  cfg.validate();

  std::vector<TrainingWord> words;
  words.reserve(train.size());
  for (const auto& e : train.entries) {
    Word dotted;
    dotted.push_back(kEdge);
    dotted += e.orth;
    dotted.push_back(kEdge);
    words.push_back({std::move(dotted), &e.orth_bounds});
  }

  PatternSet ps;
  for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
    const LevelConfig& level = cfg.levels[li];
    const auto digit = static_cast<std::uint8_t>(li + 1);
    const bool hyphenating = digit % 2 == 1;
    LevelStats ls;
    ls.level = digit;

    for (std::size_t len = level.min_length; len <= level.max_length; ++len) {
      for (const std::size_t dot : dot_order(len)) {
        std::unordered_map<Word, Counts> counts;
        Word key;
        for (const auto& w : words) {
          const std::size_t n = w.dotted.size() - 2;
          if (n < 2) continue;
          const auto values = ps.slot_values(std::u32string_view(w.dotted).substr(1, n));
          for (std::size_t k = 0; k + 1 < n; ++k) {
            const std::size_t slot = k + 2;
            if (values[slot] >= digit || slot < dot || slot - dot + len > w.dotted.size()) continue;
            const bool gold = (*w.gold)[k];
            const bool found = values[slot] % 2 == 1;
            // A hyphenating level only looks at slots without a break yet,
            // an inhibiting level only at slots that have one.
            if (found == hyphenating) continue;
            key.assign(w.dotted, slot - dot, len);
            auto& c = counts[key];
            if (gold == hyphenating) ++c.good;
            else ++c.bad;
          }
        }

        std::vector<Word> selected;
        for (const auto& [k, c] : counts) {
          const auto score = static_cast<long long>(c.good) * level.good_weight -
                             static_cast<long long>(c.bad) * level.bad_weight;
          if (c.good > 0 && score >= level.threshold) selected.push_back(k);
        }
        std::sort(selected.begin(), selected.end());
        for (const auto& letters : selected) ps.insert_digit(letters, dot, digit);
        ls.patterns_added += selected.size();
      }
    }

    if (stats) {
      for (const auto& e : train.entries) {
        const auto pred = apply_patterns(e.orth, ps);
        for (std::size_t i = 0; i < pred.size(); ++i) {
          if (e.orth_bounds[i] && !pred[i]) ++ls.fn;
          if (!e.orth_bounds[i] && pred[i]) ++ls.fp;
        }
      }
      stats->push_back(ls);
    }
  }
  ps.levels = static_cast<int>(cfg.levels.size());
  return ps;
}

void save_tex(const PatternSet& ps, std::ostream& out) {
  out << "% syllabification patterns, " << ps.levels << " levels\n";
  for (const auto& p : ps.patterns()) out << p.to_tex() << '\n';
}

void save_tex(const PatternSet& ps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  save_tex(ps, out);
}

PatternSet parse_tex(std::string_view text) {
  PatternSet ps;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto pct = line.find('%');
    if (pct != std::string::npos) {
      const auto lv = line.find("patterns, ", pct);
      if (lv != std::string::npos) ps.levels = std::atoi(line.c_str() + lv + 10);
      line.erase(pct);
    }
    std::istringstream tokens(line);
    std::string tok;
    while (tokens >> tok) {
      if (tok == "\\patterns{" || tok == "}") continue;
      if (tok.rfind("\\patterns{", 0) == 0) tok.erase(0, 10);
      if (!tok.empty() && tok.back() == '}') tok.pop_back();
      if (tok.empty()) continue;
      ps.insert(Pattern::from_tex(tok));
    }
  }
  return ps;
}

PatternSet load_tex(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_tex(ss.str());
}

PatternSet load_tex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return load_tex(in);
}

}  // namespace syllab::liang
