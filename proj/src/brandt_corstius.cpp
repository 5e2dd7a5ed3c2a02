#include "syllab/brandt_corstius.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "syllab/error.hpp"

namespace syllab::bc {

namespace {

bool longest_first(const Word& a, const Word& b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return a < b;
}

}  // namespace

ClusterTable::ClusterTable(std::u32string vowels, std::vector<Word> clusters, std::vector<Word> closed)
    : vowels_(std::move(vowels)), clusters_(std::move(clusters)), closed_(std::move(closed)) {
  std::sort(vowels_.begin(), vowels_.end());
  vowels_.erase(std::unique(vowels_.begin(), vowels_.end()), vowels_.end());
  std::sort(clusters_.begin(), clusters_.end(), longest_first);
  clusters_.erase(std::unique(clusters_.begin(), clusters_.end()), clusters_.end());
  for (const auto& c : clusters_) {
    if (c.empty() || !std::all_of(c.begin(), c.end(), [this](char32_t ch) { return is_vowel(ch); })) {
      throw Error(ErrorKind::Format, "vowel cluster '" + to_utf8(c) + "' contains a non-vowel");
    }
  }
  std::sort(closed_.begin(), closed_.end());
}

bool ClusterTable::is_vowel(char32_t c) const noexcept {
  return std::binary_search(vowels_.begin(), vowels_.end(), c);
}

std::size_t ClusterTable::match(std::u32string_view word, std::size_t pos) const noexcept {
  if (pos >= word.size() || !is_vowel(word[pos])) return 0;
  for (const auto& c : clusters_) {
    if (word.substr(pos, c.size()) == c) return c.size();
  }
  return 1;
}

bool ClusterTable::closes_syllable(std::u32string_view cluster) const noexcept {
  return std::binary_search(closed_.begin(), closed_.end(), Word(cluster));
}

OnsetTable::OnsetTable(std::vector<Word> onsets) : onsets_(std::move(onsets)) {
  std::sort(onsets_.begin(), onsets_.end());
  onsets_.erase(std::unique(onsets_.begin(), onsets_.end()), onsets_.end());
  for (const auto& o : onsets_) {
    if (o.empty()) throw Error(ErrorKind::Format, "empty onset");
    max_length_ = std::max(max_length_, o.size());
  }
}

bool OnsetTable::valid(std::u32string_view onset) const noexcept {
  if (onset.size() == 1) return true;
  return std::binary_search(onsets_.begin(), onsets_.end(), Word(onset));
}

Tables parse_tables(std::string_view text) {
  std::u32string vowels;
  std::vector<Word> clusters, onsets, closed;
  std::vector<PriorityRule> priority;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t");
    std::string entry = line.substr(first, last - first + 1);
    const auto where = [&] { return "table line " + std::to_string(line_no); };
    if (entry.front() == '[') {
      if (entry.back() != ']') throw Error(ErrorKind::Format, where() + ": unterminated section header");
      section = entry.substr(1, entry.size() - 2);
      continue;
    }
    Word w = normalize(entry);
    if (section == "vowels") {
      if (w.size() != 1) throw Error(ErrorKind::Format, where() + ": vowels are single letters");
      vowels += w;
    } else if (section == "vowel_clusters") {
      clusters.push_back(w);
    } else if (section == "onsets") {
      onsets.push_back(w);
    } else if (section == "closed_clusters") {
      closed.push_back(w);
    } else if (section == "priority") {
      const auto bar = w.find(U'|');
      if (bar == Word::npos) throw Error(ErrorKind::Format, where() + ": priority rule needs '|'");
      PriorityRule r;
      r.left = w.substr(0, bar);
      r.right = w.substr(bar + 1);
      if (!r.left.empty() && r.left.front() == U'^') {
        r.anchored_start = true;
        r.left.erase(0, 1);
      }
      if (!r.right.empty() && r.right.back() == U'$') {
        r.anchored_end = true;
        r.right.pop_back();
      }
      if (r.left.empty() && r.right.empty()) {
        throw Error(ErrorKind::Format, where() + ": empty priority rule");
      }
      priority.push_back(std::move(r));
    } else {
      throw Error(ErrorKind::Format, where() + ": entry outside a known section");
    }
  }
  if (vowels.empty()) vowels = U"aeiouy";
  Tables t{ClusterTable(vowels, clusters, closed), OnsetTable(onsets), std::move(priority)};
  return t;
}

Tables load_tables(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_tables(ss.str());
}

const Tables& default_tables() {
  static const Tables tables = parse_tables(default_table_text());
  return tables;
}

std::vector<Cluster> compress(std::u32string_view word, const ClusterTable& table) {
  std::vector<Cluster> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const std::size_t len = table.match(word, i);
    if (len == 0) {
      out.push_back({Word(1, word[i]), false, i});
      ++i;
    } else {
      out.push_back({Word(word.substr(i, len)), true, i});
      i += len;
    }
  }
  return out;
}

namespace {

bool rule_matches(const PriorityRule& r, std::u32string_view word, std::size_t cut) {
  if (cut < r.left.size() || cut + r.right.size() > word.size()) return false;
  if (r.anchored_start && cut != r.left.size()) return false;
  if (r.anchored_end && cut + r.right.size() != word.size()) return false;
  return word.substr(cut - r.left.size(), r.left.size()) == r.left &&
         word.substr(cut, r.right.size()) == r.right;
}

}  // namespace

BoundaryVector syllabify(std::u32string_view word, const Tables& tables) {
  BoundaryVector bits(word.size());
  const auto clusters = compress(word, tables.clusters);

  std::vector<std::size_t> nuclei;
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    if (clusters[k].vowel) nuclei.push_back(k);
  }
  if (nuclei.size() < 2) return bits;

  // Priority cuts are honoured only at cluster edges between two nuclei.
  std::vector<std::size_t> cuts;
  for (const auto& c : clusters) {
    const std::size_t p = c.start;
    if (p <= clusters[nuclei.front()].start || p > clusters[nuclei.back()].start) continue;
    for (const auto& rule : tables.priority) {
      if (rule_matches(rule, word, p)) {
        cuts.push_back(p);
        break;
      }
    }
  }

  for (std::size_t n = 0; n + 1 < nuclei.size(); ++n) {
    const Cluster& left = clusters[nuclei[n]];
    const Cluster& right = clusters[nuclei[n + 1]];
    const std::size_t gap_begin = left.start + left.text.size();
    const std::size_t gap_end = right.start;

    auto forced = std::find_if(cuts.begin(), cuts.end(),
                               [&](std::size_t p) { return p >= gap_begin && p <= gap_end; });
    if (forced != cuts.end()) {
      bits.set(*forced - 1, true);
      continue;
    }
    if (gap_begin == gap_end) {
      bits.set(gap_begin - 1, true);
      continue;
    }
    const std::u32string_view run = word.substr(gap_begin, gap_end - gap_begin);
    if (run.size() == 1 && tables.clusters.closes_syllable(left.text)) {
      bits.set(gap_end - 1, true);
      continue;
    }
    std::size_t onset = std::min(run.size(), tables.onsets.max_length());
    while (onset > 1 && !tables.onsets.valid(run.substr(run.size() - onset))) --onset;
    bits.set(gap_end - onset - 1, true);
  }
  return bits;
}

}  // namespace syllab::bc
