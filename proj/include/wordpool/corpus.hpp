#pragma once

// Corpus ingestion: cleanup, word segmentation, statistics, splits and
// frequency strata.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wordpool/error.hpp"
#include "wordpool/utf8.hpp"

namespace wordpool {

struct Document {
  std::string id;
  std::string text;
};

struct WordSequence {
  std::vector<std::string> words;
  std::vector<std::size_t> boundaries;  // byte offset of each word in the source text
};

struct CorpusStats {
  std::size_t size_bytes = 0;
  std::size_t total_words = 0;
  std::size_t unique_words = 0;
  std::size_t total_chars = 0;
  double chars_per_word = 0.0;
  std::map<std::string, std::size_t> word_freq;
};

struct Split {
  std::vector<Document> train;
  std::vector<Document> valid;
  std::uint64_t seed = 0;
};

struct FrequencyStrata {
  std::set<std::string> rare;
  std::set<std::string> frequent;
};

namespace chars {

inline bool is_space(char32_t c) {
  return c == 0x20 || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

// Control and zero-width format characters are dropped by cleanup.
inline bool is_control(char32_t c) {
  return c < 0x20 || (c >= 0x7F && c <= 0x9F) || (c >= 0x200B && c <= 0x200D) || c == 0xFEFF;
}

inline bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  if (c >= 0xA1 && c <= 0xBF) {
    return c != 0xAA && c != 0xB2 && c != 0xB3 && c != 0xB5 && c != 0xB9 && c != 0xBA &&
           c != 0xBC && c != 0xBD && c != 0xBE;
  }
  return c == 0xD7 || c == 0xF7 || (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x20A0 && c <= 0x20CF) || (c >= 0x3001 && c <= 0x303F) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

inline bool is_digit(char32_t c) { return c >= U'0' && c <= U'9'; }

inline bool is_word(char32_t c) { return !is_space(c) && !is_control(c) && !is_punct(c); }

}  // namespace chars

/// Whitespace is collapsed to single spaces, control characters are removed
/// and punctuation is detached into standalone words. Word-internal
/// apostrophes and hyphens ("don't", "south-west") and digit-internal '.' and
/// ',' ("3.14", "1,000") stay attached. Idempotent.
inline std::string clean_text(std::string_view raw) {
  const std::u32string decoded = utf8::decode(raw);

  std::u32string base;
  base.reserve(decoded.size());
  for (char32_t c : decoded) {
    if (chars::is_space(c)) {
      base.push_back(U' ');
    } else if (!chars::is_control(c)) {
      base.push_back(c);
    }
  }

  std::u32string spaced;
  spaced.reserve(base.size() + base.size() / 4);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const char32_t c = base[i];
    if (!chars::is_punct(c)) {
      spaced.push_back(c);
      continue;
    }
    const char32_t prev = i > 0 ? base[i - 1] : U' ';
    const char32_t next = i + 1 < base.size() ? base[i + 1] : U' ';
    bool attached = false;
    if (c == U'\'' || c == U'’' || c == U'-') {
      attached = chars::is_word(prev) && chars::is_word(next);
    } else if (c == U'.' || c == U',') {
      attached = chars::is_digit(prev) && chars::is_digit(next);
    }
    if (attached) {
      spaced.push_back(c);
    } else {
      spaced.push_back(U' ');
      spaced.push_back(c);
      spaced.push_back(U' ');
    }
  }

  std::u32string out;
  out.reserve(spaced.size());
  for (char32_t c : spaced) {
    if (c == U' ' && (out.empty() || out.back() == U' ')) continue;
    out.push_back(c);
  }
  if (!out.empty() && out.back() == U' ') out.pop_back();
  return utf8::encode(out);
}

/// Splits on Unicode whitespace. Input is expected to be cleaned but any
/// valid UTF-8 is accepted.
inline WordSequence segment_words(std::string_view text) {
  WordSequence seq;
  std::size_t pos = 0;
  std::size_t word_start = 0;
  bool in_word = false;
  while (pos < text.size()) {
    const std::size_t start = pos;
    const char32_t c = utf8::next(text, pos);
    if (chars::is_space(c)) {
      if (in_word) {
        seq.words.emplace_back(text.substr(word_start, start - word_start));
        seq.boundaries.push_back(word_start);
        in_word = false;
      }
    } else if (!in_word) {
      in_word = true;
      word_start = start;
    }
  }
  if (in_word) {
    seq.words.emplace_back(text.substr(word_start));
    seq.boundaries.push_back(word_start);
  }
  return seq;
}

/// Cleaned words of every document, in corpus order.
inline std::vector<std::string> corpus_words(const std::vector<Document>& docs) {
  std::vector<std::string> words;
  for (const auto& doc : docs) {
    auto seq = segment_words(clean_text(doc.text));
    words.insert(words.end(), std::make_move_iterator(seq.words.begin()),
                 std::make_move_iterator(seq.words.end()));
  }
  return words;
}

inline CorpusStats compute_stats(const std::vector<Document>& docs) {
  if (docs.empty()) throw DataError("empty corpus");
  CorpusStats stats;
  for (const auto& doc : docs) {
    stats.size_bytes += doc.text.size();
    for (auto& w : segment_words(clean_text(doc.text)).words) {
      stats.total_chars += utf8::length(w);
      ++stats.total_words;
      ++stats.word_freq[std::move(w)];
    }
  }
  if (stats.total_words == 0) throw DataError("empty corpus");
  stats.unique_words = stats.word_freq.size();
  stats.chars_per_word =
      static_cast<double>(stats.total_chars) / static_cast<double>(stats.total_words);
  return stats;
}

/// rare = {w : freq < rare_max}, frequent = {w : freq > freq_min}.
inline FrequencyStrata stratify_by_frequency(const std::map<std::string, std::size_t>& word_freq,
                                             std::size_t rare_max, std::size_t freq_min) {
  if (rare_max >= freq_min) {
    throw ConfigError("stratify_by_frequency: rare_max (" + std::to_string(rare_max) +
                      ") must be below freq_min (" + std::to_string(freq_min) + ")");
  }
  FrequencyStrata strata;
  for (const auto& [word, n] : word_freq) {
    if (n < rare_max) strata.rare.insert(word);
    if (n > freq_min) strata.frequent.insert(word);
  }
  return strata;
}

/// Documents are separated by one or more blank lines.
inline std::vector<Document> parse_documents(std::string_view content, const std::string& source) {
  if (!utf8::valid(content)) throw DataError(source + ": not valid UTF-8");
  std::vector<Document> docs;
  std::string current;
  auto flush = [&] {
    const auto first = current.find_first_not_of(" \t\r\n");
    if (first != std::string::npos) {
      const auto last = current.find_last_not_of(" \t\r\n");
      docs.push_back({source + ":" + std::to_string(docs.size()),
                      current.substr(first, last - first + 1)});
    }
    current.clear();
  };
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto eol = content.find('\n', pos);
    if (eol == std::string_view::npos) eol = content.size();
    std::string_view line = content.substr(pos, eol - pos);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      flush();
    } else {
      if (!current.empty()) current.push_back('\n');
      current.append(line);
    }
    pos = eol + 1;
  }
  flush();
  return docs;
}

inline std::vector<Document> load_documents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_documents(buf.str(), path);
}

/// Seeded Fisher-Yates over document indices; the first round(ratio * n)
/// shuffled documents (at least one when n > 1) become the validation set.
inline Split split_documents(const std::vector<Document>& docs, std::uint64_t seed,
                             double valid_ratio = 0.1) {
  if (docs.empty()) throw DataError("empty corpus");
  if (!(valid_ratio >= 0.0 && valid_ratio < 1.0)) throw ConfigError("valid_ratio must be in [0, 1)");
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  auto n_valid = static_cast<std::size_t>(std::llround(valid_ratio * static_cast<double>(docs.size())));
  if (valid_ratio > 0.0 && n_valid == 0 && docs.size() > 1) n_valid = 1;
  if (n_valid >= docs.size()) n_valid = docs.size() - 1;
  Split split;
  split.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_valid ? split.valid : split.train).push_back(docs[order[i]]);
  }
  return split;
}

inline nlohmann::json stats_to_json(const CorpusStats& s) {
  nlohmann::json freq = nlohmann::json::object();
  for (const auto& [w, n] : s.word_freq) freq[w] = n;
  return {{"size_bytes", s.size_bytes},         {"total_words", s.total_words},
          {"unique_words", s.unique_words},     {"total_chars", s.total_chars},
          {"chars_per_word", s.chars_per_word}, {"word_freq", std::move(freq)}};
}

}  // namespace wordpool
