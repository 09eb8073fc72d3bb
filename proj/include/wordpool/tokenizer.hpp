#pragma once

// Byte, character, word and BPE subword tokenizers sharing one id space
// layout: special tokens occupy ids 0..4 in every scheme.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wordpool/corpus.hpp"
#include "wordpool/error.hpp"
#include "wordpool/utf8.hpp"

namespace wordpool {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kEow = 3;
inline constexpr TokenId kBos = 4;
inline constexpr TokenId kCount = 5;
inline constexpr std::string_view kNames[kCount] = {"<pad>", "<unk>", "<cls>", "<eow>", "<bos>"};
}  // namespace special

enum class Scheme { kByte, kChar, kSubword, kWord };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kByte: return "byte";
    case Scheme::kChar: return "char";
    case Scheme::kSubword: return "subword";
    case Scheme::kWord: return "word";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  if (name == "byte") return Scheme::kByte;
  if (name == "char") return Scheme::kChar;
  if (name == "subword") return Scheme::kSubword;
  if (name == "word") return Scheme::kWord;
  throw ConfigError("unknown tokenizer scheme: " + std::string(name));
}

// U+FFFD stands in for UNK when decoding.
inline constexpr std::string_view kReplacement = "\xEF\xBF\xBD";

class Vocab {
 public:
  explicit Vocab(std::size_t max_size = std::numeric_limits<std::size_t>::max()) : max_size_(max_size) {
    for (TokenId i = 0; i < special::kCount; ++i) {
      id_of_.emplace(std::string(special::kNames[i]), i);
      token_of_.emplace_back(special::kNames[i]);
    }
  }

  /// Returns the id of `token`, inserting it if absent.
  TokenId add(const std::string& token) {
    if (auto it = id_of_.find(token); it != id_of_.end()) return it->second;
    if (token_of_.size() >= max_size_) {
      throw ConfigError("vocabulary exceeds configured maximum of " + std::to_string(max_size_));
    }
    const auto id = static_cast<TokenId>(token_of_.size());
    id_of_.emplace(token, id);
    token_of_.push_back(token);
    return id;
  }

  std::optional<TokenId> find(std::string_view token) const {
    if (auto it = id_of_.find(std::string(token)); it != id_of_.end()) return it->second;
    return std::nullopt;
  }

  TokenId id_or_unk(std::string_view token) const { return find(token).value_or(special::kUnk); }

  const std::string& token(TokenId id) const { return token_of_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return token_of_.size(); }
  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < token_of_.size(); ++i) j[token_of_[i]] = i;
    return j;
  }

  /// Accepts any token->id map; ids are compacted in ascending order and
  /// shifted past the specials when the map does not already reserve them.
  static Vocab from_json(const nlohmann::json& j) {
    std::vector<std::pair<std::int64_t, std::string>> entries;
    for (auto it = j.begin(); it != j.end(); ++it) entries.emplace_back(it.value().get<std::int64_t>(), it.key());
    std::sort(entries.begin(), entries.end());
    Vocab v;
    for (const auto& [id, tok] : entries) {
      if (id < special::kCount && tok == special::kNames[id]) continue;
      v.add(tok);
    }
    return v;
  }

 private:
  std::size_t max_size_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::vector<std::string> token_of_;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  Scheme scheme = Scheme::kChar;
};

// --- bytes -----------------------------------------------------------------

inline constexpr std::size_t kByteVocabSize = 256 + special::kCount;

inline TokenSeq encode_bytes(std::string_view text) {
  TokenSeq seq{{}, Scheme::kByte};
  seq.ids.reserve(text.size());
  for (unsigned char b : text) seq.ids.push_back(static_cast<TokenId>(b) + special::kCount);
  return seq;
}

/// Specials decode to nothing; the result may be ill-formed UTF-8 if the ids are.
inline std::string decode_bytes(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id >= special::kCount && id < static_cast<TokenId>(kByteVocabSize)) {
      out.push_back(static_cast<char>(id - special::kCount));
    }
  }
  return out;
}

// --- characters --------------------------------------------------------------

/// Specials, then the space character, then every character seen in the
/// cleaned training documents in code point order.
inline Vocab build_char_vocab(const std::vector<Document>& train_docs) {
  std::set<char32_t> seen;
  for (const auto& doc : train_docs) {
    for (char32_t c : utf8::decode(clean_text(doc.text))) {
      if (c != U' ') seen.insert(c);
    }
  }
  Vocab vocab;
  vocab.add(" ");
  for (char32_t c : seen) vocab.add(utf8::encode(c));
  return vocab;
}

inline TokenSeq encode_chars(std::string_view text, const Vocab& vocab) {
  TokenSeq seq{{}, Scheme::kChar};
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto start = pos;
    utf8::next(text, pos);
    seq.ids.push_back(vocab.id_or_unk(text.substr(start, pos - start)));
  }
  return seq;
}

inline std::string decode_tokens(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == special::kUnk) {
      out.append(kReplacement);
    } else if (!Vocab::is_special(id)) {
      out.append(vocab.token(id));
    }
  }
  return out;
}

// --- words -------------------------------------------------------------------

/// Specials, then every distinct training word ordered by descending frequency
/// (ties lexicographic).
inline Vocab build_word_vocab(const std::vector<Document>& train_docs) {
  std::map<std::string, std::size_t> freq;
  for (auto& w : corpus_words(train_docs)) ++freq[std::move(w)];
  std::vector<std::pair<std::string, std::size_t>> sorted(freq.begin(), freq.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [w, n] : sorted) vocab.add(w);
  return vocab;
}

inline TokenSeq encode_words(std::string_view text, const Vocab& vocab) {
  TokenSeq seq{{}, Scheme::kWord};
  for (const auto& w : segment_words(text).words) seq.ids.push_back(vocab.id_or_unk(w));
  return seq;
}

inline std::string decode_words(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (Vocab::is_special(id) && id != special::kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out.append(id == special::kUnk ? std::string(kReplacement) : vocab.token(id));
  }
  return out;
}

// --- BPE subwords --------------------------------------------------------------

struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  Vocab vocab;

  BpeModel() = default;
  BpeModel(std::vector<std::pair<std::string, std::string>> m, Vocab v)
      : merges(std::move(m)), vocab(std::move(v)) {
    index();
  }

  /// Merge rank keyed on the pair of token ids, or npos.
  std::size_t rank(TokenId left, TokenId right) const {
    auto it = ranks_.find(key(left, right));
    return it == ranks_.end() ? npos : it->second.first;
  }
  TokenId merged_id(TokenId left, TokenId right) const { return ranks_.at(key(left, right)).second; }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

 private:
  static std::uint64_t key(TokenId l, TokenId r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
  }
  void index() {
    ranks_.clear();
    for (std::size_t i = 0; i < merges.size(); ++i) {
      const auto& [l, r] = merges[i];
      auto lid = vocab.find(l);
      auto rid = vocab.find(r);
      auto mid = vocab.find(l + r);
      if (!lid || !rid || !mid) throw ConfigError("BPE merge references unknown token: " + l + " " + r);
      ranks_.emplace(key(*lid, *rid), std::pair{i, *mid});
    }
  }
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> ranks_;
};

namespace detail {

// Merges every non-overlapping occurrence of (l, r), scanning left to right.
inline void merge_pair(std::vector<TokenId>& syms, TokenId l, TokenId r, TokenId merged) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
      syms[out++] = merged;
      i += 2;
    } else {
      syms[out++] = syms[i++];
    }
  }
  syms.resize(out);
}

}  // namespace detail

/// Greedy BPE: each round recounts adjacent pairs inside words (weighted by
/// word frequency), merges the most frequent pair with ties broken by the
/// lexicographic order of (left, right), and stops at `target_vocab_size` or
/// when no pair remains.
inline BpeModel train_bpe(const std::vector<Document>& train_docs, std::size_t target_vocab_size) {
  Vocab vocab = build_char_vocab(train_docs);
  if (target_vocab_size <= vocab.size()) {
    throw ConfigError("train_bpe: target vocab size " + std::to_string(target_vocab_size) +
                      " must exceed the " + std::to_string(vocab.size()) + " base tokens");
  }
  std::map<std::string, std::size_t> freq;
  for (auto& w : corpus_words(train_docs)) ++freq[std::move(w)];

  std::vector<std::vector<TokenId>> words;
  std::vector<std::size_t> counts;
  for (const auto& [w, n] : freq) {
    words.push_back(encode_chars(w, vocab).ids);
    counts.push_back(n);
  }

  std::vector<std::pair<std::string, std::string>> merges;
  std::unordered_map<std::uint64_t, std::size_t> pair_counts;
  while (vocab.size() < target_vocab_size) {
    pair_counts.clear();
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& syms = words[w];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        if (syms[i] == special::kUnk || syms[i + 1] == special::kUnk) continue;
        const auto k = (static_cast<std::uint64_t>(syms[i]) << 32) | static_cast<std::uint32_t>(syms[i + 1]);
        pair_counts[k] += counts[w];
      }
    }
    if (pair_counts.empty()) break;

    std::size_t best_count = 0;
    TokenId best_l = 0;
    TokenId best_r = 0;
    for (const auto& [k, n] : pair_counts) {
      const auto l = static_cast<TokenId>(k >> 32);
      const auto r = static_cast<TokenId>(k & 0xFFFFFFFFu);
      bool better = n > best_count;
      if (!better && n == best_count) {
        const auto& bl = vocab.token(best_l);
        const auto& cl = vocab.token(l);
        better = cl < bl || (cl == bl && vocab.token(r) < vocab.token(best_r));
      }
      if (better) {
        best_count = n;
        best_l = l;
        best_r = r;
      }
    }

    const std::string left = vocab.token(best_l);
    const std::string right = vocab.token(best_r);
    const TokenId merged = vocab.add(left + right);
    merges.emplace_back(left, right);
    for (auto& syms : words) detail::merge_pair(syms, best_l, best_r, merged);
  }
  return BpeModel(std::move(merges), std::move(vocab));
}

/// Applies merges to one space-free word, lowest merge rank first.
inline std::vector<TokenId> bpe_word(std::string_view word, const BpeModel& model) {
  std::vector<TokenId> syms = encode_chars(word, model.vocab).ids;
  while (syms.size() > 1) {
    std::size_t best_rank = BpeModel::npos;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto r = model.rank(syms[i], syms[i + 1]);
      if (r < best_rank) {
        best_rank = r;
        best_at = i;
      }
    }
    if (best_rank == BpeModel::npos) break;
    const TokenId l = syms[best_at];
    const TokenId r = syms[best_at + 1];
    detail::merge_pair(syms, l, r, model.merged_id(l, r));
  }
  return syms;
}

/// Each ' ' becomes the space token; each maximal run of other characters is
/// segmented with the model's merges.
inline TokenSeq encode_subwords(std::string_view text, const BpeModel& model) {
  TokenSeq seq{{}, Scheme::kSubword};
  const TokenId space = model.vocab.id_or_unk(" ");
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == ' ') {
      seq.ids.push_back(space);
      ++pos;
      continue;
    }
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    auto ids = bpe_word(text.substr(pos, end - pos), model);
    seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
    pos = end;
  }
  return seq;
}

/// Two-file layout: `vocab_path` holds a JSON token->id map, `merges_path` one
/// space-separated pair per line (lines starting with "#version" are skipped).
inline void save_bpe(const BpeModel& model, const std::string& vocab_path, const std::string& merges_path) {
  std::ofstream v(vocab_path);
  if (!v) throw DataError("cannot write " + vocab_path);
  v << model.vocab.to_json().dump(1) << '\n';
  std::ofstream m(merges_path);
  if (!m) throw DataError("cannot write " + merges_path);
  m << "#version: 0.2\n";
  for (const auto& [l, r] : model.merges) m << l << ' ' << r << '\n';
  if (!v || !m) throw DataError("failed writing BPE files");
}

inline BpeModel load_bpe(const std::string& vocab_path, const std::string& merges_path) {
  std::ifstream v(vocab_path);
  if (!v) throw DataError("cannot open " + vocab_path);
  Vocab vocab = Vocab::from_json(nlohmann::json::parse(v));
  std::ifstream m(merges_path);
  if (!m) throw DataError("cannot open " + merges_path);
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  while (std::getline(m, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
      throw DataError("malformed merges line: " + line);
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return BpeModel(std::move(merges), std::move(vocab));
}

// --- information parity ----------------------------------------------------------

struct BudgetInputs {
  double chars_per_word = 0.0;     // c
  double chars_per_subword = 0.0;  // N, measured on the flat stream
  double bytes_per_char = 1.0;
};

/// Context length, in tokens of `scheme`, carrying `t_chars` characters.
inline std::size_t context_budget(Scheme scheme, const BudgetInputs& in, std::size_t t_chars) {
  if (t_chars == 0) throw ConfigError("context_budget: T must be positive");
  const auto t = static_cast<double>(t_chars);
  switch (scheme) {
    case Scheme::kChar: return t_chars;
    case Scheme::kByte:
      if (!(in.bytes_per_char >= 1.0)) throw ConfigError("context_budget: bytes_per_char must be >= 1");
      return static_cast<std::size_t>(std::floor(t * in.bytes_per_char));
    case Scheme::kSubword:
      if (!(in.chars_per_subword > 0.0)) throw ConfigError("context_budget: chars_per_subword unset");
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(t / in.chars_per_subword)));
    case Scheme::kWord:
      if (!(in.chars_per_word > 0.0)) throw ConfigError("context_budget: chars_per_word unset");
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(t / in.chars_per_word)));
  }
  throw ConfigError("context_budget: unknown scheme");
}

inline std::size_t context_budget(Scheme scheme, const CorpusStats& stats, std::size_t t_chars,
                                  double chars_per_subword = 0.0, double bytes_per_char = 1.0) {
  return context_budget(scheme, BudgetInputs{stats.chars_per_word, chars_per_subword, bytes_per_char}, t_chars);
}

// --- unified tokenizer ------------------------------------------------------------

/// Scheme-polymorphic tokenizer. Flat streams for byte, char and subword use
/// the space token as the word boundary; the word scheme has one token per
/// word and no boundary token.
class Tokenizer {
 public:
  Tokenizer() = default;

  static Tokenizer bytes() {
    Tokenizer t;
    t.scheme_ = Scheme::kByte;
    return t;
  }
  static Tokenizer chars(Vocab vocab) {
    Tokenizer t;
    t.scheme_ = Scheme::kChar;
    t.vocab_ = std::move(vocab);
    return t;
  }
  static Tokenizer words(Vocab vocab) {
    Tokenizer t;
    t.scheme_ = Scheme::kWord;
    t.vocab_ = std::move(vocab);
    return t;
  }
  static Tokenizer subwords(BpeModel model) {
    Tokenizer t;
    t.scheme_ = Scheme::kSubword;
    t.vocab_ = model.vocab;
    t.bpe_ = std::move(model);
    return t;
  }

  /// Builds the scheme's vocabulary from the training split only.
  static Tokenizer build(Scheme scheme, const std::vector<Document>& train_docs, std::size_t bpe_vocab_size = 1024) {
    switch (scheme) {
      case Scheme::kByte: return bytes();
      case Scheme::kChar: return chars(build_char_vocab(train_docs));
      case Scheme::kWord: return words(build_word_vocab(train_docs));
      case Scheme::kSubword: return subwords(train_bpe(train_docs, bpe_vocab_size));
    }
    throw ConfigError("unknown scheme");
  }

  Scheme scheme() const { return scheme_; }

  std::size_t vocab_size() const { return scheme_ == Scheme::kByte ? kByteVocabSize : vocab_.size(); }

  TokenSeq encode(std::string_view text) const {
    switch (scheme_) {
      case Scheme::kByte: return encode_bytes(text);
      case Scheme::kChar: return encode_chars(text, vocab_);
      case Scheme::kWord: return encode_words(text, vocab_);
      case Scheme::kSubword: return encode_subwords(text, *bpe_);
    }
    return {};
  }

  std::string decode(std::span<const TokenId> ids) const {
    switch (scheme_) {
      case Scheme::kByte: return decode_bytes(ids);
      case Scheme::kWord: return decode_words(ids, vocab_);
      case Scheme::kChar:
      case Scheme::kSubword: return decode_tokens(ids, vocab_);
    }
    return {};
  }

  /// Surface string of a single token (UNK renders as U+FFFD, other specials as "").
  std::string token_text(TokenId id) const {
    const TokenId one[1] = {id};
    return decode(one);
  }

  /// Number of characters a token stands for in the flat stream.
  std::size_t token_chars(TokenId id) const {
    if (scheme_ == Scheme::kByte) return Vocab::is_special(id) ? 0 : 1;
    if (Vocab::is_special(id)) return id == special::kUnk ? 1 : 0;
    return utf8::length(vocab_.token(id));
  }

  std::optional<TokenId> boundary_id() const {
    switch (scheme_) {
      case Scheme::kByte: return static_cast<TokenId>(' ') + special::kCount;
      case Scheme::kChar:
      case Scheme::kSubword: return vocab_.find(" ");
      case Scheme::kWord: return std::nullopt;
    }
    return std::nullopt;
  }

  /// Base-unit ids of one word, as consumed by the hierarchical model.
  std::vector<TokenId> encode_word(std::string_view word) const {
    if (scheme_ != Scheme::kByte && scheme_ != Scheme::kChar) {
      throw ConfigError("hierarchical models need a byte or char base scheme, got " + to_string(scheme_));
    }
    return encode(word).ids;
  }

  /// Token ids of `words` joined by single spaces with a trailing boundary
  /// (no boundary tokens for the word scheme).
  std::vector<TokenId> encode_stream(const std::vector<std::string>& words) const {
    std::vector<TokenId> ids;
    if (scheme_ == Scheme::kWord) {
      for (const auto& w : words) ids.push_back(vocab_.id_or_unk(w));
      return ids;
    }
    const TokenId space = *boundary_id();
    for (const auto& w : words) {
      if (scheme_ == Scheme::kSubword) {
        auto sub = bpe_word(w, *bpe_);
        ids.insert(ids.end(), sub.begin(), sub.end());
      } else {
        auto sub = encode(w).ids;
        ids.insert(ids.end(), sub.begin(), sub.end());
      }
      ids.push_back(space);
    }
    return ids;
  }

  const Vocab& vocab() const { return vocab_; }
  const BpeModel* bpe() const { return bpe_ ? &*bpe_ : nullptr; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"scheme", to_string(scheme_)}};
    if (scheme_ != Scheme::kByte) {
      nlohmann::json toks = nlohmann::json::array();
      for (std::size_t i = 0; i < vocab_.size(); ++i) toks.push_back(vocab_.token(static_cast<TokenId>(i)));
      j["tokens"] = std::move(toks);
    }
    if (bpe_) {
      nlohmann::json m = nlohmann::json::array();
      for (const auto& [l, r] : bpe_->merges) m.push_back({l, r});
      j["merges"] = std::move(m);
    }
    return j;
  }

  static Tokenizer from_json(const nlohmann::json& j) {
    const Scheme s = parse_scheme(j.at("scheme").get<std::string>());
    if (s == Scheme::kByte) return bytes();
    Vocab vocab;
    const auto& toks = j.at("tokens");
    for (std::size_t i = special::kCount; i < toks.size(); ++i) vocab.add(toks[i].get<std::string>());
    if (s == Scheme::kChar) return chars(std::move(vocab));
    if (s == Scheme::kWord) return words(std::move(vocab));
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    return subwords(BpeModel(std::move(merges), std::move(vocab)));
  }

 private:
  Scheme scheme_ = Scheme::kChar;
  Vocab vocab_;
  std::optional<BpeModel> bpe_;
};

/// Measures c, N and the bytes/char ratio of `words` under `tok`.
inline BudgetInputs measure_budget_inputs(const Tokenizer& tok, const std::vector<std::string>& words) {
  BudgetInputs in;
  if (words.empty()) return in;
  std::size_t chars = 0;
  std::size_t bytes = 0;
  for (const auto& w : words) {
    chars += utf8::length(w);
    bytes += w.size();
  }
  in.chars_per_word = static_cast<double>(chars) / static_cast<double>(words.size());
  const double stream_chars = static_cast<double>(chars + words.size());
  in.bytes_per_char = static_cast<double>(bytes + words.size()) / stream_chars;
  if (tok.scheme() == Scheme::kSubword) {
    in.chars_per_subword = stream_chars / static_cast<double>(tok.encode_stream(words).size());
  }
  return in;
}

}  // namespace wordpool
