#pragma once

// Next-word and next-character accuracy, frequency-stratified accuracy and
// number estimation metrics.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpool/corpus.hpp"
#include "wordpool/generation.hpp"
#include "wordpool/model.hpp"

namespace wordpool {

struct WordRecord {
  std::string gold;
  bool correct = false;
  std::size_t chars = 0;          // characters scored, boundary included
  std::size_t chars_correct = 0;  // teacher-forced character credits
};

struct WordEval {
  std::vector<WordRecord> records;

  std::size_t hits() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.correct; }));
  }
  double word_acc() const { return records.empty() ? 0.0 : 100.0 * static_cast<double>(hits()) / static_cast<double>(records.size()); }
  double char_acc() const {
    std::size_t total = 0, ok = 0;
    for (const auto& r : records) {
      total += r.chars;
      ok += r.chars_correct;
    }
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(total);
  }
};

// --- stratification ---------------------------------------------------------------

struct StratifiedAccuracy {
  std::optional<double> rare_acc;
  std::optional<double> freq_acc;
  std::size_t rare_count = 0;
  std::size_t freq_count = 0;
};

inline StratifiedAccuracy stratified_accuracy(const std::vector<WordRecord>& records, const FrequencyStrata& strata) {
  StratifiedAccuracy s;
  std::size_t rare_hits = 0, freq_hits = 0;
  for (const auto& r : records) {
    if (strata.rare.count(r.gold)) {
      ++s.rare_count;
      rare_hits += r.correct;
    } else if (strata.frequent.count(r.gold)) {
      ++s.freq_count;
      freq_hits += r.correct;
    }
  }
  if (s.rare_count) s.rare_acc = 100.0 * static_cast<double>(rare_hits) / static_cast<double>(s.rare_count);
  if (s.freq_count) s.freq_acc = 100.0 * static_cast<double>(freq_hits) / static_cast<double>(s.freq_count);
  return s;
}

// --- numbers -------------------------------------------------------------------------

/// Decimal number with optional sign, comma thousands separators and fraction.
inline std::optional<double> parse_number(std::string_view word) {
  static const std::regex grammar(R"([+-]?[0-9]+(,[0-9]+)*(\.[0-9]+)?)");
  const std::string s(word);
  if (!std::regex_match(s, grammar)) return std::nullopt;
  std::string digits;
  for (char ch : s) {
    if (ch != ',') digits.push_back(ch);
  }
  return std::stod(digits);
}

/// Median; even counts average the two middle values.
inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline int decimal_exponent(double x) { return static_cast<int>(std::floor(std::log10(std::abs(x)))); }

struct NumberMetrics {
  std::size_t examples = 0;
  std::size_t parsed = 0;
  std::size_t scored = 0;  // parsed with a non-zero gold value
  double num_pct = 0.0;
  std::optional<double> eacc;
  std::optional<double> mdape;
};

inline NumberMetrics number_metrics(const std::vector<std::string>& predictions, const std::vector<double>& golds) {
  if (predictions.size() != golds.size()) throw ConfigError("number metrics: one gold value per prediction");
  NumberMetrics out;
  out.examples = predictions.size();
  std::size_t hits = 0;
  std::vector<double> apes;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto pred = parse_number(predictions[i]);
    if (!pred) continue;
    ++out.parsed;
    if (golds[i] == 0.0) continue;
    ++out.scored;
    if (*pred != 0.0 && decimal_exponent(*pred) == decimal_exponent(golds[i])) ++hits;
    apes.push_back(100.0 * std::abs(*pred - golds[i]) / std::abs(golds[i]));
  }
  if (out.examples) out.num_pct = 100.0 * static_cast<double>(out.parsed) / static_cast<double>(out.examples);
  if (out.scored) {
    out.eacc = 100.0 * static_cast<double>(hits) / static_cast<double>(out.scored);
    out.mdape = median(apes);
  }
  return out;
}

struct NumeracyExample {
  std::string context;
  std::string gold;
};

/// Number words in `docs` with at least `min_context_chars` characters of
/// preceding document text (words plus single separators).
inline std::vector<NumeracyExample> extract_numeracy_examples(const std::vector<Document>& docs,
                                                              std::size_t min_context_chars = 192,
                                                              std::size_t limit = 0) {
  std::vector<NumeracyExample> out;
  for (const auto& d : docs) {
    const auto words = segment_words(clean_text(d.text)).words;
    std::string context;
    std::size_t chars = 0;
    for (const auto& w : words) {
      if (chars >= min_context_chars && parse_number(w)) {
        out.push_back({context, w});
        if (limit && out.size() >= limit) return out;
      }
      if (!context.empty()) context += ' ';
      context += w;
      chars += utf8::length(w) + 1;
    }
  }
  return out;
}

/// JSON-lines loader: {"context": ..., "gold": ...} per line.
inline std::vector<NumeracyExample> load_numeracy_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open numeracy file " + path);
  std::vector<NumeracyExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("context").get<std::string>(), j.at("gold").get<std::string>()});
    if (!parse_number(out.back().gold)) throw DataError("numeracy gold is not a number: " + out.back().gold);
  }
  return out;
}

// --- scoring helpers -----------------------------------------------------------------------

namespace detail {

/// Character totals and credits for one gold word of base tokens (plus its
/// boundary). Byte tokens are grouped into UTF-8 characters; a character
/// counts only if all of its bytes were predicted. UNK never scores.
inline std::pair<std::size_t, std::size_t> unit_credits(const Tokenizer& tok, std::span<const TokenId> gold,
                                                        std::span<const std::uint8_t> hit) {
  std::size_t total = 0, ok = 0;
  if (tok.scheme() == Scheme::kByte) {
    for (std::size_t i = 0; i < gold.size();) {
      std::size_t j = i + 1;
      while (j < gold.size() && ((gold[j] - special::kCount) & 0xC0) == 0x80) ++j;
      bool all = true;
      for (std::size_t k = i; k < j; ++k) all = all && hit[k];
      ++total;
      ok += all;
      i = j;
    }
    return {total, ok};
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t n = tok.token_chars(gold[i]);
    total += n;
    if (hit[i] && gold[i] != special::kUnk) ok += n;
  }
  return {total, ok};
}

}  // namespace detail

/// Teacher-forced word accuracy of a flat model over documents given as
/// cleaned word lists. Context windows hold `context` tokens and advance by
/// half a window; each word is scored in the window that gives it the most
/// context.
template <class T>
WordEval evaluate_flat(Model<T>& m, const Tokenizer& tok, const std::vector<std::vector<std::string>>& docs,
                       std::size_t max_words = 0) {
  const auto& c = m.config;
  const std::size_t window = c.context;
  const std::size_t stride = std::max<std::size_t>(1, window / 2);
  const std::size_t v = c.vocab_size;
  const bool word_scheme = tok.scheme() == Scheme::kWord;
  const auto boundary = tok.boundary_id();
  WordEval out;
  for (const auto& words : docs) {
    if (words.empty()) continue;
    std::vector<TokenId> stream{flat_start_token(tok)};
    std::vector<std::size_t> first, last;  // token index range of each word, boundary included
    for (const auto& w : words) {
      first.push_back(stream.size());
      if (word_scheme) {
        stream.push_back(tok.vocab().id_or_unk(w));
      } else {
        const auto ids = tok.scheme() == Scheme::kSubword ? bpe_word(w, *tok.bpe()) : tok.encode(w).ids;
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(*boundary);
      }
      last.push_back(stream.size() - 1);
    }
    // Window assignment: positions first-1 .. last-1 predict the word's tokens.
    std::map<std::size_t, std::vector<std::size_t>> by_window;
    std::vector<std::size_t> unscorable;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (max_words && out.records.size() + w >= max_words) break;
      const std::size_t lo = first[w] - 1, hi = last[w] - 1;
      const std::size_t k = hi < window ? 0 : (hi - window) / stride + 1;
      if (k * stride > lo) {
        unscorable.push_back(w);
        continue;
      }
      by_window[k].push_back(w);
    }
    std::vector<std::size_t> order;
    std::map<std::size_t, WordRecord> recs;
    for (const auto& [k, ws] : by_window) {
      const std::size_t start = k * stride;
      const std::size_t end = std::min(start + window, stream.size() - 1);
      const std::span<const TokenId> in(stream.data() + start, end - start);
      const auto logits = flat_forward(m, in);
      for (std::size_t w : ws) {
        const std::span<const TokenId> gold(stream.data() + first[w], last[w] - first[w] + 1);
        std::vector<std::uint8_t> hit(gold.size());
        std::size_t mismatch = gold.size();
        for (std::size_t i = 0; i < gold.size(); ++i) {
          const std::size_t row = first[w] - 1 + i - start;
          const TokenId pred = argmax<T>({logits.data.data() + row * v, v});
          hit[i] = pred == gold[i] && gold[i] != special::kUnk;
          if (!hit[i] && mismatch == gold.size()) mismatch = i;
        }
        WordRecord r;
        r.gold = words[w];
        auto [total, ok] = detail::unit_credits(tok, gold, hit);
        if (word_scheme) {
          total = utf8::length(words[w]) + 1;
          ok = hit[0] ? total : 0;
        }
        r.chars = total;
        r.chars_correct = ok;
        r.correct = mismatch == gold.size();
        if (!r.correct && tok.scheme() == Scheme::kSubword) {
          // A different segmentation of the same surface text still spells
          // the gold word: finish the word with true greedy decoding.
          const std::size_t row = first[w] - 1 + mismatch - start;
          const TokenId pred = argmax<T>({logits.data.data() + row * v, v});
          std::string rest;
          for (std::size_t i = mismatch; i + 1 < gold.size(); ++i) rest += tok.token_text(gold[i]);
          const std::string pt = tok.token_text(pred);
          if (pred != *boundary && !pt.empty() && rest.starts_with(pt)) {
            std::vector<TokenId> ctx(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(first[w] + mismatch));
            ctx.push_back(pred);
            std::string text = pt;
            const auto cont = greedy_flat_tokens(m, ctx, utf8::length(rest) + 1, nullptr,
                                                 [&](TokenId id) { return id == *boundary; });
            bool closed = false;
            for (TokenId id : cont) {
              if (id == *boundary) {
                closed = true;
                break;
              }
              text += tok.token_text(id);
            }
            r.correct = closed && text == rest;
          }
        }
        recs[w] = std::move(r);
      }
    }
    for (std::size_t w : unscorable) recs[w] = WordRecord{words[w], false, utf8::length(words[w]) + 1, 0};
    for (auto& [w, r] : recs) {
      out.records.push_back(std::move(r));
      if (max_words && out.records.size() >= max_words) return out;
    }
  }
  return out;
}

/// Teacher-forced word accuracy of a hierarchical model. Windows are runs of
/// whole words holding at most T characters and advance by about T/2
/// characters; each word is scored in the window giving it the most context.
template <class T>
WordEval evaluate_hierarchical(Model<T>& m, const Tokenizer& tok, const std::vector<std::vector<std::string>>& docs,
                               std::size_t max_words = 0, std::size_t windows_per_batch = 8) {
  const auto& c = m.config;
  const std::size_t v = c.vocab_size;
  const std::size_t half = std::max<std::size_t>(1, c.block_chars / 2);
  WordEval out;
  for (const auto& words : docs) {
    const auto wt = word_tokens(tok, words, c.max_word_len);
    if (wt.empty()) continue;
    std::vector<std::size_t> starts{0};
    {
      std::size_t chars = 0;
      for (std::size_t i = 0; i < wt.size(); ++i) {
        if (chars >= half) {
          starts.push_back(i);
          chars = 0;
        }
        chars += wt[i].size() + 1;
      }
    }
    // Assign every word to the earliest window start from which it fits.
    std::vector<std::size_t> owner(wt.size());
    std::vector<std::size_t> end(starts.size(), 0);
    {
      std::size_t k = 0;
      std::size_t chars = 0;  // characters from starts[k] to the current word
      for (std::size_t i = 0; i < wt.size(); ++i) {
        chars += wt[i].size() + 1;
        while (chars > c.block_chars) {
          if (k + 1 >= starts.size()) throw ConfigError("evaluation: word does not fit in block_chars");
          for (std::size_t j = starts[k]; j < starts[k + 1]; ++j) chars -= wt[j].size() + 1;
          ++k;
        }
        owner[i] = k;
        end[k] = i + 1;
      }
    }
    std::vector<WordRecord> recs(wt.size());
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += windows_per_batch) {
      std::vector<std::vector<WordTokens>> seqs;
      std::vector<std::size_t> ks;
      for (std::size_t k = b0; k < std::min(starts.size(), b0 + windows_per_batch); ++k) {
        if (end[k] <= starts[k]) continue;
        seqs.emplace_back(wt.begin() + static_cast<std::ptrdiff_t>(starts[k]),
                          wt.begin() + static_cast<std::ptrdiff_t>(end[k]));
        ks.push_back(k);
      }
      if (seqs.empty()) continue;
      const auto batch = make_segmented_batch(seqs, c);
      nn::Tape<T> tape(false);
      auto pass = hier_pass(tape, m, batch);
      const auto logits = tape.value(pass.logits);
      std::size_t flat_word = 0;
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        for (std::size_t j = 0; j < seqs[s].size(); ++j, ++flat_word) {
          const std::size_t i = starts[ks[s]] + j;
          if (owner[i] != ks[s]) continue;
          const std::size_t f = pass.targets.word_first[flat_word];
          const std::size_t len = pass.targets.word_len[flat_word];
          std::vector<std::uint8_t> hit(len + 1);
          bool all = true;
          for (std::size_t r = 0; r <= len; ++r) {
            const TokenId gold = pass.targets.targets[f + r];
            hit[r] = argmax<T>({logits.data() + (f + r) * v, v}) == gold && gold != special::kUnk;
            all = all && hit[r];
          }
          WordRecord rec;
          rec.gold = detail::render_word(tok, wt[i]);
          rec.correct = all;
          const auto [total, ok] = detail::unit_credits(tok, std::span<const TokenId>(wt[i]), hit);
          rec.chars = total + 1;
          rec.chars_correct = ok + hit[len];
          recs[i] = std::move(rec);
        }
      }
    }
    for (auto& r : recs) {
      out.records.push_back(std::move(r));
      if (max_words && out.records.size() >= max_words) return out;
    }
  }
  return out;
}

template <class T>
WordEval evaluate_words(Model<T>& m, const Tokenizer& tok, const std::vector<Document>& docs,
                        std::size_t max_words = 0) {
  std::vector<std::vector<std::string>> words;
  for (const auto& d : docs) words.push_back(segment_words(clean_text(d.text)).words);
  return m.config.hierarchical ? evaluate_hierarchical(m, tok, words, max_words)
                               : evaluate_flat(m, tok, words, max_words);
}

/// The model's greedy next word after `context`.
template <class T>
std::string predict_next_word(Model<T>& m, const Tokenizer& tok, const std::string& context) {
  if (m.config.hierarchical) return generate_hierarchical(m, tok, context, 1);
  std::vector<TokenId> ctx = tok.encode(clean_text(context)).ids;
  if (tok.scheme() != Scheme::kWord) {
    const TokenId b = *tok.boundary_id();
    if (ctx.empty() || ctx.back() != b) ctx.push_back(b);
    const auto ids = greedy_flat_tokens(m, ctx, 4 * m.config.max_word_len, nullptr,
                                        [&](TokenId id) { return id == b; });
    std::vector<TokenId> word(ids.begin(), std::find(ids.begin(), ids.end(), b));
    const std::string s = tok.decode(word);
    return tok.scheme() == Scheme::kByte ? (utf8::valid(s) ? s : std::string()) : s;
  }
  if (ctx.empty()) ctx.push_back(special::kBos);
  return tok.decode(greedy_flat_tokens(m, ctx, 1));
}

template <class T>
NumberMetrics number_estimation(Model<T>& m, const Tokenizer& tok, const std::vector<NumeracyExample>& examples) {
  std::vector<std::string> preds;
  std::vector<double> golds;
  for (const auto& ex : examples) {
    preds.push_back(predict_next_word(m, tok, ex.context));
    golds.push_back(*parse_number(ex.gold));
  }
  return number_metrics(preds, golds);
}

// --- report ---------------------------------------------------------------------------------

struct EvalReport {
  std::string model;
  std::optional<double> word_acc;
  std::optional<double> char_acc;
  std::size_t words = 0;
  std::optional<StratifiedAccuracy> strata;
  std::optional<NumberMetrics> numbers;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
    nlohmann::json j{{"model", model}, {"word_acc", opt(word_acc)}, {"char_acc", opt(char_acc)}, {"words", words}};
    if (strata) {
      j["rare_acc"] = opt(strata->rare_acc);
      j["freq_acc"] = opt(strata->freq_acc);
      j["rare_count"] = strata->rare_count;
      j["freq_count"] = strata->freq_count;
    }
    if (numbers) {
      j["num_pct"] = numbers->num_pct;
      j["eacc"] = opt(numbers->eacc);
      j["mdape"] = opt(numbers->mdape);
      j["num_examples"] = numbers->examples;
      j["num_parsed"] = numbers->parsed;
    }
    return j;
  }

  std::string to_table() const {
    std::vector<std::pair<std::string, std::string>> rows;
    auto fmt = [](const std::optional<double>& x) {
      if (!x) return std::string("-");
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << *x;
      return s.str();
    };
    rows.emplace_back("Acc (word %)", fmt(word_acc));
    rows.emplace_back("Acc (char %)", fmt(char_acc));
    if (strata) {
      rows.emplace_back("Rare (%)", fmt(strata->rare_acc) + " (n=" + std::to_string(strata->rare_count) + ")");
      rows.emplace_back("Frequent (%)", fmt(strata->freq_acc) + " (n=" + std::to_string(strata->freq_count) + ")");
    }
    if (numbers) {
      rows.emplace_back("%Num", fmt(numbers->num_pct));
      rows.emplace_back("EAcc", fmt(numbers->eacc));
      rows.emplace_back("MdAPE", fmt(numbers->mdape));
    }
    std::size_t w = model.size();
    for (const auto& [k, v] : rows) w = std::max(w, k.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(w)) << "metric" << "  " << model << "\n";
    for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(w)) << k << "  " << v << "\n";
    return out.str();
  }
};

}  // namespace wordpool
