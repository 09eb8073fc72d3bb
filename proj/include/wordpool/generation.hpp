#pragma once

// Greedy decoding for flat and hierarchical models, with forward-pass audits.

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wordpool/corpus.hpp"
#include "wordpool/model.hpp"

namespace wordpool {

/// Forward-pass counts collected during one generation call. Depths are in
/// units of one transformer layer evaluated once.
struct GenerationAudit {
  std::string mode;                 // flat | sequential | pipelined
  std::size_t flat_passes = 0;      // full flat-decoder forwards
  std::size_t encoder_passes = 0;   // words run through the word encoder
  std::size_t core_passes = 0;      // word-level decoder forwards
  std::size_t decoder_steps = 0;    // per-word decoder forwards that emitted a base token
  std::size_t eow_steps = 0;        // per-word decoder forwards that ended a word
  std::size_t words = 0;
  std::size_t units = 0;            // base tokens emitted
  std::size_t chars = 0;            // characters emitted, one boundary per word included
  std::size_t layers = 0;           // depth of one flat or core pass
  double depth_layers = 0;          // critical path honouring every data dependency
  double overlap_depth_layers = 0;  // schedule with Step 2 of word i+1 overlapping Step 3 of word i

  nlohmann::json to_json() const {
    return {{"mode", mode},
            {"flat_passes", flat_passes},
            {"encoder_passes", encoder_passes},
            {"core_passes", core_passes},
            {"decoder_steps", decoder_steps},
            {"eow_steps", eow_steps},
            {"words", words},
            {"units", units},
            {"chars", chars},
            {"layers", layers},
            {"depth_layers", depth_layers},
            {"overlap_depth_layers", overlap_depth_layers}};
  }

  static GenerationAudit from_json(const nlohmann::json& j) {
    GenerationAudit a;
    a.mode = j.at("mode").get<std::string>();
    a.flat_passes = j.value("flat_passes", std::size_t{0});
    a.encoder_passes = j.value("encoder_passes", std::size_t{0});
    a.core_passes = j.value("core_passes", std::size_t{0});
    a.decoder_steps = j.value("decoder_steps", std::size_t{0});
    a.eow_steps = j.value("eow_steps", std::size_t{0});
    a.words = j.value("words", std::size_t{0});
    a.units = j.value("units", std::size_t{0});
    a.chars = j.at("chars").get<std::size_t>();
    a.layers = j.at("layers").get<std::size_t>();
    a.depth_layers = j.at("depth_layers").get<double>();
    a.overlap_depth_layers = j.value("overlap_depth_layers", a.depth_layers);
    return a;
  }
};

template <class T>
std::int32_t argmax(std::span<const T> v) {
  return static_cast<std::int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Start token for an empty flat context.
inline TokenId flat_start_token(const Tokenizer& tok) { return tok.boundary_id().value_or(special::kBos); }

/// Greedy continuation of `context` by up to `max_new` tokens. The window
/// slides once the context budget is full.
template <class T>
std::vector<TokenId> greedy_flat_tokens(Model<T>& m, std::vector<TokenId> context, std::size_t max_new,
                                        GenerationAudit* audit = nullptr,
                                        const std::function<bool(TokenId)>& stop = nullptr) {
  const std::size_t window = m.config.context;
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < max_new; ++i) {
    const std::size_t start = context.size() > window ? context.size() - window : 0;
    const std::span<const TokenId> in(context.data() + start, context.size() - start);
    const auto logits = flat_forward(m, in);
    const std::size_t v = m.config.vocab_size;
    const TokenId next = argmax<T>({logits.data.data() + (in.size() - 1) * v, v});
    if (audit) {
      ++audit->flat_passes;
      audit->depth_layers += static_cast<double>(m.config.layers);
      audit->overlap_depth_layers += static_cast<double>(m.config.layers);
    }
    out.push_back(next);
    context.push_back(next);
    if (stop && stop(next)) break;
  }
  return out;
}

template <class T>
std::string generate_flat(Model<T>& m, const Tokenizer& tok, std::string_view prompt, std::size_t max_new,
                          GenerationAudit* audit = nullptr) {
  if (m.config.hierarchical) throw ConfigError("generate_flat needs a flat model");
  if (audit) {
    audit->mode = "flat";
    audit->layers = m.config.layers;
  }
  std::vector<TokenId> ctx = tok.encode(clean_text(prompt)).ids;
  if (ctx.empty()) ctx.push_back(flat_start_token(tok));
  if (max_new == 0) return "";
  const auto ids = greedy_flat_tokens(m, std::move(ctx), max_new, audit);
  if (audit) {
    audit->units += ids.size();
    if (auto b = tok.boundary_id()) audit->words += static_cast<std::size_t>(std::count(ids.begin(), ids.end(), *b));
  }
  std::string text = tok.decode(ids);
  if (tok.scheme() == Scheme::kByte) text = utf8::repair(text);
  if (audit) audit->chars += utf8::length(text);
  return text;
}

/// Flat continuation by `max_words` whole words. The prompt is closed with a
/// boundary so the first token starts a new word; words are capped at
/// max_word_len tokens.
template <class T>
std::string generate_flat_words(Model<T>& m, const Tokenizer& tok, std::string_view prompt, std::size_t max_words,
                                GenerationAudit* audit = nullptr) {
  if (m.config.hierarchical) throw ConfigError("generate_flat_words needs a flat model");
  if (audit) {
    audit->mode = "flat";
    audit->layers = m.config.layers;
  }
  std::vector<TokenId> ctx = tok.encode(clean_text(prompt)).ids;
  const auto boundary = tok.boundary_id();
  if (boundary && (ctx.empty() || ctx.back() != *boundary)) ctx.push_back(*boundary);
  if (ctx.empty()) ctx.push_back(special::kBos);
  if (max_words == 0) return "";
  std::vector<TokenId> ids;
  if (!boundary) {
    ids = greedy_flat_tokens(m, std::move(ctx), max_words, audit);
  } else {
    std::size_t seen = 0;
    ids = greedy_flat_tokens(m, std::move(ctx), max_words * (m.config.max_word_len + 1), audit,
                             [&](TokenId id) { return id == *boundary && ++seen == max_words; });
    if (!ids.empty() && ids.back() == *boundary) ids.pop_back();
  }
  std::string text = tok.decode(ids);
  if (tok.scheme() == Scheme::kByte) text = utf8::repair(text);
  if (audit) {
    audit->units += ids.size();
    for (const auto& w : segment_words(text).words) {
      ++audit->words;
      audit->chars += utf8::length(w) + 1;
    }
  }
  return text;
}

namespace detail {

/// Trailing words that fit in T characters, counting one boundary per word.
inline std::size_t context_start(const std::vector<WordTokens>& words, std::size_t t_chars) {
  std::size_t chars = 0;
  std::size_t start = words.size();
  // The core also needs one positional slot for the start group.
  while (start > 0 && words.size() - start + 2 <= t_chars && chars + words[start - 1].size() + 1 <= t_chars) {
    chars += words[start - 1].size() + 1;
    --start;
  }
  return start;
}

template <class T>
nn::Tensor<T> encode_one(Model<T>& m, const WordTokens& w) {
  nn::Tape<T> t(false);
  const std::span<const TokenId> one[1] = {w};
  const auto v = t.value(encode_word_rows(t, m, one));
  return nn::Tensor<T>({m.config.n_cls, m.config.dim}, std::vector<T>(v.begin(), v.end()));
}

/// Step 2 for the word following `cache[start..]`.
template <class T>
nn::Tensor<T> predict_next(Model<T>& m, const std::vector<nn::Tensor<T>>& cache, std::size_t start) {
  const std::size_t n = m.config.n_cls * m.config.dim;
  const std::size_t words = cache.size() - start;
  nn::Tensor<T> reps({words, m.config.n_cls, m.config.dim});
  for (std::size_t i = 0; i < words; ++i) std::copy(cache[start + i].data.begin(), cache[start + i].data.end(), reps.data.begin() + i * n);
  auto pred = word_lm_step(m, reps);
  return nn::Tensor<T>({m.config.n_cls, m.config.dim},
                       std::vector<T>(pred.data.end() - static_cast<std::ptrdiff_t>(n), pred.data.end()));
}

/// Step 3: greedy base tokens until EOW or max_word_len. Tokens that never
/// appear as targets (PAD, CLS, BOS, the space) are excluded, and EOW is
/// allowed only once the word is non-empty.
template <class T>
WordTokens decode_greedy(Model<T>& m, const nn::Tensor<T>& cls, std::optional<TokenId> boundary,
                         GenerationAudit* audit) {
  constexpr T kOff = -std::numeric_limits<T>::infinity();
  WordTokens word;
  while (true) {
    auto logits = decode_word(m, cls, word);
    for (TokenId id : {special::kPad, special::kCls, special::kBos}) logits[id] = kOff;
    if (boundary && static_cast<std::size_t>(*boundary) < logits.size()) logits[*boundary] = kOff;
    if (word.empty()) logits[special::kEow] = kOff;
    const TokenId next = argmax<T>(logits);
    if (next == special::kEow) {
      if (audit) ++audit->eow_steps;
      break;
    }
    if (audit) ++audit->decoder_steps;
    word.push_back(next);
    if (word.size() >= m.config.max_word_len) break;
  }
  return word;
}

inline std::string render_word(const Tokenizer& tok, const WordTokens& w) {
  std::string s = tok.decode(w);
  return tok.scheme() == Scheme::kByte ? utf8::repair(s) : s;
}

}  // namespace detail

/// Greedy word-by-word generation. Steps 1 and 2 produce the next word's CLS
/// vectors, Step 3 expands them into base tokens. In pipelined mode the two
/// halves run on separate threads connected by queues; output is identical.
template <class T>
std::string generate_hierarchical(Model<T>& m, const Tokenizer& tok, std::string_view prompt,
                                  std::size_t max_new_words, bool pipelined = false,
                                  GenerationAudit* audit = nullptr) {
  const auto& c = m.config;
  if (!c.hierarchical) throw ConfigError("generate_hierarchical needs a hierarchical model");
  GenerationAudit local;
  GenerationAudit& a = audit ? *audit : local;
  a.mode = pipelined ? "pipelined" : "sequential";
  a.layers = c.layers;
  std::vector<WordTokens> words = word_tokens(tok, segment_words(clean_text(prompt)).words, c.max_word_len);
  std::vector<nn::Tensor<T>> cache;
  for (const auto& w : words) {
    cache.push_back(detail::encode_one(m, w));
    ++a.encoder_passes;
  }
  const double enc_layers = static_cast<double>(c.encoder_layers);
  const double core_layers = static_cast<double>(c.layers);
  const double dec_layers = static_cast<double>(c.worddec_layers);
  std::vector<WordTokens> generated;

  auto account = [&](const WordTokens& w) {
    ++a.core_passes;
    ++a.words;
    a.units += w.size();
    a.chars += utf8::length(detail::render_word(tok, w)) + 1;
    const double produce = enc_layers + core_layers;
    const std::size_t steps = w.size() + (w.size() < c.max_word_len ? 1 : 0);
    const double consume = dec_layers * static_cast<double>(steps);
    a.depth_layers += produce + consume;
    a.overlap_depth_layers += std::max(produce, consume);
  };

  if (!pipelined) {
    for (std::size_t i = 0; i < max_new_words; ++i) {
      const auto cls = detail::predict_next(m, cache, detail::context_start(words, c.block_chars));
      WordTokens w = detail::decode_greedy(m, cls, tok.boundary_id(), &a);
      account(w);
      words.push_back(w);
      cache.push_back(detail::encode_one(m, w));
      ++a.encoder_passes;
      generated.push_back(std::move(w));
    }
  } else if (max_new_words > 0) {
    // Producer: Steps 1-2. Consumer: Step 3. Each finished word flows back to
    // the producer, which is the only dependency between the stages.
    std::mutex mu;
    std::condition_variable cv;
    std::deque<nn::Tensor<T>> to_decoder;
    std::deque<WordTokens> to_encoder;
    std::exception_ptr failure;
    bool abort = false;
    GenerationAudit dec_audit;
    std::thread consumer([&] {
      try {
        for (std::size_t i = 0; i < max_new_words; ++i) {
          nn::Tensor<T> cls;
          {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return !to_decoder.empty() || abort; });
            if (abort) return;
            cls = std::move(to_decoder.front());
            to_decoder.pop_front();
          }
          WordTokens w = detail::decode_greedy(m, cls, tok.boundary_id(), &dec_audit);
          {
            std::lock_guard lock(mu);
            to_encoder.push_back(std::move(w));
          }
          cv.notify_all();
        }
      } catch (...) {
        std::lock_guard lock(mu);
        failure = std::current_exception();
        abort = true;
        cv.notify_all();
      }
    });
    try {
      for (std::size_t i = 0; i < max_new_words; ++i) {
        auto cls = detail::predict_next(m, cache, detail::context_start(words, c.block_chars));
        {
          std::lock_guard lock(mu);
          to_decoder.push_back(std::move(cls));
        }
        cv.notify_all();
        WordTokens w;
        {
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return !to_encoder.empty() || abort; });
          if (abort) break;
          w = std::move(to_encoder.front());
          to_encoder.pop_front();
        }
        account(w);
        words.push_back(w);
        cache.push_back(detail::encode_one(m, w));
        ++a.encoder_passes;
        generated.push_back(std::move(w));
      }
    } catch (...) {
      {
        std::lock_guard lock(mu);
        abort = true;
        if (!failure) failure = std::current_exception();
      }
      cv.notify_all();
    }
    consumer.join();
    if (failure) std::rethrow_exception(failure);
    a.decoder_steps += dec_audit.decoder_steps;
    a.eow_steps += dec_audit.eow_steps;
  }

  std::string out;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (i) out += ' ';
    out += detail::render_word(tok, generated[i]);
  }
  return out;
}

}  // namespace wordpool
