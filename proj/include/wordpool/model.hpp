#pragma once

// Flat GPT-style decoder and the three-stage hierarchical word model:
// a word encoder pools each word into n_cls CLS vectors, a word-level causal
// decoder predicts the next word's CLS vectors, and a small per-word decoder
// expands those back into base tokens.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wordpool/autodiff.hpp"
#include "wordpool/tokenizer.hpp"

namespace wordpool {

struct ModelConfig {
  Scheme scheme = Scheme::kChar;
  bool hierarchical = false;
  std::size_t layers = 4;          // core decoder depth
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 1;  // word encoder (hierarchical only)
  std::size_t worddec_layers = 1;  // per-word decoder (hierarchical only)
  std::size_t n_cls = 4;
  std::size_t max_word_len = 24;
  std::size_t block_chars = 192;   // T
  std::size_t vocab_size = 0;
  std::size_t context = 192;       // flat positions, in tokens of the scheme
  bool packed = false;             // padless layout for the hierarchical model

  std::size_t encoder_width() const { return n_cls + max_word_len + 1; }
  std::size_t decoder_width() const { return n_cls + max_word_len; }
  std::size_t max_words() const { return block_chars; }

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("model: dim must be a positive multiple of heads");
    if (layers == 0) throw ConfigError("model: layers must be >= 1");
    if (vocab_size <= static_cast<std::size_t>(special::kCount)) throw ConfigError("model: vocab_size too small");
    if (block_chars == 0) throw ConfigError("model: block_chars must be > 0");
    if (hierarchical) {
      if (n_cls == 0) throw ConfigError("model: n_cls must be >= 1");
      if (max_word_len == 0) throw ConfigError("model: max_word_len must be >= 1");
      if (encoder_layers == 0 || worddec_layers == 0) throw ConfigError("model: encoder and word decoder need layers");
      if (scheme != Scheme::kByte && scheme != Scheme::kChar) {
        throw ConfigError("model: hierarchical models use byte or char base units");
      }
    } else if (context == 0) {
      throw ConfigError("model: context must be > 0");
    }
  }

  nlohmann::json to_json() const {
    return {{"scheme", to_string(scheme)},
            {"hierarchical", hierarchical},
            {"layers", layers},
            {"dim", dim},
            {"heads", heads},
            {"encoder_layers", encoder_layers},
            {"worddec_layers", worddec_layers},
            {"n_cls", n_cls},
            {"max_word_len", max_word_len},
            {"block_chars", block_chars},
            {"vocab_size", vocab_size},
            {"context", context},
            {"packed", packed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.hierarchical = j.at("hierarchical").get<bool>();
    c.layers = j.at("layers");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.encoder_layers = j.at("encoder_layers");
    c.worddec_layers = j.at("worddec_layers");
    c.n_cls = j.at("n_cls");
    c.max_word_len = j.at("max_word_len");
    c.block_chars = j.at("block_chars");
    c.vocab_size = j.at("vocab_size");
    c.context = j.at("context");
    c.packed = j.value("packed", false);
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

// --- parameters -------------------------------------------------------------------

enum class Init { kNormal, kZeros, kOnes };

struct ParamSpec {
  std::string name;
  nn::Shape shape;
  Init init = Init::kNormal;
  bool decay = false;
};

namespace detail {

inline void block_specs(std::vector<ParamSpec>& out, const std::string& p, std::size_t d) {
  auto lin = [&](const std::string& n, std::size_t in, std::size_t o) {
    out.push_back({p + n + ".weight", {in, o}, Init::kNormal, true});
    out.push_back({p + n + ".bias", {o}, Init::kZeros, false});
  };
  auto ln = [&](const std::string& n) {
    out.push_back({p + n + ".weight", {d}, Init::kOnes, false});
    out.push_back({p + n + ".bias", {d}, Init::kZeros, false});
  };
  ln("ln1");
  lin("attn.q", d, d);
  lin("attn.k", d, d);
  lin("attn.v", d, d);
  lin("attn.proj", d, d);
  ln("ln2");
  lin("mlp.fc", d, 4 * d);
  lin("mlp.proj", 4 * d, d);
}

inline void stack_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t layers, std::size_t d) {
  for (std::size_t i = 0; i < layers; ++i) block_specs(out, prefix + "h." + std::to_string(i) + ".", d);
  out.push_back({prefix + "ln_f.weight", {d}, Init::kOnes, false});
  out.push_back({prefix + "ln_f.bias", {d}, Init::kZeros, false});
}

}  // namespace detail

/// Every learned tensor of a configuration, in a fixed order.
inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim;
  const std::size_t v = c.vocab_size;
  std::vector<ParamSpec> out;
  if (!c.hierarchical) {
    out.push_back({"tok_emb", {v, d}});
    out.push_back({"pos_emb", {c.context, d}});
    detail::stack_specs(out, "", c.layers, d);
    out.push_back({"head", {d, v}, Init::kNormal, true});
    return out;
  }
  out.push_back({"enc.tok_emb", {v, d}});
  out.push_back({"enc.pos_emb", {c.encoder_width(), d}});
  detail::stack_specs(out, "enc.", c.encoder_layers, d);
  out.push_back({"core.start", {c.n_cls, d}});
  out.push_back({"core.pos_emb", {c.max_words(), d}});
  detail::stack_specs(out, "core.", c.layers, d);
  out.push_back({"dec.tok_emb", {v, d}});
  out.push_back({"dec.pos_emb", {c.decoder_width(), d}});
  detail::stack_specs(out, "dec.", c.worddec_layers, d);
  out.push_back({"dec.head", {d, v}, Init::kNormal, true});
  return out;
}

inline std::size_t count_params(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& s : param_specs(c)) n += nn::numel(s.shape);
  return n;
}

template <class T>
struct Model {
  ModelConfig config;
  nn::ParamStore<T> params;

  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (const auto& s : param_specs(cfg)) {
      auto& p = params[params.add(s.name, s.shape, s.decay)];
      for (auto& x : p.value) {
        switch (s.init) {
          case Init::kNormal: x = static_cast<T>(normal(rng)); break;
          case Init::kZeros: x = T(0); break;
          case Init::kOnes: x = T(1); break;
        }
      }
    }
  }

  nn::Parameter<T>& param(const std::string& name) {
    auto* p = params.find(name);
    if (!p) throw ConfigError("unknown parameter " + name);
    return *p;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    for (const auto& p : params) {
      auto& q = m.params[m.params.add(p.name, p.shape, p.decay)];
      std::copy(p.value.begin(), p.value.end(), q.value.begin());
    }
    return m;
  }
};

// --- attention masks -------------------------------------------------------------------

/// Block-diagonal bidirectional mask over words laid out back to back, each
/// occupying n_cls + len rows.
inline nn::AttentionMask build_encoder_mask(std::span<const std::size_t> word_lens, std::size_t n_cls) {
  std::size_t n = 0;
  for (auto l : word_lens) {
    if (l == 0) throw ConfigError("build_encoder_mask: word lengths must be >= 1");
    n += l + n_cls;
  }
  nn::AttentionMask m(n, n);
  std::size_t off = 0;
  for (auto l : word_lens) {
    const std::size_t w = l + n_cls;
    for (std::size_t i = off; i < off + w; ++i) {
      for (std::size_t j = off; j < off + w; ++j) m.set(i, j);
    }
    off += w;
  }
  return m;
}

/// Padded-row encoder mask: live rows attend to each other; pad rows see only themselves.
inline nn::AttentionMask padded_word_mask(std::size_t width, std::size_t live) {
  nn::AttentionMask m(width, width);
  for (std::size_t i = 0; i < width; ++i) {
    if (i < live) {
      for (std::size_t j = 0; j < live; ++j) m.set(i, j);
    } else {
      m.set(i, i);
    }
  }
  return m;
}

// --- segmented batches ---------------------------------------------------------------------

/// Per-word padded grid: each row is [CLS x n_cls, base tokens, EOW, PAD...].
struct SegmentedBatch {
  std::size_t batch = 0;
  std::size_t max_words = 0;
  std::size_t width = 0;
  std::size_t n_cls = 0;
  std::vector<TokenId> words;         // [batch x max_words x width]
  std::vector<std::size_t> word_count;
  std::vector<std::size_t> word_len;  // [batch x max_words]
  std::vector<TokenId> flat_targets;  // [batch x max_words x (width - n_cls)]: base tokens, EOW, PAD

  TokenId at(std::size_t b, std::size_t w, std::size_t j) const { return words[(b * max_words + w) * width + j]; }
  std::size_t len(std::size_t b, std::size_t w) const { return word_len[b * max_words + w]; }

  std::span<const TokenId> tokens(std::size_t b, std::size_t w) const {
    return {words.data() + (b * max_words + w) * width + n_cls, len(b, w)};
  }
  std::span<const TokenId> targets(std::size_t b, std::size_t w) const {
    const std::size_t tw = width - n_cls;
    return {flat_targets.data() + (b * max_words + w) * tw, tw};
  }
};

using WordTokens = std::vector<TokenId>;

/// Builds a grid from sequences of base-token words. Sequences may hold at
/// most block_chars characters counting one boundary per word.
inline SegmentedBatch make_segmented_batch(const std::vector<std::vector<WordTokens>>& seqs, const ModelConfig& c) {
  SegmentedBatch b;
  b.batch = seqs.size();
  b.n_cls = c.n_cls;
  b.width = c.encoder_width();
  for (const auto& s : seqs) b.max_words = std::max(b.max_words, s.size());
  b.words.assign(b.batch * b.max_words * b.width, special::kPad);
  b.word_len.assign(b.batch * b.max_words, 0);
  b.flat_targets.assign(b.batch * b.max_words * (b.width - c.n_cls), special::kPad);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::size_t chars = 0;
    for (std::size_t w = 0; w < seqs[i].size(); ++w) {
      const auto& word = seqs[i][w];
      if (word.size() > c.max_word_len) throw ConfigError("segmented batch: word longer than max_word_len");
      chars += word.size() + 1;
      TokenId* row = b.words.data() + (i * b.max_words + w) * b.width;
      TokenId* tgt = b.flat_targets.data() + (i * b.max_words + w) * (b.width - c.n_cls);
      std::fill_n(row, c.n_cls, special::kCls);
      std::copy(word.begin(), word.end(), row + c.n_cls);
      row[c.n_cls + word.size()] = special::kEow;
      std::copy(word.begin(), word.end(), tgt);
      tgt[word.size()] = special::kEow;
      b.word_len[i * b.max_words + w] = word.size();
    }
    if (chars > c.block_chars) throw ConfigError("segmented batch: sequence exceeds block_chars");
    b.word_count.push_back(seqs[i].size());
  }
  return b;
}

/// Base-token words with anything longer than max_len split into consecutive pieces.
inline std::vector<WordTokens> split_long_words(std::vector<WordTokens> words, std::size_t max_len) {
  std::vector<WordTokens> out;
  out.reserve(words.size());
  for (auto& w : words) {
    if (w.size() <= max_len) {
      out.push_back(std::move(w));
      continue;
    }
    for (std::size_t i = 0; i < w.size(); i += max_len) {
      out.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(i),
                       w.begin() + static_cast<std::ptrdiff_t>(std::min(w.size(), i + max_len)));
    }
  }
  return out;
}

/// Encodes words into base tokens for a hierarchical model, splitting long
/// words. For the byte scheme a piece never ends inside a character.
inline std::vector<WordTokens> word_tokens(const Tokenizer& tok, const std::vector<std::string>& words,
                                           std::size_t max_len) {
  std::vector<WordTokens> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    if (tok.scheme() != Scheme::kByte) {
      for (auto& piece : split_long_words({tok.encode_word(w)}, max_len)) out.push_back(std::move(piece));
      continue;
    }
    WordTokens cur;
    for (const auto& ch : utf8::split_chars(w)) {
      const auto ids = tok.encode_word(ch);
      if (!cur.empty() && cur.size() + ids.size() > max_len) out.push_back(std::exchange(cur, {}));
      cur.insert(cur.end(), ids.begin(), ids.end());
    }
    out.push_back(std::move(cur));
  }
  return out;
}

// --- forward passes ------------------------------------------------------------------------

namespace detail {

template <class T>
nn::Var transformer_block(nn::Tape<T>& t, Model<T>& m, const std::string& p, nn::Var x,
                          std::span<const nn::AttentionBlock> blocks) {
  auto P = [&](const std::string& n) { return t.param(m.param(p + n)); };
  auto lin = [&](nn::Var in, const std::string& n) { return t.linear(in, P(n + ".weight"), P(n + ".bias")); };
  nn::Var h = t.layernorm(x, P("ln1.weight"), P("ln1.bias"));
  nn::Var a = t.masked_attention(lin(h, "attn.q"), lin(h, "attn.k"), lin(h, "attn.v"), blocks, m.config.heads);
  x = t.add(x, lin(a, "attn.proj"));
  h = t.layernorm(x, P("ln2.weight"), P("ln2.bias"));
  return t.add(x, lin(t.gelu(lin(h, "mlp.fc")), "mlp.proj"));
}

template <class T>
nn::Var run_stack(nn::Tape<T>& t, Model<T>& m, const std::string& prefix, std::size_t layers, nn::Var x,
                  std::span<const nn::AttentionBlock> blocks) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = transformer_block(t, m, prefix + "h." + std::to_string(i) + ".", x, blocks);
  }
  return t.layernorm(x, t.param(m.param(prefix + "ln_f.weight")), t.param(m.param(prefix + "ln_f.bias")));
}

/// Rows of `table` at positions 0..n-1 of each segment, concatenated.
inline std::vector<std::size_t> position_rows(std::span<const std::size_t> segment_lens) {
  std::vector<std::size_t> idx;
  for (auto n : segment_lens) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  }
  return idx;
}

}  // namespace detail

/// Flat causal decoder over `batch` sequences of `len` tokens laid out row-wise.
/// Returns logits [(batch * len) x V]; row t predicts token t + 1.
template <class T>
nn::Var flat_logits(nn::Tape<T>& t, Model<T>& m, std::span<const TokenId> ids, std::size_t batch, std::size_t len) {
  const auto& c = m.config;
  if (c.hierarchical) throw ConfigError("flat_logits on a hierarchical model");
  if (len == 0 || len > c.context) throw ConfigError("flat forward: sequence length exceeds the context budget");
  if (ids.size() != batch * len) throw ConfigError("flat forward: id count does not match batch x len");
  nn::Var x = t.embedding(t.param(m.param("tok_emb")), ids);
  const std::vector<std::size_t> lens(batch, len);
  x = t.add(x, t.gather_rows(t.param(m.param("pos_emb")), detail::position_rows(lens)));
  std::vector<nn::AttentionBlock> blocks;
  const auto causal = nn::AttentionMask::causal(len);
  for (std::size_t b = 0; b < batch; ++b) blocks.push_back({b * len, causal});
  x = detail::run_stack(t, m, "", c.layers, x, blocks);
  return t.matmul(x, t.param(m.param("head")));
}

/// Logits [len x V] for one sequence, without recording gradients.
template <class T>
nn::Tensor<T> flat_forward(Model<T>& m, std::span<const TokenId> ids) {
  nn::Tape<T> t(false);
  nn::Var out = flat_logits(t, m, ids, 1, ids.size());
  const auto v = t.value(out);
  return nn::Tensor<T>({ids.size(), m.config.vocab_size}, std::vector<T>(v.begin(), v.end()));
}

/// Mean next-token cross-entropy of `batch` rows of len + 1 tokens each.
template <class T>
nn::Var flat_loss(nn::Tape<T>& t, Model<T>& m, std::span<const TokenId> rows, std::size_t batch, std::size_t len) {
  std::vector<TokenId> in;
  std::vector<TokenId> tgt;
  for (std::size_t b = 0; b < batch; ++b) {
    const TokenId* r = rows.data() + b * (len + 1);
    in.insert(in.end(), r, r + len);
    tgt.insert(tgt.end(), r + 1, r + len + 1);
  }
  return t.cross_entropy(flat_logits(t, m, in, batch, len), tgt, -1);
}

/// Step 1. CLS outputs [(words x n_cls) x D] of the given words, in order.
template <class T>
nn::Var encode_word_rows(nn::Tape<T>& t, Model<T>& m, std::span<const std::span<const TokenId>> words) {
  const auto& c = m.config;
  if (words.empty()) throw ConfigError("encode_words: no words");
  const std::size_t width = c.encoder_width();
  std::vector<TokenId> ids;
  std::vector<std::size_t> seg;
  std::vector<nn::AttentionBlock> blocks;
  std::map<std::size_t, nn::AttentionMask> masks;
  std::size_t off = 0;
  for (auto w : words) {
    if (w.size() > c.max_word_len) throw ConfigError("encode_words: word longer than max_word_len");
    const std::size_t live = c.n_cls + w.size() + 1;
    const std::size_t rows = c.packed ? live : width;
    ids.insert(ids.end(), c.n_cls, special::kCls);
    ids.insert(ids.end(), w.begin(), w.end());
    ids.push_back(special::kEow);
    ids.insert(ids.end(), rows - live, special::kPad);
    auto it = masks.find(live);
    if (it == masks.end()) {
      it = masks.emplace(live, c.packed ? nn::AttentionMask::full(live) : padded_word_mask(width, live)).first;
    }
    blocks.push_back({off, it->second});
    seg.push_back(rows);
    off += rows;
  }
  nn::Var x = t.embedding(t.param(m.param("enc.tok_emb")), ids);
  x = t.add(x, t.gather_rows(t.param(m.param("enc.pos_emb")), detail::position_rows(seg)));
  x = detail::run_stack(t, m, "enc.", c.encoder_layers, x, blocks);
  std::vector<std::size_t> cls;
  off = 0;
  for (auto rows : seg) {
    for (std::size_t i = 0; i < c.n_cls; ++i) cls.push_back(off + i);
    off += rows;
  }
  return t.gather_rows(x, std::move(cls));
}

/// Step 2. `cls` holds, per sequence, the CLS rows of the words that feed the
/// core (group_counts[s] - 1 words). Returns predicted rows
/// [(sum group_counts x n_cls) x D]; group g of a sequence predicts its word g.
template <class T>
nn::Var word_lm_rows(nn::Tape<T>& t, Model<T>& m, std::optional<nn::Var> cls,
                     std::span<const std::size_t> group_counts) {
  const auto& c = m.config;
  const std::size_t n = c.n_cls;
  nn::Var start = t.param(m.param("core.start"));
  std::vector<nn::Var> parts{start};
  if (cls) parts.push_back(*cls);
  nn::Var pool = t.concat_rows(parts);
  std::vector<std::size_t> idx;
  std::vector<std::size_t> pos;
  std::vector<nn::AttentionBlock> blocks;
  std::size_t word_row = n;  // first CLS row inside `pool`
  std::size_t off = 0;
  for (std::size_t g : group_counts) {
    if (g == 0) throw ConfigError("word_lm_step: empty sequence");
    if (g > c.max_words()) throw ConfigError("word_lm_step: too many words for the positional table");
    for (std::size_t grp = 0; grp < g; ++grp) {
      for (std::size_t r = 0; r < n; ++r) {
        idx.push_back(grp == 0 ? r : word_row + (grp - 1) * n + r);
        pos.push_back(grp);
      }
    }
    word_row += (g - 1) * n;
    const std::vector<std::size_t> sizes(g, n);
    blocks.push_back({off, nn::AttentionMask::group_causal(sizes)});
    off += g * n;
  }
  if (word_row != t.rows(pool)) throw ConfigError("word_lm_step: CLS rows do not match group counts");
  nn::Var x = t.gather_rows(pool, std::move(idx));
  x = t.add(x, t.gather_rows(t.param(m.param("core.pos_emb")), std::move(pos)));
  return detail::run_stack(t, m, "core.", c.layers, x, blocks);
}

/// Step 3. Hidden states of the per-word decoder. `pred` holds n_cls rows per
/// word; `prefixes[i]` are the base tokens fed after them. Returns the final
/// hidden rows and, per word, the row offset of its block.
template <class T>
std::pair<nn::Var, std::vector<std::size_t>> decode_word_rows(nn::Tape<T>& t, Model<T>& m, nn::Var pred,
                                                              std::span<const std::span<const TokenId>> prefixes) {
  const auto& c = m.config;
  const std::size_t n = c.n_cls;
  if (t.rows(pred) != prefixes.size() * n) throw ConfigError("decode_word: one CLS group per word required");
  const std::size_t width = c.decoder_width();
  std::vector<TokenId> ids;
  std::vector<std::size_t> seg;
  for (auto p : prefixes) {
    if (p.size() > c.max_word_len) throw ConfigError("decode_word: prefix longer than max_word_len");
    const std::size_t rows = c.packed ? n + p.size() : width;
    ids.insert(ids.end(), p.begin(), p.end());
    ids.insert(ids.end(), rows - n - p.size(), special::kPad);
    seg.push_back(rows);
  }
  std::vector<nn::Var> parts{pred};
  if (!ids.empty()) parts.push_back(t.embedding(t.param(m.param("dec.tok_emb")), ids));
  nn::Var pool = t.concat_rows(parts);
  std::vector<std::size_t> idx;
  std::vector<std::size_t> offsets;
  std::vector<nn::AttentionBlock> blocks;
  std::map<std::size_t, nn::AttentionMask> masks;
  std::size_t tok_row = prefixes.size() * n;
  std::size_t off = 0;
  for (std::size_t w = 0; w < prefixes.size(); ++w) {
    for (std::size_t r = 0; r < n; ++r) idx.push_back(w * n + r);
    for (std::size_t r = n; r < seg[w]; ++r) idx.push_back(tok_row++);
    auto it = masks.find(seg[w]);
    if (it == masks.end()) it = masks.emplace(seg[w], nn::AttentionMask::causal(seg[w])).first;
    blocks.push_back({off, it->second});
    offsets.push_back(off);
    off += seg[w];
  }
  nn::Var x = t.gather_rows(pool, std::move(idx));
  x = t.add(x, t.gather_rows(t.param(m.param("dec.pos_emb")), detail::position_rows(seg)));
  return {detail::run_stack(t, m, "dec.", c.worddec_layers, x, blocks), std::move(offsets)};
}

/// Teacher-forced hierarchical pass over a segmented batch.
struct HierTargets {
  std::vector<TokenId> targets;            // one per scored decoder row
  std::vector<std::size_t> word_first;     // per (sequence, word): index of its first target
  std::vector<std::size_t> word_len;       // per (sequence, word): base tokens, EOW excluded
};

template <class T>
struct HierPass {
  nn::Var logits;  // [targets x V]
  HierTargets targets;
};

template <class T>
HierPass<T> hier_pass(nn::Tape<T>& t, Model<T>& m, const SegmentedBatch& b) {
  const auto& c = m.config;
  if (!c.hierarchical) throw ConfigError("hierarchical pass on a flat model");
  if (b.n_cls != c.n_cls || b.width != c.encoder_width()) throw ConfigError("segmented batch does not match model");
  std::vector<std::span<const TokenId>> enc_words;
  std::vector<std::span<const TokenId>> all_words;
  std::vector<std::size_t> groups;
  for (std::size_t s = 0; s < b.batch; ++s) {
    const std::size_t n = b.word_count[s];
    if (n == 0) throw DataError("segmented batch: empty sequence");
    for (std::size_t w = 0; w < n; ++w) {
      all_words.push_back(b.tokens(s, w));
      if (w + 1 < n) enc_words.push_back(b.tokens(s, w));
    }
    groups.push_back(n);
  }
  std::optional<nn::Var> cls;
  if (!enc_words.empty()) cls = encode_word_rows(t, m, enc_words);
  nn::Var pred = word_lm_rows(t, m, cls, groups);
  auto [hidden, offsets] = decode_word_rows(t, m, pred, all_words);
  HierPass<T> out;
  std::vector<std::size_t> rows;
  for (std::size_t w = 0; w < all_words.size(); ++w) {
    const std::size_t len = all_words[w].size();
    out.targets.word_first.push_back(out.targets.targets.size());
    out.targets.word_len.push_back(len);
    for (std::size_t j = 0; j <= len; ++j) {
      rows.push_back(offsets[w] + c.n_cls - 1 + j);
      out.targets.targets.push_back(j < len ? all_words[w][j] : special::kEow);
    }
  }
  out.logits = t.matmul(t.gather_rows(hidden, std::move(rows)), t.param(m.param("dec.head")));
  return out;
}

template <class T>
nn::Var hier_loss(nn::Tape<T>& t, Model<T>& m, const SegmentedBatch& b) {
  auto pass = hier_pass(t, m, b);
  return t.cross_entropy(pass.logits, pass.targets.targets, special::kPad);
}

/// Step 1 as a tensor [batch x max_words x n_cls x D]; slots past word_count are zero.
template <class T>
nn::Tensor<T> encode_words(Model<T>& m, const SegmentedBatch& b) {
  const auto& c = m.config;
  nn::Tensor<T> out({b.batch, b.max_words, c.n_cls, c.dim});
  std::vector<std::span<const TokenId>> words;
  for (std::size_t s = 0; s < b.batch; ++s) {
    for (std::size_t w = 0; w < b.word_count[s]; ++w) words.push_back(b.tokens(s, w));
  }
  if (words.empty()) return out;
  nn::Tape<T> t(false);
  const auto v = t.value(encode_word_rows(t, m, words));
  std::size_t k = 0;
  const std::size_t stride = c.n_cls * c.dim;
  for (std::size_t s = 0; s < b.batch; ++s) {
    for (std::size_t w = 0; w < b.word_count[s]; ++w, ++k) {
      std::copy_n(v.data() + k * stride, stride, out.data.data() + (s * b.max_words + w) * stride);
    }
  }
  return out;
}

/// Step 2 over one sequence of CLS groups [words x n_cls x D] (start group
/// prepended internally). Returns predictions [(words + 1) x n_cls x D].
template <class T>
nn::Tensor<T> word_lm_step(Model<T>& m, const nn::Tensor<T>& word_reps) {
  const auto& c = m.config;
  const std::size_t words = word_reps.size() / (c.n_cls * c.dim);
  nn::Tape<T> t(false);
  std::optional<nn::Var> cls;
  if (words > 0) cls = t.input(words * c.n_cls, c.dim, word_reps.data);
  const std::size_t groups[1] = {words + 1};
  const auto v = t.value(word_lm_rows(t, m, cls, groups));
  return nn::Tensor<T>({words + 1, c.n_cls, c.dim}, std::vector<T>(v.begin(), v.end()));
}

/// Step 3 for one word: next-token logits [V] after `prefix`.
template <class T>
std::vector<T> decode_word(Model<T>& m, const nn::Tensor<T>& cls_pred, std::span<const TokenId> prefix) {
  const auto& c = m.config;
  if (prefix.size() >= c.max_word_len + 1) throw ConfigError("decode_word: prefix too long");
  nn::Tape<T> t(false);
  nn::Var pred = t.input(c.n_cls, c.dim, cls_pred.data);
  const std::span<const TokenId> one[1] = {prefix};
  auto [hidden, offsets] = decode_word_rows(t, m, pred, one);
  nn::Var row = t.gather_rows(hidden, {offsets[0] + c.n_cls - 1 + prefix.size()});
  const auto v = t.value(t.matmul(row, t.param(m.param("dec.head"))));
  return {v.begin(), v.end()};
}

}  // namespace wordpool
