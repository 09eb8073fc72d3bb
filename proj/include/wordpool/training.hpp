#pragma once

// Teacher-forced training: deterministic batching, AdamW steps, periodic
// evaluation, checkpoints and resume.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpool/checkpoint.hpp"
#include "wordpool/corpus.hpp"
#include "wordpool/evaluation.hpp"
#include "wordpool/model.hpp"
#include "wordpool/optim.hpp"

namespace wordpool {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 2;
  std::size_t block_chars = 192;
  std::size_t epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;   // epochs between evaluations and checkpoints
  double grad_clip = 0.0;       // 0 disables
  bool random_phase = true;     // random block offset per epoch
  std::size_t max_steps = 0;    // 0 = no limit
  std::size_t eval_max_words = 0;

  void validate() const {
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (block_chars < 2) throw ConfigError("block_chars must be >= 2");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must be in [0, 1)");
    if (weight_decay < 0 || grad_clip < 0) throw ConfigError("weight_decay and grad_clip must be >= 0");
  }

  AdamWConfig optimizer() const { return {lr, beta1, beta2, 1e-8, weight_decay, grad_clip}; }

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"batch_size", batch_size},
            {"block_chars", block_chars},
            {"epochs", epochs},
            {"beta1", beta1},
            {"beta2", beta2},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"eval_every", eval_every},
            {"grad_clip", grad_clip},
            {"random_phase", random_phase},
            {"max_steps", max_steps},
            {"eval_max_words", eval_max_words}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.block_chars = j.value("block_chars", c.block_chars);
    c.epochs = j.value("epochs", c.epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.random_phase = j.value("random_phase", c.random_phase);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_max_words = j.value("eval_max_words", c.eval_max_words);
    return c;
  }
};

/// Tokenized training split. Flat models read `stream`, hierarchical models
/// read `words`.
struct TrainData {
  bool hierarchical = false;
  std::size_t budget = 0;  // tokens per flat block or characters per sequence
  std::vector<TokenId> stream;
  std::vector<WordTokens> words;
};

inline TrainData prepare_data(const std::vector<Document>& docs, const Tokenizer& tok, const ModelConfig& mc) {
  TrainData d;
  d.hierarchical = mc.hierarchical;
  if (mc.hierarchical) {
    d.budget = mc.block_chars;
    for (const auto& doc : docs) {
      auto w = word_tokens(tok, segment_words(clean_text(doc.text)).words, mc.max_word_len);
      d.words.insert(d.words.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    std::size_t chars = 0;
    for (const auto& w : d.words) chars += w.size() + 1;
    if (chars < d.budget) throw DataError("training corpus is shorter than one block");
  } else {
    d.budget = mc.context;
    d.stream.push_back(tok.boundary_id().value_or(special::kBos));
    for (const auto& doc : docs) {
      const auto ids = tok.encode_stream(segment_words(clean_text(doc.text)).words);
      d.stream.insert(d.stream.end(), ids.begin(), ids.end());
    }
    if (d.stream.size() < d.budget + 1) throw DataError("training corpus is shorter than one block");
  }
  return d;
}

struct Batch {
  // flat: `rows` holds batch * (len + 1) ids
  std::vector<TokenId> rows;
  std::size_t batch = 0;
  std::size_t len = 0;
  // hierarchical
  std::vector<std::vector<WordTokens>> seqs;
};

/// All sequences of one epoch in their shuffled order, grouped into batches.
/// A pure function of the data, the config and `rng`'s state on entry.
inline std::vector<Batch> make_batches(const TrainData& d, const TrainConfig& cfg, std::mt19937_64& rng,
                                       std::size_t max_words = 0) {
  std::vector<Batch> out;
  if (!d.hierarchical) {
    const std::size_t b = d.budget;
    if (d.stream.size() < b + 1) throw DataError("training corpus is shorter than one block");
    const std::size_t phase = cfg.random_phase ? static_cast<std::size_t>(rng() % b) : 0;
    std::size_t count = (d.stream.size() - 1 - std::min(phase, d.stream.size() - 1)) / b;
    const std::size_t start = count ? phase : 0;
    if (!count) count = 1;
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < count; i += cfg.batch_size) {
      Batch bt;
      bt.len = b;
      for (std::size_t k = i; k < std::min(count, i + cfg.batch_size); ++k) {
        const auto first = d.stream.begin() + static_cast<std::ptrdiff_t>(start + order[k] * b);
        bt.rows.insert(bt.rows.end(), first, first + static_cast<std::ptrdiff_t>(b + 1));
        ++bt.batch;
      }
      out.push_back(std::move(bt));
    }
    return out;
  }
  // Greedy packing of whole words; the trailing incomplete sequence is dropped.
  std::size_t skip = 0;
  if (cfg.random_phase) {
    std::size_t chars = 0, n = 0;
    while (n < d.words.size() && chars + d.words[n].size() + 1 <= d.budget) chars += d.words[n++].size() + 1;
    skip = static_cast<std::size_t>(rng() % std::max<std::size_t>(1, n));
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t begin = skip, chars = 0;
  for (std::size_t i = skip; i < d.words.size(); ++i) {
    const std::size_t need = d.words[i].size() + 1;
    if (chars + need > d.budget || (max_words && i - begin >= max_words)) {
      spans.emplace_back(begin, i);
      begin = i;
      chars = 0;
    }
    chars += need;
  }
  if (spans.empty()) spans.emplace_back(skip, d.words.size());
  std::shuffle(spans.begin(), spans.end(), rng);
  for (std::size_t i = 0; i < spans.size(); i += cfg.batch_size) {
    Batch bt;
    for (std::size_t k = i; k < std::min(spans.size(), i + cfg.batch_size); ++k) {
      bt.seqs.emplace_back(d.words.begin() + static_cast<std::ptrdiff_t>(spans[k].first),
                           d.words.begin() + static_cast<std::ptrdiff_t>(spans[k].second));
    }
    bt.batch = bt.seqs.size();
    out.push_back(std::move(bt));
  }
  return out;
}

/// Loss of one batch on a recording tape.
template <class T>
nn::Var batch_loss(nn::Tape<T>& tape, Model<T>& m, const Batch& b) {
  if (m.config.hierarchical) {
    if (b.seqs.empty()) throw ConfigError("hierarchical model given a flat batch");
    return hier_loss(tape, m, make_segmented_batch(b.seqs, m.config));
  }
  if (b.rows.empty()) throw ConfigError("flat model given a hierarchical batch");
  return flat_loss(tape, m, b.rows, b.batch, b.len);
}

/// One forward, backward and AdamW update. Returns the batch loss.
template <class T>
double train_step(Model<T>& m, AdamW<T>& opt, const Batch& b) {
  m.params.zero_grad();
  nn::Tape<T> tape;
  const auto loss = batch_loss(tape, m, b);
  const double value = static_cast<double>(tape.scalar(loss));
  if (!std::isfinite(value)) throw NonFiniteError("training loss is not finite");
  tape.backward(loss);
  opt.step(m.params);
  return value;
}

struct MetricsLine {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_word_acc;
  std::optional<double> val_char_acc;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
    return {{"epoch", epoch},
            {"step", step},
            {"train_loss", train_loss},
            {"val_word_acc", opt(val_word_acc)},
            {"val_char_acc", opt(val_char_acc)}};
  }
};

struct TrainResult {
  std::vector<MetricsLine> log;
  std::size_t steps = 0;
  double last_loss = 0.0;
};

struct TrainOptions {
  std::filesystem::path run_dir;         // empty: no files written
  std::optional<Checkpoint> resume;
  nlohmann::json experiment = nlohmann::json::object();
  const Tokenizer* tokenizer = nullptr;  // needed for validation metrics and checkpoints
  const std::vector<Document>* valid = nullptr;
  std::function<void(const MetricsLine&)> on_eval;
};

namespace detail {

inline std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline std::mt19937_64 rng_from_text(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream s(text);
  s >> rng;
  if (!s) throw DataError("checkpoint: bad rng state");
  return rng;
}

}  // namespace detail

/// Runs (or resumes) training. Evaluates, logs and checkpoints every
/// `eval_every` epochs and at the end.
inline TrainResult train(Model<float>& m, const TrainData& data, const TrainConfig& cfg, TrainOptions opts = {}) {
  cfg.validate();
  AdamW<float> opt(m.params, cfg.optimizer());
  std::mt19937_64 rng(cfg.seed);
  std::size_t epoch = 0, step = 0, epoch_step = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  if (opts.resume) {
    const auto& ck = *opts.resume;
    if (!(ck.config == m.config)) throw ConfigError("resume: checkpoint config does not match model");
    m = restore_model(ck);
    opt = AdamW<float>(m.params, cfg.optimizer());
    restore_optimizer(ck, opt);
    rng = detail::rng_from_text(ck.rng_state);
    epoch = ck.epoch;
    step = ck.step;
    epoch_step = ck.epoch_step;
    loss_sum = ck.loss_sum;
    loss_count = ck.loss_count;
  }
  TrainResult result;
  result.steps = step;
  const std::filesystem::path ckpt_dir = opts.run_dir.empty() ? std::filesystem::path() : opts.run_dir / "checkpoints";
  const std::filesystem::path log_path = opts.run_dir.empty() ? std::filesystem::path() : opts.run_dir / "metrics.jsonl";
  if (!opts.run_dir.empty()) std::filesystem::create_directories(ckpt_dir);

  auto snapshot = [&](const std::string& rng_state, std::size_t ep, std::size_t ep_step) {
    Checkpoint ck = make_checkpoint(m);
    attach_optimizer(ck, opt);
    ck.epoch = ep;
    ck.step = step;
    ck.epoch_step = ep_step;
    ck.rng_state = rng_state;
    ck.loss_sum = loss_sum;
    ck.loss_count = loss_count;
    ck.experiment = opts.experiment;
    if (opts.tokenizer) ck.tokenizer = opts.tokenizer->to_json();
    return ck;
  };

  bool stopped = false;
  while (epoch < cfg.epochs && !stopped) {
    const std::string epoch_rng = detail::rng_text(rng);
    const auto batches = make_batches(data, cfg, rng, m.config.hierarchical ? m.config.max_words() : 0);
    for (std::size_t i = epoch_step; i < batches.size(); ++i) {
      const double l = train_step(m, opt, batches[i]);
      loss_sum += l;
      ++loss_count;
      ++step;
      result.last_loss = l;
      if (cfg.max_steps && step >= cfg.max_steps) {
        epoch_step = i + 1;
        stopped = epoch_step < batches.size();
        break;
      }
    }
    if (stopped) {
      if (!opts.run_dir.empty()) save_checkpoint(snapshot(epoch_rng, epoch, epoch_step), ckpt_dir / "last.ckpt");
      break;
    }
    epoch_step = 0;
    ++epoch;
    const bool last = epoch == cfg.epochs || (cfg.max_steps && step >= cfg.max_steps);
    if (epoch % cfg.eval_every == 0 || last) {
      MetricsLine line;
      line.epoch = epoch;
      line.step = step;
      line.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
      if (opts.valid && opts.tokenizer && !opts.valid->empty()) {
        const auto ev = evaluate_words(m, *opts.tokenizer, *opts.valid, cfg.eval_max_words);
        line.val_word_acc = ev.word_acc();
        line.val_char_acc = ev.char_acc();
      }
      loss_sum = 0.0;
      loss_count = 0;
      result.log.push_back(line);
      if (opts.on_eval) opts.on_eval(line);
      if (!opts.run_dir.empty()) {
        std::ofstream out(log_path, std::ios::app);
        out << line.to_json().dump() << "\n";
        if (!out) throw std::runtime_error("cannot append to " + log_path.string());
        const auto ck = snapshot(detail::rng_text(rng), epoch, 0);
        save_checkpoint(ck, ckpt_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
        save_checkpoint(ck, ckpt_dir / "last.ckpt");
      }
    }
    if (last) break;
  }
  result.steps = step;
  return result;
}

}  // namespace wordpool
