#pragma once

// Experiment plumbing shared by the CLI and the acceptance suite: a flat JSON
// config with presets, the run directory layout, and the train/evaluate
// pipeline over one corpus file.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <json.hpp>

#include "wordpool/checkpoint.hpp"
#include "wordpool/corpus.hpp"
#include "wordpool/evaluation.hpp"
#include "wordpool/training.hpp"

namespace wordpool {

struct ExperimentConfig {
  std::string corpus;
  double valid_ratio = 0.1;
  Scheme scheme = Scheme::kChar;
  bool hierarchical = false;
  std::string preset = "desk";
  std::size_t layers = 4;
  std::size_t dim = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 1;
  std::size_t worddec_layers = 1;
  std::size_t n_cls = 4;
  std::size_t max_word_len = 24;
  std::size_t bpe_vocab = 1024;
  bool packed = false;
  TrainConfig train{.epochs = 5};
  std::string output;    // run directory, relative paths resolve under the output root
  std::string numeracy;  // optional JSONL of {context, gold}
  std::size_t numeracy_limit = 200;

  void validate() const {
    if (corpus.empty()) throw ConfigError("config: corpus is required");
    if (!(valid_ratio > 0 && valid_ratio < 1)) throw ConfigError("config: valid_ratio must be in (0, 1)");
    train.validate();
    model_config(special::kCount + 1).validate();
  }

  /// T is shared: characters per hierarchical sequence and per flat block.
  ModelConfig model_config(std::size_t vocab_size, std::size_t flat_context = 0) const {
    ModelConfig m;
    m.scheme = scheme;
    m.hierarchical = hierarchical;
    m.layers = layers;
    m.dim = dim;
    m.heads = heads;
    m.encoder_layers = encoder_layers;
    m.worddec_layers = worddec_layers;
    m.n_cls = n_cls;
    m.max_word_len = max_word_len;
    m.block_chars = train.block_chars;
    m.vocab_size = vocab_size;
    m.context = flat_context ? flat_context : train.block_chars;
    m.packed = packed;
    return m;
  }

  nlohmann::json to_json() const {
    auto j = train.to_json();
    j["T"] = j["block_chars"];
    j.erase("block_chars");
    j.update({{"corpus", corpus},
              {"valid_ratio", valid_ratio},
              {"tokenizer", to_string(scheme)},
              {"hierarchical", hierarchical},
              {"preset", preset},
              {"layers", layers},
              {"dim", dim},
              {"heads", heads},
              {"encoder_layers", encoder_layers},
              {"worddec_layers", worddec_layers},
              {"n_cls", n_cls},
              {"max_word_len", max_word_len},
              {"bpe_vocab", bpe_vocab},
              {"packed", packed},
              {"output", output},
              {"numeracy", numeracy},
              {"numeracy_limit", numeracy_limit}});
    return j;
  }
};

/// Preset values as a flat JSON object.
inline nlohmann::json preset_json(std::string_view name) {
  if (name == "desk") {
    return {{"layers", 4}, {"dim", 128}, {"heads", 4}, {"encoder_layers", 1}, {"worddec_layers", 1},
            {"n_cls", 4},  {"T", 192},   {"lr", 1e-4}, {"batch_size", 2},     {"epochs", 5},
            {"packed", true}};
  }
  if (name == "paper") {
    return {{"layers", 8}, {"dim", 512}, {"heads", 8}, {"encoder_layers", 2}, {"worddec_layers", 2},
            {"n_cls", 4},  {"T", 192},   {"lr", 1e-4}, {"batch_size", 2},     {"epochs", 100}};
  }
  throw ConfigError("unknown preset: " + std::string(name) + " (desk, paper)");
}

namespace detail {

template <class V>
V config_value(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for " + key + ": " + v.dump());
  }
}

}  // namespace detail

/// Overwrites the fields named in `j`. Unknown keys are rejected.
inline void apply_config(ExperimentConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a flat JSON object");
  using detail::config_value;
  using sz = std::size_t;
  for (const auto& [k, v] : j.items()) {
    if (k == "corpus") c.corpus = config_value<std::string>(v, k);
    else if (k == "valid_ratio") c.valid_ratio = config_value<double>(v, k);
    else if (k == "tokenizer") c.scheme = parse_scheme(config_value<std::string>(v, k));
    else if (k == "hierarchical") c.hierarchical = config_value<bool>(v, k);
    else if (k == "preset") c.preset = config_value<std::string>(v, k);
    else if (k == "layers") c.layers = config_value<sz>(v, k);
    else if (k == "dim") c.dim = config_value<sz>(v, k);
    else if (k == "heads") c.heads = config_value<sz>(v, k);
    else if (k == "encoder_layers") c.encoder_layers = config_value<sz>(v, k);
    else if (k == "worddec_layers") c.worddec_layers = config_value<sz>(v, k);
    else if (k == "n_cls") c.n_cls = config_value<sz>(v, k);
    else if (k == "max_word_len") c.max_word_len = config_value<sz>(v, k);
    else if (k == "bpe_vocab") c.bpe_vocab = config_value<sz>(v, k);
    else if (k == "packed") c.packed = config_value<bool>(v, k);
    else if (k == "output") c.output = config_value<std::string>(v, k);
    else if (k == "numeracy") c.numeracy = config_value<std::string>(v, k);
    else if (k == "numeracy_limit") c.numeracy_limit = config_value<sz>(v, k);
    else if (k == "T") c.train.block_chars = config_value<sz>(v, k);
    else if (k == "lr") c.train.lr = config_value<double>(v, k);
    else if (k == "batch_size") c.train.batch_size = config_value<sz>(v, k);
    else if (k == "epochs") c.train.epochs = config_value<sz>(v, k);
    else if (k == "beta1") c.train.beta1 = config_value<double>(v, k);
    else if (k == "beta2") c.train.beta2 = config_value<double>(v, k);
    else if (k == "weight_decay") c.train.weight_decay = config_value<double>(v, k);
    else if (k == "seed") c.train.seed = config_value<std::uint64_t>(v, k);
    else if (k == "eval_every") c.train.eval_every = config_value<sz>(v, k);
    else if (k == "grad_clip") c.train.grad_clip = config_value<double>(v, k);
    else if (k == "random_phase") c.train.random_phase = config_value<bool>(v, k);
    else if (k == "max_steps") c.train.max_steps = config_value<sz>(v, k);
    else if (k == "eval_max_words") c.train.eval_max_words = config_value<sz>(v, k);
    else throw ConfigError("config: unknown key " + k);
  }
}

/// Precedence: flags > file > preset > built-in defaults.
inline ExperimentConfig resolve_config(const nlohmann::json& file, const nlohmann::json& flags) {
  std::string preset = "desk";
  for (const auto* src : {&file, &flags}) {
    if (src->is_object() && src->contains("preset")) preset = detail::config_value<std::string>(src->at("preset"), "preset");
  }
  ExperimentConfig c;
  apply_config(c, preset_json(preset));
  c.preset = preset;
  if (!file.is_null()) apply_config(c, file);
  if (!flags.is_null()) apply_config(c, flags);
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Display name: char, byte, subword, word, or eChar / eByte for the hierarchical models.
inline std::string model_label(Scheme s, bool hierarchical) {
  if (!hierarchical) return to_string(s);
  return s == Scheme::kByte ? "eByte" : "eChar";
}

// --- run directory -------------------------------------------------------------------------

inline std::filesystem::path output_root() {
  const char* env = std::getenv("WORDPOOL_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

inline std::filesystem::path resolve_run_dir(const ExperimentConfig& c) {
  std::filesystem::path p = c.output;
  if (p.empty()) {
    p = model_label(c.scheme, c.hierarchical) + "_" + c.preset + "_s" + std::to_string(c.train.seed);
  }
  return p.is_absolute() ? p : output_root() / p;
}

/// Creates `dir` holding config.json. The directory appears fully formed or
/// not at all; an existing directory is an error.
inline void create_run_dir(const std::filesystem::path& dir, const nlohmann::json& config) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) throw ConfigError("run directory already exists: " + dir.string());
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "checkpoints");
  {
    std::ofstream out(tmp / "config.json");
    out << config.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + (tmp / "config.json").string());
  }
  fs::rename(tmp, dir);
}

// --- pipeline --------------------------------------------------------------------------------

struct PreparedData {
  Split split;
  Tokenizer tokenizer;
  ModelConfig model;
  FrequencyStrata strata;
};

inline std::vector<Document> load_corpus(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("corpus not found: " + path);
  return load_documents(path);
}

/// Split, tokenizer and model shape for `c`. Flat contexts carry T characters
/// of the training split in tokens of the scheme.
inline PreparedData prepare_experiment(const ExperimentConfig& c) {
  c.validate();
  PreparedData p;
  p.split = split_documents(load_corpus(c.corpus), c.train.seed, c.valid_ratio);
  p.tokenizer = Tokenizer::build(c.scheme, p.split.train, c.bpe_vocab);
  std::size_t ctx = c.train.block_chars;
  if (!c.hierarchical) {
    ctx = context_budget(c.scheme, measure_budget_inputs(p.tokenizer, corpus_words(p.split.train)), c.train.block_chars);
  }
  p.model = c.model_config(p.tokenizer.vocab_size(), ctx);
  p.model.validate();
  p.strata = stratify_by_frequency(compute_stats(p.split.train).word_freq, 10, 45);
  return p;
}

struct EvalRequest {
  bool words = true;
  bool chars = true;
  bool rare = true;
  bool numbers = true;
  std::size_t max_words = 0;
  std::string numeracy;  // JSONL path; empty extracts examples from the evaluation documents
  std::size_t numeracy_limit = 200;
};

inline EvalReport evaluate_model(Model<float>& m, const Tokenizer& tok, const std::vector<Document>& docs,
                                 const FrequencyStrata* strata, const EvalRequest& req) {
  EvalReport r;
  r.model = model_label(m.config.scheme, m.config.hierarchical);
  if (req.words || req.chars || req.rare) {
    const auto ev = evaluate_words(m, tok, docs, req.max_words);
    r.words = ev.records.size();
    if (req.words) r.word_acc = ev.word_acc();
    if (req.chars) r.char_acc = ev.char_acc();
    if (req.rare && strata) r.strata = stratified_accuracy(ev.records, *strata);
  }
  if (req.numbers) {
    auto ex = req.numeracy.empty() ? extract_numeracy_examples(docs, 192, req.numeracy_limit)
                                   : load_numeracy_jsonl(req.numeracy);
    if (req.numeracy_limit && ex.size() > req.numeracy_limit) ex.resize(req.numeracy_limit);
    r.numbers = number_estimation(m, tok, ex);
  }
  return r;
}

struct ExperimentResult {
  std::filesystem::path run_dir;
  TrainResult train;
  EvalReport report;
};

namespace detail {

inline void write_report(ExperimentResult& res, Model<float>& m, const PreparedData& p, const ExperimentConfig& c) {
  EvalRequest req;
  req.max_words = c.train.eval_max_words;
  req.numeracy = c.numeracy;
  req.numeracy_limit = c.numeracy_limit;
  res.report = evaluate_model(m, p.tokenizer, p.split.valid, &p.strata, req);
  std::ofstream out(res.run_dir / "report.json");
  out << res.report.to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write report.json");
}

inline TrainOptions train_options(const std::filesystem::path& dir, const nlohmann::json& config,
                                  const PreparedData& p, std::ostream* log) {
  TrainOptions opts;
  opts.run_dir = dir;
  // Where a run lives is not part of what it is: identical runs in two
  // directories write identical checkpoints.
  opts.experiment = config;
  opts.experiment.erase("output");
  opts.tokenizer = &p.tokenizer;
  opts.valid = &p.split.valid;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_eval = [log, t0](const MetricsLine& l) {
    if (!log) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    *log << l.to_json().dump() << " (" << static_cast<long>(secs) << " s)" << std::endl;
  };
  return opts;
}

}  // namespace detail

/// Trains from scratch into a fresh run directory, then writes report.json
/// for the validation split.
inline ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* log = nullptr) {
  auto p = prepare_experiment(c);
  ExperimentResult res;
  res.run_dir = resolve_run_dir(c);
  const auto config = c.to_json();
  create_run_dir(res.run_dir, config);
  Model<float> m(p.model, c.train.seed);
  const auto data = prepare_data(p.split.train, p.tokenizer, p.model);
  if (log) {
    *log << model_label(c.scheme, c.hierarchical) << ": " << count_params(p.model) << " parameters, "
         << p.split.train.size() << " train / " << p.split.valid.size() << " valid documents, run dir "
         << res.run_dir.string() << std::endl;
  }
  res.train = train(m, data, c.train, detail::train_options(res.run_dir, config, p, log));
  detail::write_report(res, m, p, c);
  return res;
}


/// A checkpoint file, or a run directory (its checkpoints/last.ckpt).
inline Checkpoint load_checkpoint_arg(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path file = fs::is_directory(path) ? path / "checkpoints" / "last.ckpt" : path;
  if (!fs::is_regular_file(file)) throw ConfigError("checkpoint not found: " + file.string());
  return load_checkpoint(file);
}

/// Continues the run in `dir` from checkpoints/last.ckpt. `overrides` may
/// change training-length keys only (epochs, max_steps, eval_every, eval_max_words).
inline ExperimentResult resume_experiment(const std::filesystem::path& dir, const nlohmann::json& overrides,
                                          std::ostream* log = nullptr) {
  static const std::set<std::string> allowed{"epochs", "max_steps", "eval_every", "eval_max_words"};
  nlohmann::json config = read_json_file(dir / "config.json");
  if (overrides.is_object()) {
    for (const auto& [k, v] : overrides.items()) {
      if (!allowed.contains(k)) throw ConfigError("resume: " + k + " cannot change on resume");
      config[k] = v;
    }
  }
  ExperimentConfig c;
  apply_config(c, config);
  auto p = prepare_experiment(c);
  auto ck = load_checkpoint_arg(dir);
  if (!(ck.config == p.model)) throw ConfigError("resume: checkpoint does not match " + (dir / "config.json").string());
  ExperimentResult res;
  res.run_dir = dir;
  {
    std::ofstream out(dir / "config.json");
    out << config.dump(2) << "\n";
  }
  Model<float> m(p.model, c.train.seed);
  const auto data = prepare_data(p.split.train, p.tokenizer, p.model);
  auto opts = detail::train_options(dir, config, p, log);
  opts.resume = std::move(ck);
  res.train = train(m, data, c.train, opts);
  detail::write_report(res, m, p, c);
  return res;
}

}  // namespace wordpool
