// wordpool command-line entry point: train, evaluate, generate, analyze, tokenize.
// Exit codes: 0 success, 1 runtime error, 2 usage or config error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wordpool/cost_model.hpp"
#include "wordpool/experiment.hpp"
#include "wordpool/generation.hpp"

using namespace wordpool;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Flag values that override the config file. Only flags actually given land here.
struct FlagSet {
  std::map<std::string, std::string> strings;
  std::map<std::string, double> reals;
  std::map<std::string, std::uint64_t> counts;
  std::map<std::string, bool> bools;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void text(CLI::App& app, const std::string& key, const std::string& help) {
    options.emplace_back(key, app.add_option("--" + key, strings[key], help));
  }
  void real(CLI::App& app, const std::string& key, const std::string& help) {
    options.emplace_back(key, app.add_option("--" + key, reals[key], help));
  }
  void count(CLI::App& app, const std::string& key, const std::string& help) {
    options.emplace_back(key, app.add_option("--" + key, counts[key], help));
  }
  void flag(CLI::App& app, const std::string& key, const std::string& help) {
    options.emplace_back(key, app.add_option("--" + key, bools[key], help)->expected(0, 1)->default_str("true"));
  }

  json given() const {
    json j = json::object();
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      if (strings.contains(key)) j[key] = strings.at(key);
      else if (reals.contains(key)) j[key] = reals.at(key);
      else if (counts.contains(key)) j[key] = counts.at(key);
      else j[key] = bools.at(key);
    }
    return j;
  }
};

Tokenizer checkpoint_tokenizer(const Checkpoint& ck) {
  if (ck.tokenizer.is_null() || ck.tokenizer.empty()) throw DataError("checkpoint carries no tokenizer");
  return Tokenizer::from_json(ck.tokenizer);
}

void check_scheme(const std::string& flag, const Checkpoint& ck) {
  if (!flag.empty() && parse_scheme(flag) != ck.config.scheme) {
    throw ConfigError("--tokenizer " + flag + " does not match the checkpoint scheme " + to_string(ck.config.scheme));
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-pooled character language models: training, evaluation, generation and cost analysis"};
  app.require_subcommand(1);

  // train ---------------------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model from scratch into a new run directory");
  std::string config_path, resume_dir;
  train_cmd->add_option("--config", config_path, "flat JSON config; flags override it");
  train_cmd->add_option("--resume", resume_dir, "continue the run in this directory from checkpoints/last.ckpt");
  FlagSet tf;
  tf.text(*train_cmd, "corpus", "corpus text file, documents separated by blank lines");
  tf.text(*train_cmd, "tokenizer", "byte | char | subword | word");
  tf.flag(*train_cmd, "hierarchical", "word-pooled model over byte or char units");
  tf.text(*train_cmd, "preset", "desk | paper");
  tf.count(*train_cmd, "layers", "core decoder layers");
  tf.count(*train_cmd, "dim", "model width");
  tf.count(*train_cmd, "heads", "attention heads");
  tf.count(*train_cmd, "encoder_layers", "word encoder layers");
  tf.count(*train_cmd, "worddec_layers", "per-word decoder layers");
  tf.count(*train_cmd, "n_cls", "CLS tokens per word");
  tf.count(*train_cmd, "max_word_len", "longest word in base units; longer words are split");
  tf.count(*train_cmd, "bpe_vocab", "subword vocabulary size");
  tf.flag(*train_cmd, "packed", "padless hierarchical layout");
  tf.count(*train_cmd, "T", "characters of context");
  tf.real(*train_cmd, "lr", "learning rate");
  tf.count(*train_cmd, "batch_size", "sequences per step");
  tf.count(*train_cmd, "epochs", "passes over the training split");
  tf.real(*train_cmd, "beta1", "AdamW beta1");
  tf.real(*train_cmd, "beta2", "AdamW beta2");
  tf.real(*train_cmd, "weight_decay", "decoupled weight decay");
  tf.count(*train_cmd, "seed", "seed for init, split and batching");
  tf.count(*train_cmd, "eval_every", "epochs between evaluations and checkpoints");
  tf.real(*train_cmd, "grad_clip", "global norm clip, 0 disables");
  tf.flag(*train_cmd, "random_phase", "random block offset per epoch");
  tf.count(*train_cmd, "max_steps", "stop after this many optimizer steps, 0 for no limit");
  tf.count(*train_cmd, "eval_max_words", "cap on validation words per evaluation, 0 for all");
  tf.real(*train_cmd, "valid_ratio", "share of documents held out");
  tf.text(*train_cmd, "output", "run directory (relative paths go under $WORDPOOL_OUTPUT_ROOT, default runs/)");
  tf.text(*train_cmd, "numeracy", "JSONL of {context, gold} number examples for the final report");
  tf.count(*train_cmd, "numeracy_limit", "number examples in the final report");

  // evaluate --------------------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "next-word metrics of a checkpoint");
  std::string eval_ckpt, eval_scheme, eval_metrics = "word,char,rare,num", eval_corpus, eval_numeracy, eval_report;
  std::size_t eval_max_words = 0, eval_num_limit = 200;
  bool eval_json = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file or run directory")->required();
  eval_cmd->add_option("--tokenizer", eval_scheme, "expected scheme; a mismatch is an error");
  eval_cmd->add_option("--metrics", eval_metrics, "comma list of word, char, rare, num");
  eval_cmd->add_option("--corpus", eval_corpus, "evaluate every document of this file instead of the validation split");
  eval_cmd->add_option("--numeracy", eval_numeracy, "JSONL of {context, gold}; default extracts from the documents");
  eval_cmd->add_option("--numeracy-limit", eval_num_limit, "number examples to score");
  eval_cmd->add_option("--max-words", eval_max_words, "cap on scored words, 0 for all");
  eval_cmd->add_option("--report", eval_report, "also write the JSON report here");
  eval_cmd->add_flag("--json", eval_json, "print JSON instead of the table");

  // generate --------------------------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("generate", "greedy continuation of a prompt");
  std::string gen_ckpt, gen_prompt, gen_audit;
  std::size_t gen_words = 20;
  bool gen_pipelined = false;
  gen_cmd->add_option("--checkpoint", gen_ckpt, "checkpoint file or run directory")->required();
  gen_cmd->add_option("--prompt", gen_prompt, "text to continue");
  gen_cmd->add_option("--max-words", gen_words, "words to generate");
  gen_cmd->add_flag("--pipelined", gen_pipelined, "run the word predictor and word decoder on separate threads");
  gen_cmd->add_option("--audit", gen_audit, "write pass and step counts as JSON to this file (- for stderr)");

  // analyze ---------------------------------------------------------------------------------
  auto* an_cmd = app.add_subcommand("analyze", "closed-form training and generation cost tables");
  std::string an_preset = "en";
  CostModelParams an_p;
  std::optional<double> an_c, an_s;
  std::size_t an_ncls = 4;
  bool an_json = false;
  std::vector<std::string> an_audits;
  an_cmd->add_option("--preset", an_preset, "language preset for c: en, fr, ru");
  an_cmd->add_option("--T", an_p.context, "context in characters");
  an_cmd->add_option("--layers", an_p.layers, "layers L");
  an_cmd->add_option("--dim", an_p.dim, "width D");
  an_cmd->add_option("--memory", an_p.memory, "activation budget M, in entries");
  an_cmd->add_option("--corpus-chars", an_p.corpus, "corpus size N in characters");
  an_cmd->add_option("--c", an_c, "characters per word, overrides the preset");
  an_cmd->add_option("--s", an_s, "characters per subword");
  an_cmd->add_option("--latency", an_p.latency, "latency t of one full-depth pass");
  an_cmd->add_option("--n-cls", an_ncls, "CLS tokens per word for the density figures");
  an_cmd->add_option("--audit", an_audits, "audit JSON files from generate, reconciled against the model");
  an_cmd->add_flag("--json", an_json, "print JSON instead of the table");

  // tokenize --------------------------------------------------------------------------------
  auto* tok_cmd = app.add_subcommand("tokenize", "token ids of a text");
  std::string tok_scheme, tok_text, tok_corpus, tok_ckpt;
  std::size_t tok_bpe = 1024;
  bool tok_strings = false;
  tok_cmd->add_option("text", tok_text, "text to tokenize")->required();
  tok_cmd->add_option("--tokenizer", tok_scheme, "byte | char | subword | word");
  tok_cmd->add_option("--corpus", tok_corpus, "build the vocabulary from this corpus");
  tok_cmd->add_option("--checkpoint", tok_ckpt, "use the tokenizer stored in this checkpoint");
  tok_cmd->add_option("--bpe-vocab", tok_bpe, "subword vocabulary size when building from a corpus");
  tok_cmd->add_flag("--strings", tok_strings, "print token strings alongside ids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      if (!resume_dir.empty()) {
        const auto r = resume_experiment(resume_dir, tf.given(), &std::cerr);
        std::cout << r.report.to_table();
        return 0;
      }
      const json file = config_path.empty() ? json() : read_json_file(config_path);
      const auto cfg = resolve_config(file, tf.given());
      const auto r = run_experiment(cfg, &std::cerr);
      std::cout << "run directory: " << r.run_dir.string() << "\n" << r.report.to_table();
      return 0;
    }

    if (*eval_cmd) {
      const auto ck = load_checkpoint_arg(eval_ckpt);
      check_scheme(eval_scheme, ck);
      const auto tok = checkpoint_tokenizer(ck);
      auto m = restore_model(ck);
      EvalRequest req;
      req.words = req.chars = req.rare = req.numbers = false;
      for (const auto& name : split_list(eval_metrics)) {
        if (name == "word") req.words = true;
        else if (name == "char") req.chars = true;
        else if (name == "rare") req.rare = true;
        else if (name == "num") req.numbers = true;
        else throw ConfigError("unknown metric: " + name + " (word, char, rare, num)");
      }
      req.max_words = eval_max_words;
      req.numeracy = eval_numeracy;
      req.numeracy_limit = eval_num_limit;
      std::optional<PreparedData> prep;
      if (ck.experiment.contains("corpus")) {
        ExperimentConfig c;
        apply_config(c, ck.experiment);
        prep = prepare_experiment(c);
      }
      std::vector<Document> docs;
      if (!eval_corpus.empty()) {
        docs = load_corpus(eval_corpus);
      } else if (prep) {
        docs = prep->split.valid;
      } else {
        throw ConfigError("checkpoint has no experiment config; pass --corpus");
      }
      if (req.rare && !prep) std::cerr << "warning: no training split recorded, rare/frequent strata skipped\n";
      const auto report = evaluate_model(m, tok, docs, prep ? &prep->strata : nullptr, req);
      if (!eval_report.empty()) write_json(eval_report, report.to_json());
      std::cout << (eval_json ? report.to_json().dump(2) + "\n" : report.to_table());
      return 0;
    }

    if (*gen_cmd) {
      const auto ck = load_checkpoint_arg(gen_ckpt);
      const auto tok = checkpoint_tokenizer(ck);
      auto m = restore_model(ck);
      GenerationAudit audit;
      std::string text;
      if (m.config.hierarchical) {
        text = generate_hierarchical(m, tok, gen_prompt, gen_words, gen_pipelined, &audit);
      } else {
        if (gen_pipelined) std::cerr << "note: --pipelined has no effect on a flat model\n";
        text = generate_flat_words(m, tok, gen_prompt, gen_words, &audit);
      }
      std::cout << text << "\n";
      if (gen_audit == "-") {
        std::cerr << audit.to_json().dump(2) << "\n";
      } else if (!gen_audit.empty()) {
        write_json(gen_audit, audit.to_json());
      }
      return 0;
    }

    if (*an_cmd) {
      const auto base = preset_params(an_preset);
      an_p.chars_per_word = an_c.value_or(base.chars_per_word);
      an_p.chars_per_subword = an_s.value_or(base.chars_per_subword);
      const auto report = cost_report(an_p, an_ncls);
      std::vector<GenerationAudit> audits;
      for (const auto& path : an_audits) audits.push_back(GenerationAudit::from_json(read_json_file(path)));
      const auto rows = reconcile(audits, an_p);
      if (an_json) {
        json j = report.to_json();
        j["preset"] = an_preset;
        if (!rows.empty()) {
          json r = json::array();
          for (const auto& row : rows) {
            r.push_back({{"mode", row.kind}, {"analytic", row.analytic}, {"measured", row.measured}, {"rel_dev", row.rel_dev}});
          }
          j["reconcile"] = r;
        }
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << report.to_table();
        if (!rows.empty()) std::cout << "\n" << reconcile_table(rows);
      }
      return 0;
    }

    if (*tok_cmd) {
      Tokenizer tok;
      if (!tok_ckpt.empty()) {
        const auto ck = load_checkpoint_arg(tok_ckpt);
        check_scheme(tok_scheme, ck);
        tok = checkpoint_tokenizer(ck);
      } else {
        if (tok_scheme.empty()) throw ConfigError("tokenize needs --tokenizer or --checkpoint");
        const Scheme s = parse_scheme(tok_scheme);
        if (s == Scheme::kByte) {
          tok = Tokenizer::bytes();
        } else {
          if (tok_corpus.empty()) throw ConfigError("the " + tok_scheme + " scheme needs --corpus or --checkpoint");
          tok = Tokenizer::build(s, load_corpus(tok_corpus), tok_bpe);
        }
      }
      const auto ids = tok.encode(tok_text).ids;
      std::cout << json(ids).dump() << "\n";
      if (tok_strings) {
        json strs = json::array();
        for (auto id : ids) strs.push_back(tok.scheme() == Scheme::kByte ? std::to_string(id - special::kCount) : tok.token_text(id));
        std::cout << strs.dump() << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
