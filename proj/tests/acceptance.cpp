// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
// here. Usage: wordpool_acceptance [--only 1,2,...] [--work DIR] [--corpus FILE]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "oracles.hpp"
#include "wordpool/cost_model.hpp"
#include "wordpool/experiment.hpp"
#include "wordpool/generation.hpp"
#include "wordpool/gradcheck.hpp"

using namespace wordpool;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances ---------------------------------------------------------------------
constexpr double kParamTolerance = 0.10;         // relative, criterion 1
constexpr double kExactTolerance = 1e-12;        // cost-model identities, criteria 2-3
constexpr double kE2eFormulaTolerance = 0.05;    // |speed-up - 21.1|
constexpr double kGradTolerance = 1e-4;          // max relative error, criterion 5
constexpr double kOverfitUnitAcc = 99.0;         // criterion 7
constexpr double kOverfitWordAcc = 95.0;
constexpr std::size_t kOverfitMaxSteps = 5000;
constexpr double kMetricTolerance = 1e-9;        // criterion 9
constexpr std::size_t kMinDirectionalCorpus = 200 * 1000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << x;
  return s.str();
}

struct Context {
  fs::path work;
  std::string corpus;
};

// --- 1: parameter counts ---------------------------------------------------------------------

Outcome parameter_counts(const Context&) {
  ModelConfig byte;
  byte.scheme = Scheme::kByte;
  byte.layers = 8;
  byte.dim = 512;
  byte.heads = 8;
  byte.vocab_size = kByteVocabSize;
  byte.block_chars = 192;
  byte.context = 201;  // 192 characters at about 1.05 bytes per character
  ModelConfig sub = byte;
  sub.scheme = Scheme::kSubword;
  sub.vocab_size = 50257;
  sub.context = 68;
  ModelConfig ebyte = byte;
  ebyte.hierarchical = true;
  ebyte.encoder_layers = 2;
  ebyte.worddec_layers = 2;
  ebyte.n_cls = 4;
  const std::pair<const char*, std::pair<const ModelConfig*, double>> rows[] = {
      {"byte", {&byte, 25.7e6}}, {"subword", {&sub, 76.8e6}}, {"eByte", {&ebyte, 38.7e6}}};
  Outcome o{true, ""};
  for (const auto& [name, v] : rows) {
    const double n = static_cast<double>(count_params(*v.first));
    const double rel = std::abs(n - v.second) / v.second;
    o.pass = o.pass && rel <= kParamTolerance;
    o.detail += std::string(name) + " " + fmt(n / 1e6, 2) + "M vs " + fmt(v.second / 1e6, 1) + "M; ";
  }
  return o;
}

// --- 2: cost model exactness -------------------------------------------------------------------

Outcome cost_model_exactness(const Context&) {
  const CostModelParams p = preset_params("en");
  const double sub = training_speedup(CostKind::kSubword, p);
  const double e2e = training_speedup(CostKind::kE2e, p);
  const auto report = cost_report(p);
  bool note = false;
  for (const auto& n : report.notes) note = note || (n.find("21.1") != std::string::npos && n.find("6.8") != std::string::npos);
  const bool speeds = generation_speed(CostKind::kBase, p) == 1.0 && generation_speed(CostKind::kSubword, p) == 2.8 &&
                      generation_speed(CostKind::kE2e, p) == 4.0;
  Outcome o;
  o.pass = std::abs(sub - 7.84) < kExactTolerance && speeds && std::abs(e2e - 21.1) < kE2eFormulaTolerance && note;
  o.detail = "subword " + fmt(sub, 4) + "x, gen 1/2.8/4 per t " + (speeds ? "exact" : "WRONG") + ", e2e formula " +
             fmt(e2e, 2) + "x, discrepancy note " + (note ? "present" : "MISSING");
  return o;
}

// --- 3: language presets --------------------------------------------------------------------------

Outcome presets(const Context&) {
  Outcome o{true, ""};
  for (auto [lang, c] : {std::pair{"en", 5.5}, {"fr", 5.2}, {"ru", 6.4}}) {
    const auto p = preset_params(lang);
    const auto r = cost_report(p);
    const double t = p.context;
    const double f = c / 2 + t / (c * c);
    const double want_batch = p.memory / (p.layers * p.dim * t * f);
    const double want_speed = t / f;
    const double want_intra = (t / c) * c * (c + 1) / 2;
    const double want_dense = (t / c) * (c + 4) * (c + 4) / (t * t);
    const bool ok = p.chars_per_word == c && std::abs(r.rows[2].batch / want_batch - 1) < kExactTolerance &&
                    std::abs(r.rows[2].training_speedup / want_speed - 1) < kExactTolerance &&
                    std::abs(r.flat_causal.intra_entries / want_intra - 1) < kExactTolerance &&
                    std::abs(r.intra_word.intra_fraction() / want_dense - 1) < kExactTolerance &&
                    r.derivation.chars_per_word == c;
    o.pass = o.pass && ok;
    o.detail += std::string(lang) + " c=" + fmt(c, 1) + " e2e " + fmt(r.rows[2].training_speedup, 2) + "x" +
                (ok ? "" : " MISMATCH") + "; ";
  }
  return o;
}

// --- 4: mask invariants -------------------------------------------------------------------------

Outcome mask_invariants(const Context&) {
  std::mt19937_64 rng(2024);
  std::size_t failures = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<std::size_t> lens(1 + rng() % 8);
    for (auto& l : lens) l = 1 + rng() % 12;
    const std::size_t n_cls = 1 + rng() % 4;
    const auto m = build_encoder_mask(lens, n_cls);
    std::vector<std::size_t> owner;
    std::size_t expected = 0;
    for (std::size_t w = 0; w < lens.size(); ++w) {
      owner.insert(owner.end(), lens[w] + n_cls, w);
      expected += (lens[w] + n_cls) * (lens[w] + n_cls);
    }
    std::size_t allowed = 0, cross = 0;
    for (std::size_t i = 0; i < m.queries(); ++i) {
      for (std::size_t j = 0; j < m.keys(); ++j) {
        if (!m(i, j)) continue;
        ++allowed;
        cross += owner[i] != owner[j];
      }
    }
    failures += cross != 0 || allowed != expected;
  }
  // Causal leak probes on the word-level decoder: perturbing word k may only
  // change predictions for words after k.
  std::size_t leaks = 0, probes = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ModelConfig c;
    c.hierarchical = true;
    c.layers = 1 + trial % 2;
    c.dim = 16;
    c.heads = 2;
    c.n_cls = 1 + trial % 4;
    c.max_word_len = 6;
    c.vocab_size = 12;
    Model<double> model(c, static_cast<std::uint64_t>(trial));
    const std::size_t words = 2 + rng() % 6;
    nn::Tensor<double> reps({words, c.n_cls, c.dim});
    std::normal_distribution<double> nd;
    for (auto& x : reps.data) x = nd(rng);
    const auto base = word_lm_step(model, reps);
    const std::size_t k = rng() % words;
    auto pert = reps;
    const std::size_t group = c.n_cls * c.dim;
    for (std::size_t i = 0; i < group; ++i) pert.data[k * group + i] += 1.0 + nd(rng);
    const auto out = word_lm_step(model, pert);
    for (std::size_t g = 0; g <= words; ++g) {
      const bool same = std::equal(out.data.begin() + static_cast<std::ptrdiff_t>(g * group),
                                   out.data.begin() + static_cast<std::ptrdiff_t>((g + 1) * group),
                                   base.data.begin() + static_cast<std::ptrdiff_t>(g * group));
      ++probes;
      leaks += same != (g <= k);
    }
  }
  return {failures == 0 && leaks == 0, "10000 encoder masks, " + std::to_string(failures) + " failures; " +
                                           std::to_string(probes) + " causal probes, " + std::to_string(leaks) +
                                           " leaks"};
}

// --- 5: gradient checks ----------------------------------------------------------------------------

Outcome gradient_checks(const Context&) {
  using nn::Tape;
  using nn::Tensor;
  using nn::Var;
  std::mt19937_64 rng(7);
  auto randn = [&](std::size_t r, std::size_t c) {
    std::normal_distribution<double> nd;
    Tensor<double> t({r, c});
    for (auto& x : t.data) x = nd(rng);
    return t;
  };
  // Weighted sum so every output coordinate gets its own gradient.
  auto reduce = [](Tape<double>& t, Var y) {
    std::mt19937_64 local(99);
    std::normal_distribution<double> nd;
    std::vector<double> w(t.rows(y) * t.cols(y));
    for (auto& x : w) x = nd(local);
    return t.sum(t.mul(y, t.input(t.rows(y), t.cols(y), w)));
  };
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const nn::ScalarFn& f, const Tensor<double>& x) {
    errs.emplace_back(name, nn::grad_check(f, x, 1e-5));
  };
  const auto w43 = randn(4, 3), b13 = randn(1, 3), g16 = randn(1, 6), b16 = randn(1, 6), lhs = randn(3, 2);
  check("matmul", [&](Tape<double>& t, Var x) { return reduce(t, t.matmul(x, t.input(w43))); }, randn(2, 4));
  check("matmul_rhs", [&](Tape<double>& t, Var x) { return reduce(t, t.matmul(t.input(lhs), x)); }, randn(2, 5));
  check("linear", [&](Tape<double>& t, Var x) { return reduce(t, t.linear(x, t.input(w43), t.input(b13))); }, randn(3, 4));
  check("add_scale", [&](Tape<double>& t, Var x) { return reduce(t, t.scale(t.add(x, x), 0.3)); }, randn(2, 2));
  check("mul_sum", [&](Tape<double>& t, Var x) { return t.sum(t.mul(x, x)); }, randn(3, 3));
  check("layernorm", [&](Tape<double>& t, Var x) { return reduce(t, t.layernorm(x, t.input(g16), t.input(b16))); },
        randn(4, 6));
  check("gelu", [&](Tape<double>& t, Var x) { return reduce(t, t.gelu(x)); }, randn(3, 5));
  const std::int32_t ids[] = {2, 0, 2, 1};
  check("embedding", [&](Tape<double>& t, Var e) { return reduce(t, t.embedding(e, ids)); }, randn(3, 4));
  const auto tail = randn(1, 3);
  check("gather_concat",
        [&](Tape<double>& t, Var x) {
          const Var parts[] = {t.gather_rows(x, {1, 1}), x, t.input(tail)};
          return reduce(t, t.concat_rows(parts));
        },
        randn(2, 3));
  check("masked_attention",
        [&](Tape<double>& t, Var x) {
          return reduce(t, t.masked_attention(x, t.scale(x, 0.5), t.gelu(x), nn::AttentionMask::causal(4), 2));
        },
        randn(4, 4));
  {
    std::vector<nn::AttentionBlock> blocks{{0, nn::AttentionMask::full(2)}, {2, nn::AttentionMask::causal(3)}};
    check("block_attention",
          [&](Tape<double>& t, Var x) { return reduce(t, t.masked_attention(x, t.scale(x, -0.7), x, blocks, 2)); },
          randn(5, 4));
  }
  const std::int32_t tg[] = {5, -1, 0};
  const auto w46 = randn(4, 6);
  check("cross_entropy", [&](Tape<double>& t, Var x) { return t.cross_entropy(t.matmul(x, t.input(w46)), tg, -1); },
        randn(3, 4));

  // Full models: L=2, D=16.
  ModelConfig flat;
  flat.layers = 2;
  flat.dim = 16;
  flat.heads = 2;
  flat.vocab_size = 11;
  flat.context = 12;
  {
    Model<double> m(flat, 19);
    const std::vector<TokenId> rows = {5, 6, 7, 8, 9, 5, 10, 7, 6, 5, 8, 9};
    errs.emplace_back("flat_model", nn::grad_check_params(m.params, [&](Tape<double>& t) { return flat_loss(t, m, rows, 2, 5); }));
  }
  for (bool packed : {false, true}) {
    ModelConfig h = flat;
    h.hierarchical = true;
    h.n_cls = 2;
    h.max_word_len = 6;
    h.block_chars = 40;
    h.vocab_size = 12;
    h.packed = packed;
    Model<double> m(h, 23);
    std::mt19937_64 wrng(6);
    const auto b = make_segmented_batch({oracle::random_words(wrng, 3, 4, 12), oracle::random_words(wrng, 2, 4, 12)}, h);
    errs.emplace_back(packed ? "three_stage_packed" : "three_stage_padded",
                      nn::grad_check_params(m.params, [&](Tape<double>& t) { return hier_loss(t, m, b); }, 8));
  }
  double worst = 0;
  std::string worst_name;
  for (const auto& [n, e] : errs) {
    if (e >= worst) {
      worst = e;
      worst_name = n;
    }
  }
  std::ostringstream d;
  d << errs.size() << " checks, worst " << std::scientific << std::setprecision(2) << worst << " (" << worst_name << ")";
  return {worst < kGradTolerance, d.str()};
}

// --- 6: tokenizer oracles --------------------------------------------------------------------------

Outcome tokenizer_oracles(const Context& ctx) {
  auto docs_of = [](std::initializer_list<const char*> texts) {
    std::vector<Document> d;
    for (const char* t : texts) d.push_back({"d", t});
    return d;
  };
  const std::vector<std::vector<Document>> corpora = {
      docs_of({"abab abab"}),
      docs_of({"aaaa aaa aa"}),
      docs_of({"the cat sat on the mat"}),
      docs_of({"low lower lowest newer wider", "newest widest"}),
      docs_of({"banana bandana ananas", "nana"}),
  };
  std::size_t bpe_ok = 0;
  for (const auto& d : corpora) bpe_ok += train_bpe(d, 10000).merges == oracle::naive_bpe(d, 10000);

  std::mt19937_64 rng(3);
  const auto vocab = build_char_vocab(docs_of({"abcde xyz", "日本語 ж"}));
  std::size_t rt_fail = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto s = oracle::random_unicode(rng, rng() % 24);
    if (decode_bytes(encode_bytes(s).ids) != s) ++rt_fail;
    std::string masked;
    for (const auto& c : utf8::split_chars(s)) masked += vocab.find(c) ? c : std::string(kReplacement);
    if (decode_tokens(encode_chars(s, vocab).ids, vocab) != masked) ++rt_fail;
  }

  // Corpus-wide: every document is no longer in subwords than in characters,
  // and larger merge lists never lengthen the corpus.
  const auto docs = load_corpus(ctx.corpus);
  const auto chars = Tokenizer::build(Scheme::kChar, docs);
  std::size_t mono_fail = 0;
  std::size_t prev_total = std::numeric_limits<std::size_t>::max();
  std::string totals;
  for (std::size_t v : {256u, 512u, 1024u, 2048u}) {
    const auto sub = Tokenizer::build(Scheme::kSubword, docs, v);
    std::size_t total = 0;
    for (const auto& d : docs) {
      const auto text = clean_text(d.text);
      const auto n = sub.encode(text).ids.size();
      mono_fail += n > chars.encode(text).ids.size();
      mono_fail += sub.decode(sub.encode(text).ids) != text;
      total += n;
    }
    mono_fail += total > prev_total;
    prev_total = total;
    totals += std::to_string(v) + ":" + std::to_string(total) + " ";
  }
  return {bpe_ok == corpora.size() && rt_fail == 0 && mono_fail == 0,
          "BPE " + std::to_string(bpe_ok) + "/5 match, 10000 round trips " + std::to_string(rt_fail) +
              " failures, corpus tokens by vocab " + totals + "(" + std::to_string(mono_fail) + " violations)"};
}

// --- 7: overfit capability ----------------------------------------------------------------------------

std::string overfit_text(const std::string& corpus) {
  std::string text;
  for (const auto& d : load_corpus(corpus)) {
    text += (text.empty() ? "" : " ") + clean_text(d.text);
    if (text.size() >= 2500) break;
  }
  if (text.size() > 3000) text = text.substr(0, text.rfind(' ', 3000));
  return text;
}

struct OverfitRun {
  std::size_t steps = 0;
  double unit_acc = 0;
  double word_acc = 0;
};

OverfitRun overfit(bool hierarchical, const std::vector<Document>& docs) {
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  ModelConfig c;
  c.hierarchical = hierarchical;
  c.layers = 2;
  c.dim = 128;
  c.heads = 4;
  c.n_cls = 4;
  c.max_word_len = 24;
  c.block_chars = 192;
  c.context = 192;
  c.vocab_size = tok.vocab_size();
  c.packed = true;
  Model<float> m(c, 1);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.weight_decay = 0.0;
  tc.seed = 1;
  const auto data = prepare_data(docs, tok, c);
  AdamW<float> opt(m.params, tc.optimizer());
  std::mt19937_64 rng(tc.seed);
  OverfitRun r;
  auto score = [&] {
    const auto ev = evaluate_words(m, tok, docs);
    r.unit_acc = ev.char_acc();
    r.word_acc = ev.word_acc();
    return r.unit_acc >= kOverfitUnitAcc && (!hierarchical || r.word_acc >= kOverfitWordAcc);
  };
  while (r.steps < kOverfitMaxSteps) {
    for (const auto& b : make_batches(data, tc, rng, hierarchical ? c.max_words() : 0)) {
      train_step(m, opt, b);
      if (++r.steps % 250 == 0 && score()) return r;
      if (r.steps >= kOverfitMaxSteps) break;
    }
  }
  score();
  return r;
}

Outcome overfit_capability(const Context& ctx) {
  const std::string text = overfit_text(ctx.corpus);
  const std::vector<Document> docs{{"overfit", text}};
  const auto flat = overfit(false, docs);
  const auto hier = overfit(true, docs);
  const bool pass = text.size() >= 1000 && text.size() <= 4000 && flat.unit_acc >= kOverfitUnitAcc &&
                    hier.unit_acc >= kOverfitUnitAcc && hier.word_acc >= kOverfitWordAcc &&
                    flat.steps <= kOverfitMaxSteps && hier.steps <= kOverfitMaxSteps;
  return {pass, std::to_string(text.size()) + " B corpus; char " + fmt(flat.unit_acc, 2) + "% units at step " +
                    std::to_string(flat.steps) + "; eChar " + fmt(hier.unit_acc, 2) + "% units, " +
                    fmt(hier.word_acc, 2) + "% words at step " + std::to_string(hier.steps)};
}

// --- 8 and 11: desk-preset runs -------------------------------------------------------------------------

ExperimentConfig desk_config(const Context& ctx, bool hierarchical, std::size_t n_cls, const std::string& name) {
  nlohmann::json flags{{"corpus", ctx.corpus},
                       {"tokenizer", "char"},
                       {"hierarchical", hierarchical},
                       {"n_cls", n_cls},
                       {"numeracy_limit", 50},
                       {"output", (ctx.work / name).string()}};
  return resolve_config(nullptr, flags);
}

/// Runs (or reuses a finished run with the same config) and returns validation word accuracy.
double desk_run(const ExperimentConfig& c) {
  const fs::path dir = resolve_run_dir(c);
  if (fs::exists(dir / "report.json") && read_json_file(dir / "config.json") == c.to_json()) {
    return read_json_file(dir / "report.json").at("word_acc").get<double>();
  }
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  std::cerr << "[desk run] " << dir.string() << std::endl;
  const auto r = run_experiment(c, &std::cerr);
  std::cerr << "[desk run] done in "
            << static_cast<long>(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
            << " s" << std::endl;
  return *r.report.word_acc;
}

Outcome directional(const Context& ctx) {
  const auto size = fs::file_size(ctx.corpus);
  const double flat = desk_run(desk_config(ctx, false, 4, "char"));
  const double e4 = desk_run(desk_config(ctx, true, 4, "echar_ncls4"));
  const double e1 = desk_run(desk_config(ctx, true, 1, "echar_ncls1"));
  return {size >= kMinDirectionalCorpus && e4 > flat && e4 > e1,
          std::to_string(size / 1000) + " KB corpus, validation word acc: eChar(n_cls=4) " + fmt(e4, 2) +
              "% vs char " + fmt(flat, 2) + "%, vs eChar(n_cls=1) " + fmt(e1, 2) + "%"};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const Context& ctx) {
  const auto a = desk_config(ctx, true, 4, "echar_ncls4");
  const auto b = desk_config(ctx, true, 4, "echar_ncls4_repeat");
  desk_run(a);
  desk_run(b);
  const fs::path da = resolve_run_dir(a), db = resolve_run_dir(b);
  std::size_t files = 0, diffs = 0;
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(da / "checkpoints")) names.insert("checkpoints/" + e.path().filename().string());
  for (const auto& e : fs::directory_iterator(db / "checkpoints")) names.insert("checkpoints/" + e.path().filename().string());
  names.insert("metrics.jsonl");
  names.insert("report.json");
  for (const auto& n : names) {
    ++files;
    if (!fs::exists(da / n) || !fs::exists(db / n) || file_bytes(da / n) != file_bytes(db / n)) ++diffs;
  }
  return {diffs == 0 && files > 2,
          std::to_string(files) + " files compared (checkpoints, metrics.jsonl, report.json), " + std::to_string(diffs) +
              " differ"};
}

// --- 9: metric oracles ------------------------------------------------------------------------------------

Outcome metric_oracles(const Context&) {
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  auto near = [](double a, double b) { return std::abs(a - b) <= kMetricTolerance; };
  // Ten number-estimation examples, traced by hand:
  // parsed 8/10; gold 0 unscored; exponent hits 2100/3500, 3500/3500, -12/12, 10/20;
  // APEs 40, 0, 200, 100, 50, 1, 0.1001 -> median 40.
  const auto r = number_metrics({"2100", "approximately", "3,500", "-12", "0", "1.5", "10", "abc", "99", "1000"},
                                {3500, 5, 3500, 12, 7, 0, 20, 3, 100, 999});
  expect(near(r.num_pct, 80.0), "num_pct");
  expect(r.eacc && near(*r.eacc, 400.0 / 7.0), "eacc");
  expect(r.mdape && near(*r.mdape, 40.0), "mdape");
  const auto one = number_metrics({"2100"}, {3500});
  expect(one.eacc && near(*one.eacc, 100.0) && one.mdape && near(*one.mdape, 40.0), "2100 vs 3500");
  // Ten word records: 7 right, 30 of 40 characters.
  WordEval ev;
  for (int i = 0; i < 10; ++i) {
    ev.records.push_back({"w" + std::to_string(i), i < 7, 4, i < 7 ? 4u : (i == 7 ? 2u : 0u)});
  }
  expect(near(ev.word_acc(), 70.0) && near(ev.char_acc(), 75.0), "word/char records");
  // Strata: rare 1 of 3, frequent 3 of 5, two words in neither.
  FrequencyStrata s;
  s.rare = {"zebra", "quark", "fjord"};
  s.frequent = {"the", "of"};
  const auto st = stratified_accuracy({{"the", true}, {"the", true}, {"of", false}, {"zebra", false}, {"quark", true},
                                       {"fjord", false}, {"cat", true}, {"dog", false}, {"of", true}, {"the", false}},
                                      s);
  expect(st.rare_acc && near(*st.rare_acc, 100.0 / 3.0) && st.freq_acc && near(*st.freq_acc, 60.0), "strata");
  // Teacher-forced trace with a hand-built bigram model over " ab ba a ":
  // ab fully right, ba wrong, a right but its boundary wrong -> 1/3 words, 4/8 chars.
  const std::vector<Document> docs{{"d", "ab ba a"}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  const TokenId sp = *tok.boundary_id(), a = *tok.vocab().find("a"), b = *tok.vocab().find("b");
  auto m = oracle::bigram_model(tok, {{sp, a}, {a, b}, {b, sp}}, 16);
  const auto tr = evaluate_flat(m, tok, {segment_words("ab ba a").words});
  expect(tr.records.size() == 3 && near(tr.word_acc(), 100.0 / 3.0) && near(tr.char_acc(), 50.0), "bigram trace");
  std::string detail = "numbers %Num 80, EAcc 57.14, MdAPE 40; 2100 vs 3500 EAcc hit APE 40%; records; strata; bigram trace";
  for (const auto& x : bad) detail += " FAILED:" + x;
  return {bad.empty(), detail};
}

// --- 10: generation contracts ---------------------------------------------------------------------------------

Outcome generation_contracts(const Context&) {
  const std::vector<Document> docs{{"a", "one two three four five six seven eight nine ten"},
                                   {"b", "alpha beta gamma delta épsilon ζήτα"}};
  static const char* pool[] = {"one", "two", "three", "alpha", "gamma", "six", "nine", "beta", "ten", "delta"};
  std::mt19937_64 rng(77);
  std::size_t mismatches = 0, identity_fail = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Scheme scheme = trial % 3 == 0 ? Scheme::kByte : Scheme::kChar;
    const auto tok = Tokenizer::build(scheme, docs);
    ModelConfig c;
    c.scheme = scheme;
    c.hierarchical = true;
    c.layers = 1 + rng() % 3;
    c.encoder_layers = 1 + rng() % 2;
    c.worddec_layers = 1 + rng() % 2;
    c.dim = 16;
    c.heads = 2;
    c.n_cls = 1 + rng() % 4;
    c.max_word_len = 3 + rng() % 6;
    c.block_chars = 40;
    c.vocab_size = tok.vocab_size();
    c.packed = rng() % 2;
    Model<float> m(c, 1000 + static_cast<std::uint64_t>(trial));
    std::string prompt;
    const std::size_t n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) prompt += std::string(i ? " " : "") + pool[rng() % 10];
    const std::size_t want = 1 + rng() % 8;
    GenerationAudit sa, pa;
    const auto seq = generate_hierarchical(m, tok, prompt, want, false, &sa);
    const auto pipe = generate_hierarchical(m, tok, prompt, want, true, &pa);
    mismatches += seq != pipe;
    // By-construction identities. Char models are checked word by word from the
    // rendered text. Byte output can hold invalid sequences (rendered as U+FFFD) and
    // bytes that decode to spaces, so there only the aggregate relations are checked.
    const auto words = segment_words(seq).words;
    const double e = static_cast<double>(c.encoder_layers), l = static_cast<double>(c.layers),
                 d = static_cast<double>(c.worddec_layers);
    const std::size_t prompt_words = word_tokens(tok, segment_words(prompt).words, c.max_word_len).size();
    for (const auto* a : {&sa, &pa}) {
      bool ok = a->words == want && a->core_passes == want &&
                a->encoder_passes == prompt_words + want && a->decoder_steps == a->units &&
                a->eow_steps <= want && a->units >= want && a->units <= want * c.max_word_len &&
                a->depth_layers == static_cast<double>(want) * (e + l) + d * static_cast<double>(a->units + a->eow_steps) &&
                a->overlap_depth_layers <= a->depth_layers;
      if (scheme == Scheme::kChar) {
        std::size_t units = 0, eows = 0;
        double overlap = 0;
        for (const auto& w : words) {
          const std::size_t n = tok.encode_word(w).size();
          const std::size_t steps = n + (n < c.max_word_len ? 1 : 0);
          units += n;
          eows += n < c.max_word_len;
          overlap += std::max(e + l, d * static_cast<double>(steps));
        }
        ok = ok && words.size() == want && a->units == units && a->eow_steps == eows && a->overlap_depth_layers == overlap;
      }
      identity_fail += !ok;
    }
  }
  return {mismatches == 0 && identity_fail == 0, "100 random model/prompt pairs: " + std::to_string(mismatches) +
                                                     " pipelined/sequential mismatches, " +
                                                     std::to_string(identity_fail) + " audit identity failures"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-11"};
  std::vector<int> only;
  std::string work, corpus = std::string(WORDPOOL_DATA_DIR) + "/lee_background.txt";
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--work", work, "directory for desk-preset runs; finished runs with identical configs are reused");
  app.add_option("--corpus", corpus, "English corpus for criteria 6-8 and 11");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.corpus = corpus;
  ctx.work = work.empty() ? fs::temp_directory_path() / ("wordpool_acceptance_" + std::to_string(::getpid())) : fs::path(work);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<int, std::function<Outcome(const Context&)>>> criteria = {
      {1, parameter_counts},  {2, cost_model_exactness}, {3, presets},         {4, mask_invariants},
      {5, gradient_checks},   {6, tokenizer_oracles},    {7, overfit_capability}, {8, directional},
      {9, metric_oracles},    {10, generation_contracts}, {11, determinism}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt(secs, 1) << " s) "
              << o.detail << std::endl;
  }
  if (work.empty()) fs::remove_all(ctx.work);
  return failed == 0 ? 0 : 1;
}
