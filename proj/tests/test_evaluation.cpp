#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.hpp"
#include "wordpool/evaluation.hpp"

using namespace wordpool;

namespace {

using oracle::bigram_model;

TokenId id(const Tokenizer& tok, std::string_view s) { return *tok.vocab().find(s); }

std::vector<std::vector<std::string>> words_of(const std::string& text) { return {segment_words(text).words}; }

}  // namespace

// --- records and strata -----------------------------------------------------------

TEST(Metrics, WordAndCharFromRecords) {
  WordEval ev;
  // 10 records: 7 correct; chars 4 each, 30 of 40 credited
  for (int i = 0; i < 10; ++i) ev.records.push_back({"w" + std::to_string(i), i < 7, 4, i < 7 ? 4u : (i == 7 ? 2u : 0u)});
  ev.records[9].chars_correct = 0;
  ev.records[8].chars_correct = 0;
  EXPECT_DOUBLE_EQ(ev.word_acc(), 70.0);
  EXPECT_DOUBLE_EQ(ev.char_acc(), 30.0 / 40.0 * 100.0);
  EXPECT_EQ(ev.hits(), 7u);
  EXPECT_DOUBLE_EQ(WordEval{}.word_acc(), 0.0);
}

TEST(Metrics, StratifiedHandCount) {
  FrequencyStrata s;
  s.rare = {"zebra", "quark", "fjord"};
  s.frequent = {"the", "of"};
  std::vector<WordRecord> r = {{"the", true},  {"the", true},   {"of", false},   {"zebra", false}, {"quark", true},
                               {"fjord", false}, {"cat", true}, {"dog", false}, {"of", true},     {"the", false}};
  const auto a = stratified_accuracy(r, s);
  EXPECT_EQ(a.rare_count, 3u);
  EXPECT_EQ(a.freq_count, 5u);
  EXPECT_DOUBLE_EQ(*a.rare_acc, 100.0 / 3.0);
  EXPECT_DOUBLE_EQ(*a.freq_acc, 60.0);
  EXPECT_LE(a.rare_count + a.freq_count, r.size());
  // records outside both strata change nothing
  r.push_back({"cat", false});
  const auto b = stratified_accuracy(r, s);
  EXPECT_EQ(*b.rare_acc, *a.rare_acc);
  EXPECT_EQ(*b.freq_acc, *a.freq_acc);
}

TEST(Metrics, EmptyStratumIsAbsent) {
  FrequencyStrata s;
  s.frequent = {"the"};
  const auto a = stratified_accuracy({{"the", true}, {"the", true}}, s);
  EXPECT_FALSE(a.rare_acc.has_value());
  EXPECT_DOUBLE_EQ(*a.freq_acc, 100.0);
}

// --- numbers -------------------------------------------------------------------------

TEST(Numbers, Grammar) {
  EXPECT_EQ(*parse_number("2100"), 2100.0);
  EXPECT_EQ(*parse_number("3,500"), 3500.0);
  EXPECT_EQ(*parse_number("-12.25"), -12.25);
  EXPECT_EQ(*parse_number("+7"), 7.0);
  EXPECT_EQ(*parse_number("1,234,567.5"), 1234567.5);
  for (const char* bad : {"approximately", "", "1.", ".5", "1,", ",100", "12a", "1.2.3", "--1", "1 000"}) {
    EXPECT_FALSE(parse_number(bad).has_value()) << bad;
  }
}

TEST(Numbers, TenExampleFixture) {
  const std::vector<std::string> preds{"2100", "approximately", "3,500", "-12", "0", "1.5", "10", "abc", "99", "1000"};
  const std::vector<double> golds{3500, 5, 3500, 12, 7, 0, 20, 3, 100, 999};
  const auto r = number_metrics(preds, golds);
  EXPECT_EQ(r.examples, 10u);
  EXPECT_EQ(r.parsed, 8u);
  EXPECT_EQ(r.scored, 7u);
  EXPECT_DOUBLE_EQ(r.num_pct, 80.0);
  // exponent hits: 2100/3500, 3500/3500, -12/12, 10/20
  EXPECT_DOUBLE_EQ(*r.eacc, 400.0 / 7.0);
  // APEs 40, 0, 200, 100, 50, 1, 0.1001 -> median 40
  EXPECT_DOUBLE_EQ(*r.mdape, 40.0);
}

TEST(Numbers, SingleCases) {
  auto one = number_metrics({"2100"}, {3500});
  EXPECT_DOUBLE_EQ(*one.eacc, 100.0);
  EXPECT_NEAR(*one.mdape, 40.0, 1e-12);
  auto word = number_metrics({"approximately"}, {3500});
  EXPECT_DOUBLE_EQ(word.num_pct, 0.0);
  EXPECT_FALSE(word.eacc.has_value());
  EXPECT_FALSE(word.mdape.has_value());
  auto two = number_metrics({"110", "150"}, {100, 100});
  EXPECT_NEAR(*two.mdape, 30.0, 1e-9);
  auto zero = number_metrics({"5"}, {0});
  EXPECT_DOUBLE_EQ(zero.num_pct, 100.0);
  EXPECT_FALSE(zero.eacc.has_value());
}

TEST(Numbers, MedianIsPermutationInvariant) {
  std::vector<double> v{5, 1, 9, 3, 7, 2};
  std::mt19937_64 rng(1);
  const double m0 = median(v);
  EXPECT_DOUBLE_EQ(m0, 4.0);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(median(v), m0);
  }
}

TEST(Numbers, ExtractionNeedsContext) {
  std::string text;
  for (int i = 0; i < 40; ++i) text += "word ";
  text += "costs 1,200 dollars and 7 cents";
  const std::vector<Document> docs{{"d", "only 5 here"}, {"e", text}};
  const auto ex = extract_numeracy_examples(docs, 192);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].gold, "1,200");
  EXPECT_EQ(ex[1].gold, "7");
  EXPECT_TRUE(ex[0].context.ends_with("word costs"));
  EXPECT_GE(utf8::length(ex[0].context) + 1, 192u);
}

// --- hand-built bigram model -------------------------------------------------------------

TEST(WordAccuracy, BigramTrace) {
  const std::vector<Document> docs{{"d", "ab ba a"}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  const TokenId sp = *tok.boundary_id(), a = id(tok, "a"), b = id(tok, "b");
  auto m = bigram_model(tok, {{sp, a}, {a, b}, {b, sp}}, 16);
  // " ab ba a ": word ab -> a,b,space all right; ba -> none; a -> a right, space wrong
  const auto ev = evaluate_flat(m, tok, words_of("ab ba a"));
  ASSERT_EQ(ev.records.size(), 3u);
  EXPECT_TRUE(ev.records[0].correct);
  EXPECT_FALSE(ev.records[1].correct);
  EXPECT_FALSE(ev.records[2].correct);
  EXPECT_EQ(ev.records[0].chars_correct, 3u);
  EXPECT_EQ(ev.records[1].chars_correct, 0u);
  EXPECT_EQ(ev.records[2].chars_correct, 1u);
  EXPECT_NEAR(ev.word_acc(), 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(ev.char_acc(), 50.0);
}

TEST(WordAccuracy, BigramTraceAcrossWindows) {
  // The bigram model ignores context, so the per-copy trace holds in every window.
  std::string text;
  for (int i = 0; i < 30; ++i) text += "ab ba a ";
  const std::vector<Document> docs{{"d", text}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  const TokenId sp = *tok.boundary_id(), a = id(tok, "a"), b = id(tok, "b");
  auto m = bigram_model(tok, {{sp, a}, {a, b}, {b, sp}}, 6);
  const auto ev = evaluate_flat(m, tok, words_of(text));
  ASSERT_EQ(ev.records.size(), 90u);
  EXPECT_NEAR(ev.word_acc(), 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(ev.char_acc(), 50.0);
}

TEST(WordAccuracy, UniformModelScoresNothing) {
  const std::vector<Document> docs{{"d", "ab ba a"}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  auto m = bigram_model(tok, {}, 16);
  const auto ev = evaluate_flat(m, tok, words_of("ab ba a ab"));
  EXPECT_EQ(ev.word_acc(), 0.0);
  EXPECT_EQ(ev.char_acc(), 0.0);
}

TEST(WordAccuracy, SubwordResegmentationStillCounts) {
  const std::vector<Document> docs{{"d", "ab ab ab ab a b"}};
  const auto tok = Tokenizer::build(Scheme::kSubword, docs, 64);
  ASSERT_TRUE(tok.vocab().find("ab").has_value());
  const TokenId sp = *tok.boundary_id(), a = id(tok, "a"), b = id(tok, "b"), ab = id(tok, "ab");
  ASSERT_EQ(tok.encode("ab").ids, std::vector<TokenId>{ab});
  // the model spells "ab" as a + b
  auto m = bigram_model(tok, {{sp, a}, {a, b}, {b, sp}, {ab, sp}}, 16);
  const auto ev = evaluate_flat(m, tok, words_of("ab"));
  ASSERT_EQ(ev.records.size(), 1u);
  EXPECT_TRUE(ev.records[0].correct);
  // teacher forcing: "ab" token missed (2 chars), boundary after it right (1 char)
  EXPECT_EQ(ev.records[0].chars, 3u);
  EXPECT_EQ(ev.records[0].chars_correct, 1u);
  // a prediction that is not a prefix of the gold text does not trigger the fallback
  auto wrong = bigram_model(tok, {{sp, b}, {b, sp}, {ab, sp}}, 16);
  EXPECT_FALSE(evaluate_flat(wrong, tok, words_of("ab")).records[0].correct);
}

TEST(WordAccuracy, SubwordCreditsAllCharacters) {
  const std::vector<Document> docs{{"d", "abc abc abc abc"}};
  const auto tok = Tokenizer::build(Scheme::kSubword, docs, 64);
  const auto ids = tok.encode("abc").ids;
  ASSERT_EQ(ids.size(), 1u);
  const TokenId sp = *tok.boundary_id();
  auto m = bigram_model(tok, {{sp, ids[0]}, {ids[0], sp}}, 16);
  const auto ev = evaluate_flat(m, tok, words_of("abc"));
  EXPECT_EQ(ev.records[0].chars, 4u);
  EXPECT_EQ(ev.records[0].chars_correct, 4u);
}

TEST(WordAccuracy, ByteCharacterNeedsAllBytes) {
  const auto tok = Tokenizer::bytes();
  const auto enc = tok.encode("é").ids;  // two bytes
  ASSERT_EQ(enc.size(), 2u);
  const TokenId sp = *tok.boundary_id();
  // first byte right, second byte wrong, boundary right
  auto m = bigram_model(tok, {{sp, enc[0]}, {enc[0], sp}}, 16);
  auto ev = evaluate_flat(m, tok, words_of("é"));
  EXPECT_FALSE(ev.records[0].correct);
  EXPECT_EQ(ev.records[0].chars, 2u);
  EXPECT_EQ(ev.records[0].chars_correct, 0u);
  auto full = bigram_model(tok, {{sp, enc[0]}, {enc[0], enc[1]}, {enc[1], sp}}, 16);
  ev = evaluate_flat(full, tok, words_of("é"));
  EXPECT_TRUE(ev.records[0].correct);
  EXPECT_EQ(ev.records[0].chars_correct, 2u);
}

TEST(WordAccuracy, WordSchemeUsesWholeWords) {
  const std::vector<Document> docs{{"d", "red green blue red"}};
  const auto tok = Tokenizer::build(Scheme::kWord, docs);
  const TokenId r = id(tok, "red"), g = id(tok, "green"), bl = id(tok, "blue");
  auto m = bigram_model(tok, {{special::kBos, r}, {r, g}, {g, r}, {bl, r}}, 8);
  const auto ev = evaluate_flat(m, tok, words_of("red green blue red zzz"));
  ASSERT_EQ(ev.records.size(), 5u);
  EXPECT_TRUE(ev.records[0].correct);
  EXPECT_TRUE(ev.records[1].correct);
  EXPECT_FALSE(ev.records[2].correct);
  EXPECT_TRUE(ev.records[3].correct);
  EXPECT_FALSE(ev.records[4].correct);  // UNK never counts
  EXPECT_EQ(ev.records[0].chars, 4u);
  EXPECT_EQ(ev.records[1].chars_correct, 6u);
}

// --- tensor-path oracles for random models ---------------------------------------------

TEST(WordAccuracy, FlatMatchesSingleForwardOracle) {
  const std::vector<Document> docs{{"d", "one two three four"}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  ModelConfig c;
  c.layers = 1;
  c.dim = 16;
  c.heads = 2;
  c.context = 64;
  c.vocab_size = tok.vocab_size();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<float> m(c, seed);
    const auto words = segment_words("two one four three one").words;
    const auto ev = evaluate_flat(m, tok, {words});
    std::vector<TokenId> stream{*tok.boundary_id()};
    const auto body = tok.encode_stream(words);
    stream.insert(stream.end(), body.begin(), body.end());
    const auto logits = flat_forward(m, std::span<const TokenId>(stream.data(), stream.size() - 1));
    std::size_t pos = 1;
    for (std::size_t w = 0; w < words.size(); ++w) {
      bool ok = true;
      const std::size_t n = words[w].size() + 1;
      for (std::size_t k = 0; k < n; ++k, ++pos) {
        const std::span<const float> row(logits.data.data() + (pos - 1) * c.vocab_size, c.vocab_size);
        ok = ok && argmax(row) == stream[pos];
      }
      EXPECT_EQ(ev.records[w].correct, ok);
    }
  }
}

TEST(WordAccuracy, HierarchicalMatchesStepwiseOracle) {
  const std::vector<Document> docs{{"d", "one two three four five"}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  ModelConfig c;
  c.hierarchical = true;
  c.layers = 1;
  c.dim = 16;
  c.heads = 2;
  c.n_cls = 2;
  c.max_word_len = 6;
  c.block_chars = 64;
  c.vocab_size = tok.vocab_size();
  const auto words = segment_words("two one four three five one").words;  // 29 chars, one window
  const auto wt = word_tokens(tok, words, c.max_word_len);
  std::size_t agree = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<float> m(c, seed);
    const auto ev = evaluate_hierarchical(m, tok, {words});
    ASSERT_EQ(ev.records.size(), wt.size());
    std::vector<nn::Tensor<float>> cache;
    for (std::size_t i = 0; i < wt.size(); ++i) {
      const auto cls = detail::predict_next(m, cache, 0);
      bool ok = true;
      std::size_t credit = 0;
      for (std::size_t k = 0; k <= wt[i].size(); ++k) {
        const auto logits = decode_word(m, cls, std::span<const TokenId>(wt[i].data(), k));
        const TokenId gold = k < wt[i].size() ? wt[i][k] : special::kEow;
        const bool hit = argmax<float>(logits) == gold;
        ok = ok && hit;
        credit += hit;
      }
      EXPECT_EQ(ev.records[i].correct, ok) << "seed " << seed << " word " << i;
      EXPECT_EQ(ev.records[i].chars_correct, credit);
      EXPECT_EQ(ev.records[i].chars, wt[i].size() + 1);
      agree += ev.records[i].correct == ok;
      cache.push_back(detail::encode_one(m, wt[i]));
    }
  }
  EXPECT_EQ(agree, 10 * wt.size());
}

TEST(WordAccuracy, HierarchicalWindowsCoverEveryWordOnce) {
  std::string text;
  for (int i = 0; i < 40; ++i) text += (i % 3 ? "word " : "longer ");
  const std::vector<Document> docs{{"d", text}};
  const auto tok = Tokenizer::build(Scheme::kChar, docs);
  ModelConfig c;
  c.hierarchical = true;
  c.layers = 1;
  c.dim = 8;
  c.heads = 2;
  c.n_cls = 1;
  c.max_word_len = 8;
  c.block_chars = 24;
  c.vocab_size = tok.vocab_size();
  Model<float> m(c, 3);
  const auto ev = evaluate_hierarchical(m, tok, words_of(text));
  ASSERT_EQ(ev.records.size(), 40u);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(ev.records[i].gold, i % 3 ? "word" : "longer");
}

TEST(Report, JsonAndTable) {
  EvalReport r;
  r.model = "eChar";
  r.word_acc = 12.5;
  r.char_acc = 40.0;
  r.words = 8;
  StratifiedAccuracy s;
  s.freq_acc = 50.0;
  s.freq_count = 2;
  r.strata = s;
  const auto j = r.to_json();
  EXPECT_EQ(j["word_acc"], 12.5);
  EXPECT_TRUE(j["rare_acc"].is_null());
  const auto t = r.to_table();
  EXPECT_NE(t.find("Acc (word %)  12.50"), std::string::npos);
  EXPECT_NE(t.find("Rare (%)"), std::string::npos);
}
