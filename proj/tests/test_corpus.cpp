#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "memr/corpus.hpp"
#include "memr/error.hpp"
#include "memr/rng.hpp"
#include "support.hpp"

using namespace memr;

namespace {

void write(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

// Chain-rule product written directly from the grammar's tables.
double brute_logprob(const OracleGrammar& g, const std::vector<int>& symbols) {
  double lp = std::log(g.initial()[symbols[0]]);
  int prev = -1;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const std::size_t ctx = (prev + 1) * g.alphabet_size() + symbols[i];
    if (i + 1 == symbols.size()) {
      lp += std::log(g.stop(ctx));
    } else {
      lp += std::log(1.0 - g.stop(ctx)) + std::log(g.next(ctx)[symbols[i + 1]]);
    }
    prev = symbols[i];
  }
  return lp;
}

}  // namespace

TEST_CASE("build_vocab") {
  const std::vector<std::string> lines{"a b", "a c"};
  const Vocabulary v = build_vocab(lines, 1);
  CHECK(v.size() == 7);
  CHECK(v.token(kPad) == "<pad>");
  CHECK(v.id("a") == 4);
  CHECK(v.find("b").has_value());
  const Vocabulary v2 = build_vocab(lines, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id("b") == kUnk);
  CHECK(encode(v2, "a c", UnknownTokens::MapToUnk) == Sentence{4, kUnk, kEos});
  CHECK_THROWS_AS(encode(v2, "a c"), Error);
}

TEST_CASE("grammar sample vocabulary covers the alphabet") {
  const OracleGrammar g = random_desk_grammar({}, 11);
  const Corpus c = synth_generate(g, 1000, 2);
  std::vector<std::string> lines;
  for (const auto& s : c.sentences) lines.push_back(decode(g.vocabulary(), s));
  CHECK(build_vocab(lines, 1).size() == kReservedIds + g.alphabet_size());
}

TEST_CASE("degenerate grammar yields its unique sentence") {
  const auto g = OracleGrammar::first_order({"x", "y"}, {1, 0}, {{0, 1}, {1, 0}}, {0, 1}, 8);
  const Corpus c = synth_generate(g, 1, 5);
  REQUIRE(c.size() == 1);
  CHECK(decode(g.vocabulary(), c.sentences[0]) == "x y");
  CHECK(oracle_logprob(g, c.sentences[0]) == 0.0);
}

TEST_CASE("synthetic corpora are deterministic and disjoint across splits") {
  const OracleGrammar g = random_desk_grammar({}, 3);
  CHECK(synth_generate(g, 50, 8) == synth_generate(g, 50, 8));
  const auto s = synth_splits(g, 300, 100, 100, 4);
  std::set<Sentence> train(s.train.sentences.begin(), s.train.sentences.end());
  for (const auto* split : {&s.valid, &s.test})
    for (const auto& x : split->sentences) CHECK(train.count(x) == 0);
}

TEST_CASE("unigram frequencies match the exact grammar marginals") {
  DeskGrammarOptions opts;
  opts.alphabet = 50;
  const OracleGrammar g = random_desk_grammar(opts, 7);
  const GrammarStats st = grammar_stats(g);
  const std::size_t n = 10000;
  const Corpus c = synth_generate(g, n, 7);
  const std::size_t A = g.alphabet_size();
  std::vector<double> sum(A, 0.0), sumsq(A, 0.0);
  for (const auto& s : c.sentences) {
    std::vector<double> cnt(A, 0.0);
    for (int id : surface(s)) cnt[id - kReservedIds] += 1;
    for (std::size_t a = 0; a < A; ++a) {
      sum[a] += cnt[a];
      sumsq[a] += cnt[a] * cnt[a];
    }
  }
  // Sentences are independent, symbols within one are not: the per-sentence
  // count is the sampling unit.
  for (std::size_t a = 0; a < A; ++a) {
    const double mean = sum[a] / n;
    const double var = sumsq[a] / n - mean * mean;
    const double se = std::sqrt(var / n);
    INFO("symbol " << a);
    CHECK(std::abs(mean - st.symbol_counts[a]) <= 3 * se + 1e-12);
  }
}

TEST_CASE("oracle log-probability") {
  SUBCASE("uniform chain with constant stop") {
    const std::size_t k = 4;
    const double stop = 0.3;
    std::vector<std::vector<double>> tr(k, std::vector<double>(k, 1.0 / k));
    const auto g = OracleGrammar::first_order({"a", "b", "c", "d"}, std::vector<double>(k, 1.0 / k), tr,
                                              std::vector<double>(k, stop), 16);
    const Sentence s = encode(g.vocabulary(), "a c c b d");
    const double L = 5;
    CHECK(oracle_logprob(g, s) == doctest::Approx(-L * std::log(k) + (L - 1) * std::log(1 - stop) + std::log(stop)).epsilon(1e-14));
  }
  SUBCASE("random grammar against the chain-rule product") {
    const OracleGrammar g = random_desk_grammar({}, 21);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto sym = sample_symbols(g, rng);
      Sentence s;
      for (int x : sym) s.push_back(x + kReservedIds);
      s.push_back(kEos);
      CHECK(std::abs(oracle_logprob(g, s) - brute_logprob(g, sym)) < 1e-12);
    }
  }
}

TEST_CASE("corpus files") {
  test::TempDir dir("corpus");
  const Vocabulary v = Vocabulary::from_tokens({"a", "b", "c"});
  Corpus c;
  c.sentences = {encode(v, "a b"), encode(v, "c"), encode(v, "b b a c")};
  save_corpus(c, v, dir / "c.txt");
  CHECK(load_corpus(dir / "c.txt", v, Split::Train) == c);

  write(dir / "with.txt", "a b\nc\n");
  write(dir / "without.txt", "a b\nc");
  CHECK(load_corpus(dir / "with.txt", v, Split::Train) == load_corpus(dir / "without.txt", v, Split::Train));

  write(dir / "empty.txt", "");
  CHECK_THROWS_AS(load_corpus(dir / "empty.txt", v, Split::Train), Error);
  CHECK_THROWS_AS(load_corpus(dir / "nope.txt", v, Split::Train), Error);
}

TEST_CASE("grammar save and load") {
  test::TempDir dir("grammar");
  const OracleGrammar g = random_desk_grammar({}, 2);
  g.save(dir / "g.json");
  CHECK(OracleGrammar::load(dir / "g.json") == g);
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("grammar statistics of the toy chain") {
  const auto g = test::toy_grammar(40);
  const auto st = grammar_stats(g);
  CHECK(st.z == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(st.entropy_per_sentence > 0);
  Rng rng(1);
  double len = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) len += sample_symbols(g, rng).size();
  CHECK(len / n == doctest::Approx(st.expected_symbols).epsilon(0.03));
}
