#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memr/rng.hpp"

namespace memr {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedIds = 4;

// Token ids, EOS-terminated for data sentences. BOS is implicit.
using Sentence = std::vector<int>;

class Vocabulary {
 public:
  Vocabulary();
  // Reserved tokens are prepended; `tokens` must be unique and not reserved.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  // UNK when absent.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Whitespace-tokenized lines; ordering by count desc then lexicographic.
// Tokens seen fewer than min_count times are left out (they encode to UNK).
Vocabulary build_vocab(std::span<const std::string> lines, std::size_t min_count);

std::vector<std::string> split_tokens(std::string_view line);

enum class Split { Train, Valid, Test };
std::string_view split_name(Split s);

struct Corpus {
  std::vector<Sentence> sentences;
  Split split = Split::Train;

  std::size_t size() const noexcept { return sentences.size(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class UnknownTokens { Error, MapToUnk };

Sentence encode(const Vocabulary& vocab, std::string_view line, UnknownTokens policy = UnknownTokens::Error);
// Surface tokens joined by single spaces; stops at EOS, skips PAD/BOS.
std::string decode(const Vocabulary& vocab, std::span<const int> sentence);
// Tokens up to (excluding) the first EOS, without PAD/BOS.
std::vector<int> surface(std::span<const int> sentence);

// Raw lines of a corpus file: CR stripped, trailing newline optional. Empty
// files and blank lines are errors.
std::vector<std::string> read_lines(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, Split split,
                   UnknownTokens policy = UnknownTokens::Error);
void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::filesystem::path& path);

// Order-2 Markov chain over an alphabet of A symbols. Context index for the
// pair (prev, cur) is (prev + 1) * A + cur, where prev = -1 marks sentence
// start. The first symbol comes from `initial`; after each emitted symbol the
// sentence stops with probability stop[ctx], else continues with
// transitions[ctx]. Sentences never exceed t_max - 1 symbols (plus EOS);
// sampling resamples on overflow.
class OracleGrammar {
 public:
  OracleGrammar(std::vector<std::string> alphabet, std::vector<double> initial, std::vector<double> transitions,
                std::vector<double> stop, std::size_t t_max, std::uint64_t seed = 0);

  // Transitions and stop depend only on the current symbol.
  static OracleGrammar first_order(std::vector<std::string> alphabet, std::vector<double> initial,
                                   const std::vector<std::vector<double>>& transitions, std::vector<double> stop,
                                   std::size_t t_max);

  std::size_t alphabet_size() const noexcept { return alphabet_.size(); }
  const std::vector<std::string>& alphabet() const noexcept { return alphabet_; }
  std::size_t t_max() const noexcept { return t_max_; }
  std::size_t max_symbols() const noexcept { return t_max_ - 1; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t context_count() const noexcept { return (alphabet_.size() + 1) * alphabet_.size(); }
  std::size_t context(int prev, int cur) const;

  std::span<const double> initial() const noexcept { return initial_; }
  std::span<const double> next(std::size_t ctx) const;
  double stop(std::size_t ctx) const { return stop_.at(ctx); }
  std::optional<int> symbol(std::string_view token) const;

  bool is_first_order() const;
  // Every distribution sums to 1 within 1e-12, all entries in [0,1].
  void validate() const;

  // Reserved ids followed by the alphabet in symbol order.
  Vocabulary vocabulary() const;

  void save(const std::filesystem::path& path) const;
  static OracleGrammar load(const std::filesystem::path& path);

  friend bool operator==(const OracleGrammar&, const OracleGrammar&) = default;

 private:
  std::vector<std::string> alphabet_;
  std::vector<double> initial_;
  std::vector<double> transitions_;
  std::vector<double> stop_;
  std::size_t t_max_ = 32;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, int> index_;
};

struct DeskGrammarOptions {
  std::size_t alphabet = 50;
  std::size_t groups = 5;
  double stay = 0.75;        // probability of staying in the current phase group
  double final_stop = 0.25;  // stop probability inside the last group
  double stop_leak = 0.002;  // stop probability elsewhere
  double leak = 0.01;        // mass spread uniformly over every symbol
  double concentration = 0.5;
  std::size_t t_max = 32;
};

// Phase-structured grammar: symbols are split into ordered groups, a sentence
// walks the groups left to right and mostly stops from the last one. Next
// symbol weights are drawn per (prev, cur) context, so both previous symbols
// matter.
OracleGrammar random_desk_grammar(const DeskGrammarOptions& options, std::uint64_t seed);

// Samples one sentence as symbols (no EOS), resampling on overflow.
std::vector<int> sample_symbols(const OracleGrammar& grammar, Rng& rng);

// n sentences in the grammar's vocabulary id space, EOS-terminated.
Corpus synth_generate(const OracleGrammar& grammar, std::size_t n, std::uint64_t seed, Split split = Split::Train);

struct CorpusSplits {
  Corpus train, valid, test;
};

// Generates the three splits with no sentence shared between splits.
CorpusSplits synth_splits(const OracleGrammar& grammar, std::size_t n_train, std::size_t n_valid, std::size_t n_test,
                          std::uint64_t seed);

// Natural-log probability of an EOS-terminated sentence in the grammar's
// vocabulary id space under the untruncated chain (stop event included).
double oracle_logprob(const OracleGrammar& grammar, std::span<const int> sentence);
double oracle_logprob_symbols(const OracleGrammar& grammar, std::span<const int> symbols);

// Exact quantities of the length-truncated distribution, by dynamic
// programming over contexts.
struct GrammarStats {
  double z = 0.0;                       // P(length <= max_symbols) under the chain
  std::vector<double> symbol_counts;    // E[count of symbol] per sentence
  double expected_symbols = 0.0;        // E[surface length]
  double expected_logprob = 0.0;        // E[oracle_logprob]
  double entropy_per_sentence = 0.0;    // -(E[oracle_logprob] - log z)
  double entropy_rate = 0.0;            // per token, EOS included
};

GrammarStats grammar_stats(const OracleGrammar& grammar);

struct SyntheticCorpusOptions {
  DeskGrammarOptions grammar;
  std::size_t n_train = 10000;
  std::size_t n_valid = 2000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 0;
};

// Writes train.txt, valid.txt, test.txt, grammar.json and corpus.json into an
// existing directory.
void write_synthetic_corpus(const SyntheticCorpusOptions& options, const std::filesystem::path& dir);

}  // namespace memr
