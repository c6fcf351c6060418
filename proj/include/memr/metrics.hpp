#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "memr/actor.hpp"
#include "memr/corpus.hpp"

namespace memr {

// Surface token sequences (no BOS/EOS/PAD).
using Tokens = std::vector<int>;

std::vector<Tokens> surfaces(std::span<const Sentence> sentences);

struct NgramHash {
  std::size_t operator()(const std::vector<int>& g) const noexcept;
};

// Every reference sentence pooled into one multi-reference set: for each
// n-gram the largest count found in any single reference, plus the sorted
// reference lengths for the brevity penalty.
class BleuReferences {
 public:
  BleuReferences(std::span<const Tokens> references, std::size_t max_order);

  std::size_t max_order() const noexcept { return max_order_; }
  std::size_t size() const noexcept { return count_; }
  std::size_t max_count(const std::vector<int>& ngram) const;
  // Closest reference length; ties go to the shorter one.
  std::size_t closest_length(std::size_t length) const;

 private:
  std::size_t max_order_;
  std::size_t count_ = 0;
  std::unordered_map<std::vector<int>, std::size_t, NgramHash> max_counts_;
  std::vector<std::size_t> lengths_;
};

// Sufficient statistics of one candidate.
struct BleuStats {
  std::vector<std::size_t> clipped;  // per order 1..n
  std::vector<std::size_t> total;
  std::size_t length = 0;
  std::size_t ref_length = 0;
};

BleuStats candidate_stats(const BleuReferences& refs, const Tokens& candidate);

struct BleuResult {
  double score = 0.0;
  // n exceeded every candidate's length.
  bool too_short = false;
};

// Corpus BLEU from summed statistics of the selected candidates (all when
// `pick` is empty). No smoothing: any zero clipped count gives 0.
BleuResult combine_bleu(std::span<const BleuStats> stats, std::size_t n, std::span<const std::size_t> pick = {});

BleuResult corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, std::size_t n);

double bleu_f(std::span<const Tokens> samples, std::span<const Tokens> test, std::size_t n);
double bleu_b(std::span<const Tokens> test, std::span<const Tokens> samples, std::size_t n);
double bleu_ha(double f, double b);

struct BleuReport {
  std::size_t n = 5;
  double bleu_f = 0.0;
  double bleu_b = 0.0;
  double bleu_ha = 0.0;
  double se_f = 0.0;
  double se_b = 0.0;
  std::size_t samples = 0;
  std::size_t references = 0;
  std::uint64_t seed = 0;
  bool too_short = false;
};

// bootstrap = 0 skips the standard errors.
BleuReport bleu_report(std::span<const Tokens> samples, std::span<const Tokens> test, std::size_t n, std::uint64_t seed,
                       std::size_t bootstrap = 0);

std::string bleu_report_json(const BleuReport& r);
// Columns: metric,n,value,stderr,samples,references,seed
void write_bleu_csv(const BleuReport& r, const std::filesystem::path& path);

// Unique n-grams over total n-grams across all samples; 0 when there are none.
double distinct_n(std::span<const Tokens> samples, std::size_t n);

enum class KlDirection { Forward, Reverse };

struct KlEstimate {
  KlDirection direction = KlDirection::Forward;
  double value = 0.0;
  double se = 0.0;
  std::size_t m = 0;
  std::size_t floored = 0;  // samples whose oracle log-probability was floored
};

struct KlOptions {
  std::size_t m = 1000;
  double floor = -80.0;
};

// Per-sentence KL between the length-truncated oracle distribution and the
// actor's sampling distribution at temperature 1. Tokens are matched between
// the actor vocabulary and the grammar alphabet by surface form.
KlEstimate oracle_kl(const OracleGrammar& grammar, const ActorParams& actor, const Vocabulary& actor_vocab,
                     KlDirection direction, const KlOptions& options, std::uint64_t seed);

std::string kl_json(const KlEstimate& e);

}  // namespace memr
