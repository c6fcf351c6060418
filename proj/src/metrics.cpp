#include "memr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "memr/error.hpp"

namespace memr {

std::vector<Tokens> surfaces(std::span<const Sentence> sentences) {
  std::vector<Tokens> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(surface(s));
  return out;
}

std::size_t NgramHash::operator()(const std::vector<int>& g) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int x : g) {
    h ^= static_cast<std::uint32_t>(x);
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

namespace {

std::unordered_map<std::vector<int>, std::size_t, NgramHash> count_ngrams(const Tokens& s, std::size_t k) {
  std::unordered_map<std::vector<int>, std::size_t, NgramHash> counts;
  for (std::size_t i = 0; i + k <= s.size(); ++i) ++counts[std::vector<int>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                                            s.begin() + static_cast<std::ptrdiff_t>(i + k))];
  return counts;
}

}  // namespace

BleuReferences::BleuReferences(std::span<const Tokens> references, std::size_t max_order) : max_order_(max_order) {
  require(!references.empty(), ErrorCode::InvalidArgument, "bleu: reference corpus is empty");
  require(max_order >= 1, ErrorCode::InvalidArgument, "bleu: n-gram order must be >= 1");
  count_ = references.size();
  for (const auto& r : references) {
    lengths_.push_back(r.size());
    for (std::size_t k = 1; k <= max_order; ++k)
      for (const auto& [g, c] : count_ngrams(r, k)) {
        auto& slot = max_counts_[g];
        slot = std::max(slot, c);
      }
  }
  std::sort(lengths_.begin(), lengths_.end());
}

std::size_t BleuReferences::max_count(const std::vector<int>& ngram) const {
  auto it = max_counts_.find(ngram);
  return it == max_counts_.end() ? 0 : it->second;
}

std::size_t BleuReferences::closest_length(std::size_t length) const {
  auto it = std::lower_bound(lengths_.begin(), lengths_.end(), length);
  if (it == lengths_.end()) return lengths_.back();
  if (*it == length || it == lengths_.begin()) return *it;
  const std::size_t above = *it, below = *(it - 1);
  return (length - below) <= (above - length) ? below : above;
}

BleuStats candidate_stats(const BleuReferences& refs, const Tokens& candidate) {
  BleuStats s;
  const std::size_t n = refs.max_order();
  s.clipped.assign(n, 0);
  s.total.assign(n, 0);
  s.length = candidate.size();
  s.ref_length = refs.closest_length(candidate.size());
  for (std::size_t k = 1; k <= n; ++k) {
    if (candidate.size() < k) continue;
    s.total[k - 1] = candidate.size() - k + 1;
    for (const auto& [g, c] : count_ngrams(candidate, k)) s.clipped[k - 1] += std::min(c, refs.max_count(g));
  }
  return s;
}

BleuResult combine_bleu(std::span<const BleuStats> stats, std::size_t n, std::span<const std::size_t> pick) {
  require(!stats.empty(), ErrorCode::InvalidArgument, "bleu: candidate corpus is empty");
  require(n >= 1 && n <= stats.front().total.size(), ErrorCode::InvalidArgument, "bleu: order exceeds collected statistics");
  std::vector<double> clipped(n, 0.0), total(n, 0.0);
  double c = 0.0, r = 0.0;
  auto add = [&](const BleuStats& s) {
    for (std::size_t k = 0; k < n; ++k) {
      clipped[k] += static_cast<double>(s.clipped[k]);
      total[k] += static_cast<double>(s.total[k]);
    }
    c += static_cast<double>(s.length);
    r += static_cast<double>(s.ref_length);
  };
  if (pick.empty())
    for (const auto& s : stats) add(s);
  else
    for (std::size_t i : pick) add(stats[i]);

  BleuResult res;
  if (total[n - 1] == 0.0) {
    res.too_short = true;
    return res;
  }
  double log_p = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (clipped[k] == 0.0) return res;
    log_p += std::log(clipped[k] / total[k]);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  res.score = bp * std::exp(log_p / static_cast<double>(n));
  return res;
}

BleuResult corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, std::size_t n) {
  require(!candidates.empty(), ErrorCode::InvalidArgument, "bleu: candidate corpus is empty");
  const BleuReferences refs(references, n);
  std::vector<BleuStats> stats;
  stats.reserve(candidates.size());
  for (const auto& c : candidates) stats.push_back(candidate_stats(refs, c));
  return combine_bleu(stats, n);
}

double bleu_f(std::span<const Tokens> samples, std::span<const Tokens> test, std::size_t n) {
  return corpus_bleu(samples, test, n).score;
}

double bleu_b(std::span<const Tokens> test, std::span<const Tokens> samples, std::size_t n) {
  return corpus_bleu(test, samples, n).score;
}

double bleu_ha(double f, double b) { return f + b > 0.0 ? 2.0 * f * b / (f + b) : 0.0; }

namespace {

struct SideStats {
  double score = 0.0;
  double se = 0.0;
  bool too_short = false;
};

SideStats scored_side(std::span<const Tokens> candidates, std::span<const Tokens> references, std::size_t n, Rng& rng,
                      std::size_t bootstrap) {
  const BleuReferences refs(references, n);
  std::vector<BleuStats> stats;
  stats.reserve(candidates.size());
  for (const auto& c : candidates) stats.push_back(candidate_stats(refs, c));
  const auto full = combine_bleu(stats, n);
  SideStats out{full.score, 0.0, full.too_short};
  if (bootstrap < 2) return out;
  std::vector<std::size_t> pick(stats.size());
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t r = 0; r < bootstrap; ++r) {
    for (auto& i : pick) i = rng.below(stats.size());
    const double v = combine_bleu(stats, n, pick).score;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / static_cast<double>(bootstrap);
  out.se = std::sqrt(std::max(0.0, (sum2 - bootstrap * mean * mean) / static_cast<double>(bootstrap - 1)));
  return out;
}

}  // namespace

BleuReport bleu_report(std::span<const Tokens> samples, std::span<const Tokens> test, std::size_t n, std::uint64_t seed,
                       std::size_t bootstrap) {
  Rng rf(derive_seed(seed, "bleu-bootstrap-f")), rb(derive_seed(seed, "bleu-bootstrap-b"));
  const auto f = scored_side(samples, test, n, rf, bootstrap);
  const auto b = scored_side(test, samples, n, rb, bootstrap);
  BleuReport r;
  r.n = n;
  r.bleu_f = f.score;
  r.bleu_b = b.score;
  r.bleu_ha = bleu_ha(f.score, b.score);
  r.se_f = f.se;
  r.se_b = b.se;
  r.samples = samples.size();
  r.references = test.size();
  r.seed = seed;
  r.too_short = f.too_short || b.too_short;
  return r;
}

std::string bleu_report_json(const BleuReport& r) {
  nlohmann::json j{{"n", r.n},         {"bleu_f", r.bleu_f},   {"bleu_b", r.bleu_b},
                   {"bleu_ha", r.bleu_ha}, {"stderr_f", r.se_f}, {"stderr_b", r.se_b},
                   {"samples", r.samples}, {"references", r.references}, {"seed", r.seed},
                   {"too_short", r.too_short}};
  return j.dump(2);
}

void write_bleu_csv(const BleuReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  char buf[256];
  out << "metric,n,value,stderr,samples,references,seed\n";
  auto row = [&](const char* name, double v, double se) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%zu,%zu,%llu\n", name, r.n, v, se, r.samples, r.references,
                  static_cast<unsigned long long>(r.seed));
    out << buf;
  };
  row("bleu_f", r.bleu_f, r.se_f);
  row("bleu_b", r.bleu_b, r.se_b);
  row("bleu_ha", r.bleu_ha, 0.0);
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + path.string());
}

double distinct_n(std::span<const Tokens> samples, std::size_t n) {
  require(n >= 1, ErrorCode::InvalidArgument, "distinct_n: n must be >= 1");
  std::set<std::vector<int>> unique;
  std::size_t total = 0;
  for (const auto& s : samples)
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      unique.emplace(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

KlEstimate oracle_kl(const OracleGrammar& grammar, const ActorParams& actor, const Vocabulary& actor_vocab,
                     KlDirection direction, const KlOptions& options, std::uint64_t seed) {
  require(options.m >= 100, ErrorCode::InvalidArgument,
          "oracle_kl: at least 100 samples are required, got " + std::to_string(options.m));
  require(actor_vocab.size() == actor.dims().vocab, ErrorCode::InvalidArgument,
          "oracle_kl: vocabulary size does not match the actor");
  const double log_z = std::log(grammar_stats(grammar).z);
  const std::size_t A = grammar.alphabet_size();
  std::vector<int> to_actor(A, kUnk);
  for (std::size_t s = 0; s < A; ++s) to_actor[s] = actor_vocab.find(grammar.alphabet()[s]).value_or(kUnk);

  KlEstimate e;
  e.direction = direction;
  e.m = options.m;
  auto floored = [&](double lp) {
    if (std::isfinite(lp) && lp >= options.floor) return lp;
    ++e.floored;
    return options.floor;
  };
  std::vector<double> d;
  d.reserve(options.m);
  if (direction == KlDirection::Forward) {
    Rng rng(derive_seed(seed, "kl-forward"));
    for (std::size_t i = 0; i < options.m; ++i) {
      const auto symbols = sample_symbols(grammar, rng);
      const double lp = oracle_logprob_symbols(grammar, symbols) - log_z;
      Sentence s;
      for (int x : symbols) s.push_back(to_actor[static_cast<std::size_t>(x)]);
      s.push_back(kEos);
      d.push_back(lp - floored(sequence_log_prob(actor, s, 1.0, true)));
    }
  } else {
    Rng rng(derive_seed(seed, "kl-reverse"));
    for (std::size_t i = 0; i < options.m; ++i) {
      const Sentence s = sample_sequence(actor, 1.0, grammar.t_max(), {}, rng);
      const double lq = sequence_log_prob(actor, s, 1.0, true);
      double lp = -std::numeric_limits<double>::infinity();
      if (!s.empty() && s.back() == kEos && s.size() >= 2) {
        std::vector<int> symbols;
        bool in_alphabet = true;
        for (std::size_t t = 0; t + 1 < s.size() && in_alphabet; ++t) {
          auto sym = grammar.symbol(actor_vocab.token(s[t]));
          in_alphabet = sym.has_value();
          if (in_alphabet) symbols.push_back(*sym);
        }
        if (in_alphabet) lp = oracle_logprob_symbols(grammar, symbols) - log_z;
      }
      d.push_back(lq - floored(lp));
    }
  }
  double sum = 0.0;
  for (double v : d) sum += v;
  e.value = sum / static_cast<double>(d.size());
  double ss = 0.0;
  for (double v : d) ss += (v - e.value) * (v - e.value);
  e.se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  return e;
}

std::string kl_json(const KlEstimate& e) {
  nlohmann::json j{{"direction", e.direction == KlDirection::Forward ? "forward" : "reverse"},
                   {"value", e.value},
                   {"stderr", e.se},
                   {"m", e.m},
                   {"floored", e.floored}};
  return j.dump(2);
}

}  // namespace memr
