#include "memr/rollout.hpp"

#include <algorithm>
#include <string>

#include "memr/error.hpp"

namespace memr {

void RolloutConfig::validate() const {
  require(n >= 1, ErrorCode::InvalidArgument, "rollout: at least one completion per position is required");
  require(tau > 0.0, ErrorCode::Domain, "rollout: temperature must be > 0");
  require(t_max >= 2, ErrorCode::InvalidArgument, "rollout: t_max must be at least 2");
}

Rng rollout_stream(std::uint64_t base, std::size_t t, std::size_t n) { return Rng(derive_seed(base, "rollout", {t, n})); }

double aggregate(std::span<const double> scores, Aggregation how) {
  require(!scores.empty(), ErrorCode::InvalidArgument, "rollout: nothing to aggregate");
  if (how == Aggregation::Max) return *std::max_element(scores.begin(), scores.end());
  double s = 0.0;
  for (double v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

std::vector<RolloutDetail> mc_action_values(const ActorParams& actor, const CriticParams& critic, const HeadSet& heads,
                                            std::span<const Sentence> sentences, const RolloutConfig& config,
                                            std::span<const std::uint64_t> bases) {
  config.validate();
  require(bases.size() == sentences.size(), ErrorCode::InvalidArgument, "rollout: one base seed per sentence required");
  std::vector<std::vector<int>> prefixes;
  std::vector<Rng> streams;
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& s = sentences[b];
    require(!s.empty(), ErrorCode::InvalidArgument, "rollout: sentence " + std::to_string(b) + " is empty");
    require(s.size() <= config.t_max, ErrorCode::InvalidArgument, "rollout: sentence longer than t_max");
    for (std::size_t t = 1; t < s.size(); ++t)
      for (std::size_t n = 0; n < config.n; ++n) {
        prefixes.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(t));
        streams.push_back(rollout_stream(bases[b], t, n));
      }
  }
  std::vector<Sentence> completions = sample_batch(actor, config.tau, config.t_max, prefixes, streams);
  // Whole sentences are scored alongside the completions.
  std::vector<Sentence> to_score = completions;
  to_score.insert(to_score.end(), sentences.begin(), sentences.end());
  const std::vector<double> scores = to_score.empty() ? std::vector<double>{} : critic_scores(critic, to_score, heads, config.t_max);

  std::vector<RolloutDetail> out(sentences.size());
  std::size_t k = 0;
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    auto& d = out[b];
    const std::size_t T = sentences[b].size();
    for (std::size_t t = 1; t < T; ++t) {
      std::vector<Sentence> comp(completions.begin() + static_cast<std::ptrdiff_t>(k),
                                 completions.begin() + static_cast<std::ptrdiff_t>(k + config.n));
      std::vector<double> sc(scores.begin() + static_cast<std::ptrdiff_t>(k),
                             scores.begin() + static_cast<std::ptrdiff_t>(k + config.n));
      d.q.push_back(aggregate(sc, config.aggregate));
      d.completions.push_back(std::move(comp));
      d.scores.push_back(std::move(sc));
      k += config.n;
    }
    d.q.push_back(scores[completions.size() + b]);
  }
  return out;
}

std::vector<double> mc_action_values(const ActorParams& actor, const CriticParams& critic, const HeadSet& heads,
                                     std::span<const int> sentence, const RolloutConfig& config, Rng& rng) {
  const Sentence s(sentence.begin(), sentence.end());
  const std::uint64_t base = rng.next_u64();
  return mc_action_values(actor, critic, heads, std::span<const Sentence>(&s, 1), config,
                          std::span<const std::uint64_t>(&base, 1))
      .front()
      .q;
}

}  // namespace memr
