#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "memr/actor.hpp"
#include "memr/critic.hpp"

namespace memr {

enum class Aggregation { Max, Mean };

struct RolloutConfig {
  std::size_t n = 4;
  std::size_t t_max = 32;
  double tau = 1.0;
  Aggregation aggregate = Aggregation::Max;

  void validate() const;
};

// Random stream for completion n of the prefix ending at position t (1-based)
// of one sentence.
Rng rollout_stream(std::uint64_t base, std::size_t t, std::size_t n);

struct RolloutDetail {
  std::vector<double> q;                              // one value per token
  std::vector<std::vector<Sentence>> completions;     // [t-1][n] for t < T
  std::vector<std::vector<double>> scores;            // critic score of each completion
};

double aggregate(std::span<const double> scores, Aggregation how);

// Action values for every token of each sentence. For t < T the prefix
// X_1..X_t is completed config.n times by the actor at config.tau and the
// critic scores are aggregated; the last token gets the critic score of the
// sentence itself. bases[b] seeds sentence b's streams.
std::vector<RolloutDetail> mc_action_values(const ActorParams& actor, const CriticParams& critic, const HeadSet& heads,
                                            std::span<const Sentence> sentences, const RolloutConfig& config,
                                            std::span<const std::uint64_t> bases);

// Single-sentence form drawing the base from rng.
std::vector<double> mc_action_values(const ActorParams& actor, const CriticParams& critic, const HeadSet& heads,
                                     std::span<const int> sentence, const RolloutConfig& config, Rng& rng);

}  // namespace memr
