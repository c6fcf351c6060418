#include <doctest.h>

#include <algorithm>

#include "memr/rollout.hpp"

using namespace memr;

namespace {

struct Fixture {
  ActorParams actor;
  CriticParams critic;
  std::vector<Sentence> sentences;
  Fixture() {
    Rng rng(11);
    actor = ActorParams::init({10, 4, 6}, rng);
    critic = CriticParams::init({10, 4, 6, 8, 3}, rng);
    std::vector<std::vector<int>> prefixes(3);
    std::vector<Rng> streams{Rng(1), Rng(2), Rng(3)};
    sentences = sample_batch(actor, 1.0, 12, prefixes, streams);
  }
};

}  // namespace

TEST_CASE("final position takes the sentence's own score") {
  Fixture f;
  RolloutConfig cfg{4, 12, 1.0, Aggregation::Max};
  const std::vector<std::uint64_t> bases{5, 6, 7};
  const auto d = mc_action_values(f.actor, f.critic, all_heads(), f.sentences, cfg, bases);
  for (std::size_t b = 0; b < f.sentences.size(); ++b) {
    REQUIRE(d[b].q.size() == f.sentences[b].size());
    CHECK(d[b].q.back() == critic_score(f.critic, f.sentences[b], all_heads(), 12));
  }
}

TEST_CASE("single completion gives its score") {
  Fixture f;
  RolloutConfig cfg{1, 12, 1.0, Aggregation::Max};
  const std::vector<std::uint64_t> bases{9, 9, 9};
  const auto d = mc_action_values(f.actor, f.critic, all_heads(), f.sentences, cfg, bases);
  for (const auto& r : d)
    for (std::size_t t = 0; t + 1 < r.q.size(); ++t) CHECK(r.q[t] == r.scores[t][0]);
}

TEST_CASE("max over four completions matches an explicit loop") {
  Fixture f;
  RolloutConfig cfg{4, 12, 1.0, Aggregation::Max};
  const std::uint64_t base = 1234;
  const Sentence& s = f.sentences[0];
  const auto d = mc_action_values(f.actor, f.critic, final_head(), std::vector<Sentence>{s}, cfg,
                                  std::vector<std::uint64_t>{base});
  for (std::size_t t = 1; t < s.size(); ++t) {
    double best = -1;
    for (std::size_t n = 0; n < 4; ++n) {
      Rng rng = rollout_stream(base, t, n);
      const auto completion = sample_sequence(f.actor, 1.0, 12, std::span<const int>(s.data(), t), rng);
      CHECK(completion == d[0].completions[t - 1][n]);
      best = std::max(best, critic_score(f.critic, completion, final_head(), 12));
    }
    CHECK(d[0].q[t - 1] == best);
  }
}

TEST_CASE("max aggregation dominates mean on shared completions") {
  Fixture f;
  const std::vector<std::uint64_t> bases{21, 22, 23};
  const auto mx = mc_action_values(f.actor, f.critic, all_heads(), f.sentences, {4, 12, 1.0, Aggregation::Max}, bases);
  const auto mn = mc_action_values(f.actor, f.critic, all_heads(), f.sentences, {4, 12, 1.0, Aggregation::Mean}, bases);
  for (std::size_t b = 0; b < f.sentences.size(); ++b) {
    CHECK(mx[b].completions == mn[b].completions);
    for (std::size_t t = 0; t < mx[b].q.size(); ++t) CHECK(mx[b].q[t] >= mn[b].q[t]);
    CHECK(mx[b].q.back() == mn[b].q.back());
  }
}

TEST_CASE("single-sentence form is reproducible") {
  Fixture f;
  Rng r1(4), r2(4);
  RolloutConfig cfg;
  cfg.t_max = 12;
  CHECK(mc_action_values(f.actor, f.critic, all_heads(), f.sentences[1], cfg, r1) ==
        mc_action_values(f.actor, f.critic, all_heads(), f.sentences[1], cfg, r2));
}
