#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "memr/corpus.hpp"
#include "memr/numerics.hpp"
#include "memr/rng.hpp"

namespace memr {

struct ActorDims {
  std::size_t vocab = 0;
  std::size_t embed = 32;
  std::size_t hidden = 256;
};

// Single-layer LSTM language model. Gate weights act on [embedding, h].
class ActorParams {
 public:
  enum Slot : std::size_t {
    kEmbedding,
    kWInput,
    kWForget,
    kWCell,
    kWOutput,
    kBInput,
    kBForget,
    kBCell,
    kBOutput,
    kWProj,
    kBProj,
    kSlotCount
  };

  static ActorParams zeros(const ActorDims& dims);
  // Uniform(-0.1, 0.1) weights, zero biases except forget gate bias 1.
  static ActorParams init(const ActorDims& dims, Rng& rng);
  // Validates names (prefixed `actor.`) and shapes.
  static ActorParams from_params(ParamSet params);

  const ActorDims& dims() const noexcept { return dims_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const Tensor& operator[](Slot s) const { return params_.values[s]; }
  Tensor& operator[](Slot s) { return params_.values[s]; }

 private:
  ActorDims dims_;
  ParamSet params_;
};

struct ActorState {
  std::vector<double> h;
  std::vector<double> c;
  std::size_t t = 0;
};

ActorState initial_state(const ActorParams& params);

struct StepResult {
  std::vector<double> logits;
  ActorState next;
};

StepResult step(const ActorParams& params, int token, const ActorState& state);

// Ids excluded when sampling: PAD, BOS, UNK.
bool masked_at_sampling(int id);

// Tokens after the implicit BOS: the prefix verbatim, then samples from
// softmax(logits / tau) with PAD/BOS/UNK masked, until EOS or t_max tokens.
Sentence sample_sequence(const ActorParams& params, double tau, std::size_t t_max, std::span<const int> prefix, Rng& rng);

// Row r is sampled exactly as sample_sequence(prefixes[r], rngs[r]) would.
std::vector<Sentence> sample_batch(const ActorParams& params, double tau, std::size_t t_max,
                                   std::span<const std::vector<int>> prefixes, std::span<Rng> rngs);

// log pi(sentence) at temperature tau; with `masked`, under the sampling
// distribution (PAD/BOS/UNK removed).
double sequence_log_prob(const ActorParams& params, std::span<const int> sentence, double tau = 1.0, bool masked = false);

// Mean per-token cross entropy over non-PAD positions.
LossAndGrads teacher_forcing_loss(const ActorParams& params, std::span<const Sentence> batch);

struct ScheduledSamplingResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
  // inputs[b][t]: token fed at step t (BOS at t = 0).
  std::vector<std::vector<int>> inputs;
};

// Each input after BOS is the model's sampled previous prediction with
// probability p, else the ground truth. p = 0 is teacher forcing.
ScheduledSamplingResult scheduled_sampling_loss(const ActorParams& params, std::span<const Sentence> batch, double p,
                                                Rng& rng);

// -(1/B) sum_b sum_t q[b][t] * log pi(x_bt | h_bt); q is held constant.
LossAndGrads policy_gradient_loss(const ActorParams& params, std::span<const Sentence> sentences,
                                  std::span<const std::vector<double>> q);

// exp(mean per-token cross entropy), EOS included.
double perplexity(const ActorParams& params, std::span<const Sentence> sentences);

// Exact LSTM realisation of a first-order grammar (transitions depend on the
// current symbol only): one-hot embeddings, hidden = vocab, saturated gates.
ActorParams distill_first_order(const OracleGrammar& grammar, const Vocabulary& vocab);

}  // namespace memr
