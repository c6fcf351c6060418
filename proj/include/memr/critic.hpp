#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "memr/corpus.hpp"
#include "memr/numerics.hpp"
#include "memr/rng.hpp"

namespace memr {

struct CriticDims {
  std::size_t vocab = 0;
  std::size_t embed = 32;
  std::size_t width = 64;
  std::size_t layers = 8;
  std::size_t filter = 3;
};

// Layers (1-based) carrying a readout head.
inline constexpr std::size_t kHeadLayers[3] = {3, 5, 8};

// Stack of same-padded convolutions with ReLU; each head max-pools its
// layer over time, then affine -> sigmoid.
class CriticParams {
 public:
  static CriticParams zeros(const CriticDims& dims);
  // He-uniform convolutions; embedding and readouts Uniform(-0.1, 0.1); zero biases.
  static CriticParams init(const CriticDims& dims, Rng& rng);
  static CriticParams from_params(ParamSet params);

  const CriticDims& dims() const noexcept { return dims_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  Tensor& embedding() { return params_.values[0]; }
  Tensor& conv_weight(std::size_t layer) { return params_.values[1 + 2 * (layer - 1)]; }
  Tensor& conv_bias(std::size_t layer) { return params_.values[2 + 2 * (layer - 1)]; }
  // head in 0..2, for kHeadLayers[head].
  Tensor& head_weight(std::size_t head) { return params_.values[1 + 2 * dims_.layers + 2 * head]; }
  Tensor& head_bias(std::size_t head) { return params_.values[2 + 2 * dims_.layers + 2 * head]; }

 private:
  CriticDims dims_;
  ParamSet params_;
};

// Subset of kHeadLayers whose outputs are averaged into the score.
using HeadSet = std::vector<std::size_t>;
HeadSet all_heads();
HeadSet final_head();
void validate_heads(const HeadSet& heads, std::size_t layers);

struct CriticOutput {
  std::vector<double> score;                // mean of the active heads, per sentence
  std::vector<std::vector<double>> heads;   // heads[h][b] for every head
};

// Sentences are padded with PAD to t_max. Each row's score depends only on
// that row.
CriticOutput critic_forward(const CriticParams& params, std::span<const Sentence> sentences, const HeadSet& heads,
                            std::size_t t_max);
std::vector<double> critic_scores(const CriticParams& params, std::span<const Sentence> sentences, const HeadSet& heads,
                                  std::size_t t_max);
double critic_score(const CriticParams& params, std::span<const int> sentence, const HeadSet& heads, std::size_t t_max);

// mean_b (target_b - score_b)^2
LossAndGrads critic_loss(const CriticParams& params, std::span<const Sentence> sentences, std::span<const double> targets,
                         const HeadSet& heads, std::size_t t_max);

// Temperature -> regression target pairs for generated samples; ground truth
// always targets 1.
struct EntropyLadder {
  std::vector<double> tau;
  std::vector<double> target;

  // tau [0.5 .. 1.5] paired with targets decreasing from 0.8 to 0.
  static EntropyLadder standard();
  // Same temperatures with the targets in listed order (0 for tau 0.5).
  static EntropyLadder literal();
  // The single rung (1.0, 0): plain real/fake regression.
  static EntropyLadder collapsed();

  std::size_t size() const noexcept { return tau.size(); }
  // Throws Domain on an unknown temperature.
  double target_for(double t) const;
  // tau > 0 and strictly increasing, targets in [0,1] and strictly monotone.
  void validate() const;
  friend bool operator==(const EntropyLadder&, const EntropyLadder&) = default;
};

inline constexpr double kGroundTruthTarget = 1.0;

struct Provenance {
  bool ground_truth = false;
  double tau = 1.0;
};

std::vector<double> assign_targets(const EntropyLadder& ladder, std::span<const Provenance> batch);

}  // namespace memr
