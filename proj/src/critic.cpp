#include "memr/critic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "memr/error.hpp"

namespace memr {

namespace {

std::vector<std::pair<std::string, Shape>> layout(const CriticDims& d) {
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("critic.embedding", Shape{d.vocab, d.embed});
  for (std::size_t l = 1; l <= d.layers; ++l) {
    const std::size_t cin = l == 1 ? d.embed : d.width;
    out.emplace_back("critic.conv" + std::to_string(l) + ".w", Shape{d.filter, cin, d.width});
    out.emplace_back("critic.conv" + std::to_string(l) + ".b", Shape{d.width});
  }
  for (std::size_t layer : kHeadLayers) {
    out.emplace_back("critic.head" + std::to_string(layer) + ".w", Shape{d.width, 1});
    out.emplace_back("critic.head" + std::to_string(layer) + ".b", Shape{1});
  }
  return out;
}

std::size_t head_index(std::size_t layer) {
  for (std::size_t h = 0; h < 3; ++h)
    if (kHeadLayers[h] == layer) return h;
  fail(ErrorCode::InvalidArgument, "critic: no head at layer " + std::to_string(layer));
}

struct Graph {
  std::vector<Var> params;
  Var score;
  Var heads[3];
};

Graph build(Tape& tape, const CriticParams& p, std::span<const Sentence> sentences, const HeadSet& heads,
            std::size_t t_max) {
  validate_heads(heads, p.dims().layers);
  const std::size_t B = sentences.size();
  require(B > 0, ErrorCode::InvalidArgument, "critic: empty batch");
  std::vector<int> ids(B * t_max, kPad);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = sentences[b];
    require(!s.empty(), ErrorCode::InvalidArgument, "critic: sentence " + std::to_string(b) + " is empty");
    require(s.size() <= t_max, ErrorCode::InvalidArgument,
            "critic: sentence " + std::to_string(b) + " has " + std::to_string(s.size()) + " tokens, above t_max " +
                std::to_string(t_max));
    std::copy(s.begin(), s.end(), ids.begin() + static_cast<std::ptrdiff_t>(b * t_max));
  }

  Graph g;
  for (const auto& t : p.params().values) g.params.push_back(tape.leaf(t));
  const std::size_t L = p.dims().layers;
  Var x = tape.embedding(g.params[0], std::move(ids), {B, t_max});
  for (std::size_t l = 1; l <= L; ++l) {
    x = tape.relu(tape.conv1d(x, g.params[1 + 2 * (l - 1)], g.params[2 + 2 * (l - 1)]));
    for (std::size_t h = 0; h < 3; ++h) {
      if (kHeadLayers[h] != l) continue;
      Var pooled = tape.max_pool_time(x);
      g.heads[h] = tape.sigmoid(tape.add(tape.matmul(pooled, g.params[1 + 2 * L + 2 * h]), g.params[2 + 2 * L + 2 * h]));
    }
  }
  Var sum = g.heads[head_index(heads[0])];
  for (std::size_t i = 1; i < heads.size(); ++i) sum = tape.add(sum, g.heads[head_index(heads[i])]);
  g.score = heads.size() == 1 ? sum : tape.scale(sum, 1.0 / static_cast<double>(heads.size()));
  return g;
}

}  // namespace

CriticParams CriticParams::zeros(const CriticDims& dims) {
  require(dims.vocab > kReservedIds && dims.embed > 0 && dims.width > 0 && dims.filter % 2 == 1,
          ErrorCode::InvalidArgument, "critic: dimensions must be positive with an odd filter size");
  require(dims.layers >= kHeadLayers[2], ErrorCode::InvalidArgument,
          "critic: needs at least " + std::to_string(kHeadLayers[2]) + " layers");
  CriticParams p;
  p.dims_ = dims;
  for (auto& [name, shape] : layout(dims)) {
    p.params_.names.push_back(name);
    p.params_.values.emplace_back(shape);
  }
  return p;
}

CriticParams CriticParams::init(const CriticDims& dims, Rng& rng) {
  CriticParams p = zeros(dims);
  for (auto& x : p.embedding().data()) x = 0.2 * rng.uniform() - 0.1;
  for (std::size_t l = 1; l <= dims.layers; ++l) {
    auto& w = p.conv_weight(l);
    const double bound = std::sqrt(6.0 / static_cast<double>(w.dim(0) * w.dim(1)));
    for (auto& x : w.data()) x = bound * (2.0 * rng.uniform() - 1.0);
  }
  for (std::size_t h = 0; h < 3; ++h)
    for (auto& x : p.head_weight(h).data()) x = 0.2 * rng.uniform() - 0.1;
  return p;
}

CriticParams CriticParams::from_params(ParamSet params) {
  require(!params.values.empty() && params.values[0].rank() == 2, ErrorCode::Shape, "critic: missing embedding");
  CriticDims d;
  d.vocab = params.values[0].dim(0);
  d.embed = params.values[0].dim(1);
  require(params.size() >= 7 && (params.size() - 7) % 2 == 0, ErrorCode::Shape,
          "critic: unexpected tensor count " + std::to_string(params.size()));
  d.layers = (params.size() - 7) / 2;
  require(params.values[1].rank() == 3, ErrorCode::Shape, "critic: first convolution must be rank 3");
  d.filter = params.values[1].dim(0);
  d.width = params.values[1].dim(2);
  const auto expected = layout(d);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(params.names[i] == expected[i].first, ErrorCode::InvalidArgument,
            "critic: tensor " + std::to_string(i) + " is '" + params.names[i] + "', expected '" + expected[i].first + "'");
    require(params.values[i].shape() == expected[i].second, ErrorCode::Shape,
            "critic: " + expected[i].first + " has shape " + shape_str(params.values[i].shape()) + ", expected " +
                shape_str(expected[i].second));
  }
  require(params.all_finite(), ErrorCode::Numeric, "critic: parameters are not finite");
  CriticParams p;
  p.dims_ = d;
  p.params_ = std::move(params);
  return p;
}

HeadSet all_heads() { return {kHeadLayers[0], kHeadLayers[1], kHeadLayers[2]}; }
HeadSet final_head() { return {kHeadLayers[2]}; }

void validate_heads(const HeadSet& heads, std::size_t layers) {
  require(!heads.empty(), ErrorCode::InvalidArgument, "critic: at least one head must be active");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    head_index(heads[i]);
    require(heads[i] <= layers, ErrorCode::InvalidArgument, "critic: head layer beyond network depth");
    require(i == 0 || heads[i] > heads[i - 1], ErrorCode::InvalidArgument, "critic: head layers must be increasing");
  }
}

CriticOutput critic_forward(const CriticParams& params, std::span<const Sentence> sentences, const HeadSet& heads,
                            std::size_t t_max) {
  constexpr std::size_t kChunk = 64;
  CriticOutput out;
  out.heads.assign(3, {});
  for (std::size_t start = 0; start < sentences.size(); start += kChunk) {
    const auto chunk = sentences.subspan(start, std::min(kChunk, sentences.size() - start));
    Tape tape;
    const Graph g = build(tape, params, chunk, heads, t_max);
    const auto s = tape.value(g.score).data();
    out.score.insert(out.score.end(), s.begin(), s.end());
    for (std::size_t h = 0; h < 3; ++h) {
      const auto v = tape.value(g.heads[h]).data();
      out.heads[h].insert(out.heads[h].end(), v.begin(), v.end());
    }
  }
  require(!out.score.empty(), ErrorCode::InvalidArgument, "critic: empty batch");
  return out;
}

std::vector<double> critic_scores(const CriticParams& params, std::span<const Sentence> sentences, const HeadSet& heads,
                                  std::size_t t_max) {
  return critic_forward(params, sentences, heads, t_max).score;
}

double critic_score(const CriticParams& params, std::span<const int> sentence, const HeadSet& heads, std::size_t t_max) {
  const Sentence s(sentence.begin(), sentence.end());
  return critic_scores(params, std::span<const Sentence>(&s, 1), heads, t_max).front();
}

LossAndGrads critic_loss(const CriticParams& params, std::span<const Sentence> sentences, std::span<const double> targets,
                         const HeadSet& heads, std::size_t t_max) {
  require(sentences.size() == targets.size(), ErrorCode::InvalidArgument,
          "critic_loss: " + std::to_string(sentences.size()) + " sentences but " + std::to_string(targets.size()) +
              " targets");
  for (double t : targets)
    require(t >= 0.0 && t <= 1.0, ErrorCode::Domain, "critic_loss: targets must lie in [0,1]");
  Tape tape;
  const Graph g = build(tape, params, sentences, heads, t_max);
  Var target = tape.constant(Tensor({sentences.size(), 1}, std::vector<double>(targets.begin(), targets.end())));
  Var loss = tape.squared_error(g.score, target);
  const auto grads = tape.backward(loss);
  LossAndGrads r;
  r.loss = tape.value(loss).item();
  for (Var v : g.params) r.grads.push_back(grads.at(v));
  return r;
}

EntropyLadder EntropyLadder::standard() { return {{0.5, 0.75, 1.0, 1.25, 1.5}, {0.8, 0.6, 0.4, 0.2, 0.0}}; }
EntropyLadder EntropyLadder::literal() { return {{0.5, 0.75, 1.0, 1.25, 1.5}, {0.0, 0.2, 0.4, 0.6, 0.8}}; }
EntropyLadder EntropyLadder::collapsed() { return {{1.0}, {0.0}}; }

double EntropyLadder::target_for(double t) const {
  for (std::size_t i = 0; i < tau.size(); ++i)
    if (tau[i] == t) return target[i];
  fail(ErrorCode::Domain, "ladder: temperature " + std::to_string(t) + " is not a rung");
}

void EntropyLadder::validate() const {
  require(!tau.empty() && tau.size() == target.size(), ErrorCode::InvalidArgument,
          "ladder: needs matching, nonempty temperature and target lists");
  int direction = 0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    require(tau[i] > 0.0 && std::isfinite(tau[i]), ErrorCode::Domain, "ladder: temperatures must be > 0");
    require(target[i] >= 0.0 && target[i] <= 1.0, ErrorCode::Domain, "ladder: targets must lie in [0,1]");
    if (i == 0) continue;
    require(tau[i] > tau[i - 1], ErrorCode::InvalidArgument, "ladder: temperatures must be strictly increasing");
    const int d = target[i] < target[i - 1] ? -1 : target[i] > target[i - 1] ? 1 : 0;
    require(d != 0 && (direction == 0 || d == direction), ErrorCode::InvalidArgument,
            "ladder: targets must be strictly monotone in temperature");
    direction = d;
  }
}

std::vector<double> assign_targets(const EntropyLadder& ladder, std::span<const Provenance> batch) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& p : batch) out.push_back(p.ground_truth ? kGroundTruthTarget : ladder.target_for(p.tau));
  return out;
}

}  // namespace memr
