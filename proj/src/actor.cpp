#include "memr/actor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "memr/error.hpp"

namespace memr {

namespace {

constexpr const char* kSlotNames[ActorParams::kSlotCount] = {
    "actor.embedding", "actor.w_input",  "actor.w_forget", "actor.w_cell",  "actor.w_output", "actor.b_input",
    "actor.b_forget",  "actor.b_cell",   "actor.b_output", "actor.w_proj",  "actor.b_proj",
};

std::vector<Shape> slot_shapes(const ActorDims& d) {
  const std::size_t xh = d.embed + d.hidden;
  return {{d.vocab, d.embed}, {xh, d.hidden}, {xh, d.hidden}, {xh, d.hidden}, {xh, d.hidden}, {d.hidden},
          {d.hidden},         {d.hidden},     {d.hidden},     {d.hidden, d.vocab}, {d.vocab}};
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_token(const ActorParams& p, int token) {
  require(token >= 0 && static_cast<std::size_t>(token) < p.dims().vocab, ErrorCode::InvalidArgument,
          "actor: token id " + std::to_string(token) + " outside vocabulary of " + std::to_string(p.dims().vocab));
}

// Advances `rows` LSTM states by one input token each. h and c are
// [rows, H] and updated in place; logits receives [rows, V] when non-null.
// Arithmetic mirrors the tape ops: gemm, then bias, then activation.
void advance(const ActorParams& p, std::span<const int> tokens, std::vector<double>& h, std::vector<double>& c,
             std::vector<double>* logits) {
  const std::size_t rows = tokens.size(), E = p.dims().embed, H = p.dims().hidden, V = p.dims().vocab;
  std::vector<double> xh(rows * (E + H));
  for (std::size_t r = 0; r < rows; ++r) {
    check_token(p, tokens[r]);
    const auto emb = p[ActorParams::kEmbedding].data().subspan(static_cast<std::size_t>(tokens[r]) * E, E);
    std::copy(emb.begin(), emb.end(), xh.begin() + static_cast<std::ptrdiff_t>(r * (E + H)));
    std::copy_n(h.begin() + static_cast<std::ptrdiff_t>(r * H), H, xh.begin() + static_cast<std::ptrdiff_t>(r * (E + H) + E));
  }
  std::vector<double> gi(rows * H), gf(rows * H), gg(rows * H), go(rows * H);
  gemm_rows(xh, p[ActorParams::kWInput].data(), gi, rows, E + H, H);
  gemm_rows(xh, p[ActorParams::kWForget].data(), gf, rows, E + H, H);
  gemm_rows(xh, p[ActorParams::kWCell].data(), gg, rows, E + H, H);
  gemm_rows(xh, p[ActorParams::kWOutput].data(), go, rows, E + H, H);
  const auto bi = p[ActorParams::kBInput].data(), bf = p[ActorParams::kBForget].data(),
             bg = p[ActorParams::kBCell].data(), bo = p[ActorParams::kBOutput].data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t k = r * H + j;
      const double i = sigmoid(gi[k] + bi[j]);
      const double f = sigmoid(gf[k] + bf[j]);
      const double g = std::tanh(gg[k] + bg[j]);
      const double o = sigmoid(go[k] + bo[j]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
  if (logits) {
    logits->resize(rows * V);
    gemm_rows(h, p[ActorParams::kWProj].data(), *logits, rows, H, V);
    const auto bp = p[ActorParams::kBProj].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < V; ++j) (*logits)[r * V + j] += bp[j];
  }
}

void masked_softmax(std::span<const double> logits, double tau, std::span<double> probs) {
  std::vector<double> masked(logits.begin(), logits.end());
  for (std::size_t j = 0; j < masked.size(); ++j)
    if (masked_at_sampling(static_cast<int>(j))) masked[j] = -std::numeric_limits<double>::infinity();
  softmax_row(masked, tau, probs);
}

int draw(std::span<const double> probs, double u) {
  double acc = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last = static_cast<int>(j);
    if (u < acc) return last;
  }
  return last;
}

struct ActorVars {
  Var slot[ActorParams::kSlotCount];
};

ActorVars register_params(Tape& tape, const ActorParams& p) {
  ActorVars v;
  for (std::size_t s = 0; s < ActorParams::kSlotCount; ++s) v.slot[s] = tape.leaf(p.params().values[s]);
  return v;
}

std::vector<Tensor> collect_grads(const Tape& tape, Var loss, const ActorVars& v) {
  auto g = tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(ActorParams::kSlotCount);
  for (auto s : v.slot) out.push_back(g.at(s));
  return out;
}

// Unrolls the LSTM on the tape for a batch. input_for(t, b, prev_logits)
// returns the token fed to row b at step t; prev_logits is the [B,V] output of
// step t-1 (null at t = 0). Returns the summed weighted cross entropy.
template <class InputFn>
Var unroll(Tape& tape, const ActorVars& v, const ActorParams& p, const std::vector<std::vector<int>>& targets,
           const std::vector<std::vector<double>>& weights, std::size_t steps, InputFn&& input_for,
           std::vector<std::vector<int>>* inputs_used) {
  const std::size_t B = targets.size(), H = p.dims().hidden;
  Var h = tape.constant(Tensor({B, H}));
  Var c = tape.constant(Tensor({B, H}));
  Var loss{};
  const Tensor* prev_logits = nullptr;
  if (inputs_used) inputs_used->assign(B, std::vector<int>(steps, kPad));
  std::vector<int> ids(B), tgt(B);
  std::vector<double> w(B);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      ids[b] = input_for(t, b, prev_logits);
      if (inputs_used) (*inputs_used)[b][t] = ids[b];
      tgt[b] = targets[b][t];
      w[b] = weights[b][t];
    }
    Var x = tape.embedding(v.slot[ActorParams::kEmbedding], ids, {B});
    Var xh = tape.concat(x, h);
    Var i = tape.sigmoid(tape.add(tape.matmul(xh, v.slot[ActorParams::kWInput]), v.slot[ActorParams::kBInput]));
    Var f = tape.sigmoid(tape.add(tape.matmul(xh, v.slot[ActorParams::kWForget]), v.slot[ActorParams::kBForget]));
    Var g = tape.tanh(tape.add(tape.matmul(xh, v.slot[ActorParams::kWCell]), v.slot[ActorParams::kBCell]));
    Var o = tape.sigmoid(tape.add(tape.matmul(xh, v.slot[ActorParams::kWOutput]), v.slot[ActorParams::kBOutput]));
    c = tape.add(tape.mul(f, c), tape.mul(i, g));
    h = tape.mul(o, tape.tanh(c));
    Var logits = tape.add(tape.matmul(h, v.slot[ActorParams::kWProj]), v.slot[ActorParams::kBProj]);
    Var ce = tape.cross_entropy(logits, tgt, w);
    loss = (t == 0) ? ce : tape.add(loss, ce);
    prev_logits = &tape.value(logits);
  }
  return loss;
}

struct PaddedBatch {
  std::vector<std::vector<int>> targets;
  std::size_t steps = 0;
};

PaddedBatch pad_batch(std::span<const Sentence> batch) {
  PaddedBatch pb;
  for (const auto& s : batch) pb.steps = std::max(pb.steps, s.size());
  for (const auto& s : batch) {
    std::vector<int> row(pb.steps, kPad);
    std::copy(s.begin(), s.end(), row.begin());
    pb.targets.push_back(std::move(row));
  }
  return pb;
}

}  // namespace

ActorParams ActorParams::zeros(const ActorDims& dims) {
  require(dims.vocab > kReservedIds && dims.embed > 0 && dims.hidden > 0, ErrorCode::InvalidArgument,
          "actor: dimensions must be positive and vocab must exceed the reserved ids");
  ActorParams p;
  p.dims_ = dims;
  const auto shapes = slot_shapes(dims);
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    p.params_.names.emplace_back(kSlotNames[s]);
    p.params_.values.emplace_back(shapes[s]);
  }
  return p;
}

ActorParams ActorParams::init(const ActorDims& dims, Rng& rng) {
  ActorParams p = zeros(dims);
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    const bool bias = s >= kBInput && s <= kBOutput;
    if (bias || s == kBProj) continue;
    for (auto& x : p.params_.values[s].data()) x = 0.2 * rng.uniform() - 0.1;
  }
  for (auto& x : p[kBForget].data()) x = 1.0;
  return p;
}

ActorParams ActorParams::from_params(ParamSet params) {
  require(params.size() == kSlotCount, ErrorCode::Shape, "actor: expected " + std::to_string(kSlotCount) + " tensors");
  for (std::size_t s = 0; s < kSlotCount; ++s)
    require(params.names[s] == kSlotNames[s], ErrorCode::InvalidArgument,
            "actor: tensor " + std::to_string(s) + " is '" + params.names[s] + "', expected '" + kSlotNames[s] + "'");
  const auto& emb = params.values[kEmbedding];
  require(emb.rank() == 2, ErrorCode::Shape, "actor: embedding must be rank 2");
  ActorDims d{emb.dim(0), emb.dim(1), params.values[kBInput].size()};
  const auto shapes = slot_shapes(d);
  for (std::size_t s = 0; s < kSlotCount; ++s)
    require(params.values[s].shape() == shapes[s], ErrorCode::Shape,
            std::string("actor: ") + kSlotNames[s] + " has shape " + shape_str(params.values[s].shape()) + ", expected " +
                shape_str(shapes[s]));
  require(params.all_finite(), ErrorCode::Numeric, "actor: parameters are not finite");
  ActorParams p;
  p.dims_ = d;
  p.params_ = std::move(params);
  return p;
}

ActorState initial_state(const ActorParams& params) {
  return ActorState{std::vector<double>(params.dims().hidden, 0.0), std::vector<double>(params.dims().hidden, 0.0), 0};
}

StepResult step(const ActorParams& params, int token, const ActorState& state) {
  check_token(params, token);
  require(state.h.size() == params.dims().hidden && state.c.size() == params.dims().hidden, ErrorCode::Shape,
          "actor step: state size does not match hidden size");
  StepResult r;
  r.next = state;
  const int tok[1] = {token};
  advance(params, tok, r.next.h, r.next.c, &r.logits);
  ++r.next.t;
  return r;
}

bool masked_at_sampling(int id) { return id == kPad || id == kBos || id == kUnk; }

std::vector<Sentence> sample_batch(const ActorParams& params, double tau, std::size_t t_max,
                                   std::span<const std::vector<int>> prefixes, std::span<Rng> rngs) {
  require(tau > 0.0, ErrorCode::Domain, "sample: temperature must be > 0");
  require(prefixes.size() == rngs.size(), ErrorCode::InvalidArgument, "sample: one random stream per row required");
  const std::size_t n = prefixes.size(), H = params.dims().hidden, V = params.dims().vocab;
  std::vector<Sentence> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    require(prefixes[r].size() < t_max, ErrorCode::InvalidArgument,
            "sample: prefix length " + std::to_string(prefixes[r].size()) + " must be below t_max " + std::to_string(t_max));
    for (int tok : prefixes[r]) {
      check_token(params, tok);
      require(tok >= kReservedIds, ErrorCode::InvalidArgument, "sample: prefix contains a reserved id");
    }
    out[r] = prefixes[r];
  }

  std::vector<std::size_t> active(n);
  for (std::size_t r = 0; r < n; ++r) active[r] = r;
  std::vector<double> h(n * H, 0.0), c(n * H, 0.0), logits, probs(V);
  std::vector<int> feed(n, kBos);
  std::size_t fed = 0;  // tokens of the sequence consumed after BOS
  while (!active.empty()) {
    advance(params, feed, h, c, &logits);
    std::vector<std::size_t> still;
    std::vector<int> next_feed;
    std::vector<double> nh, nc;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t r = active[a];
      Sentence& seq = out[r];
      int next_tok;
      if (fed < prefixes[r].size()) {
        next_tok = prefixes[r][fed];
      } else {
        masked_softmax(std::span<const double>(logits).subspan(a * V, V), tau, probs);
        next_tok = draw(probs, rngs[r].uniform());
        seq.push_back(next_tok);
      }
      if (next_tok == kEos || seq.size() >= t_max) continue;
      still.push_back(r);
      next_feed.push_back(next_tok);
      nh.insert(nh.end(), h.begin() + static_cast<std::ptrdiff_t>(a * H), h.begin() + static_cast<std::ptrdiff_t>((a + 1) * H));
      nc.insert(nc.end(), c.begin() + static_cast<std::ptrdiff_t>(a * H), c.begin() + static_cast<std::ptrdiff_t>((a + 1) * H));
    }
    active = std::move(still);
    feed = std::move(next_feed);
    h = std::move(nh);
    c = std::move(nc);
    ++fed;
  }
  return out;
}

Sentence sample_sequence(const ActorParams& params, double tau, std::size_t t_max, std::span<const int> prefix, Rng& rng) {
  std::vector<std::vector<int>> prefixes{std::vector<int>(prefix.begin(), prefix.end())};
  return std::move(sample_batch(params, tau, t_max, prefixes, std::span<Rng>(&rng, 1)).front());
}

double sequence_log_prob(const ActorParams& params, std::span<const int> sentence, double tau, bool masked) {
  require(tau > 0.0, ErrorCode::Domain, "sequence_log_prob: temperature must be > 0");
  const std::size_t H = params.dims().hidden, V = params.dims().vocab;
  std::vector<double> h(H, 0.0), c(H, 0.0), logits, scaled(V);
  double lp = 0.0;
  int feed = kBos;
  for (int tok : sentence) {
    check_token(params, tok);
    const int in[1] = {feed};
    advance(params, in, h, c, &logits);
    for (std::size_t j = 0; j < V; ++j) {
      scaled[j] = logits[j] / tau;
      if (masked && masked_at_sampling(static_cast<int>(j))) scaled[j] = -std::numeric_limits<double>::infinity();
    }
    lp += scaled[static_cast<std::size_t>(tok)] - log_sum_exp(scaled);
    feed = tok;
  }
  return lp;
}

LossAndGrads teacher_forcing_loss(const ActorParams& params, std::span<const Sentence> batch) {
  require(!batch.empty(), ErrorCode::InvalidArgument, "teacher_forcing_loss: empty batch");
  auto pb = pad_batch(batch);
  std::size_t tokens = 0;
  for (const auto& s : batch) {
    require(!s.empty() && s.back() == kEos, ErrorCode::InvalidArgument, "teacher_forcing_loss: sentences must be EOS-terminated");
    tokens += static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](int t) { return t != kPad; }));
  }
  require(tokens > 0, ErrorCode::InvalidArgument, "teacher_forcing_loss: batch has no non-PAD tokens");
  std::vector<std::vector<double>> weights(batch.size(), std::vector<double>(pb.steps, 0.0));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t t = 0; t < pb.steps; ++t)
      if (pb.targets[b][t] != kPad) weights[b][t] = 1.0 / static_cast<double>(tokens);

  Tape tape;
  const auto v = register_params(tape, params);
  Var loss = unroll(tape, v, params, pb.targets, weights, pb.steps,
                    [&](std::size_t t, std::size_t b, const Tensor*) { return t == 0 ? kBos : pb.targets[b][t - 1]; }, nullptr);
  return {tape.value(loss).item(), collect_grads(tape, loss, v)};
}

ScheduledSamplingResult scheduled_sampling_loss(const ActorParams& params, std::span<const Sentence> batch, double p,
                                                Rng& rng) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::Domain, "scheduled_sampling_loss: replace probability must lie in [0,1]");
  require(!batch.empty(), ErrorCode::InvalidArgument, "scheduled_sampling_loss: empty batch");
  auto pb = pad_batch(batch);
  std::size_t tokens = 0;
  for (const auto& s : batch) {
    require(!s.empty() && s.back() == kEos, ErrorCode::InvalidArgument, "scheduled_sampling_loss: sentences must be EOS-terminated");
    tokens += static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](int t) { return t != kPad; }));
  }
  require(tokens > 0, ErrorCode::InvalidArgument, "scheduled_sampling_loss: batch has no non-PAD tokens");
  std::vector<std::vector<double>> weights(batch.size(), std::vector<double>(pb.steps, 0.0));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t t = 0; t < pb.steps; ++t)
      if (pb.targets[b][t] != kPad) weights[b][t] = 1.0 / static_cast<double>(tokens);

  const std::size_t V = params.dims().vocab;
  std::vector<double> probs(V);
  auto choose = [&](std::size_t t, std::size_t b, const Tensor* prev_logits) {
    if (t == 0) return kBos;
    const int truth = pb.targets[b][t - 1];
    if (rng.uniform() >= p) return truth;
    masked_softmax(prev_logits->data().subspan(b * V, V), 1.0, probs);
    return draw(probs, rng.uniform());
  };

  ScheduledSamplingResult r;
  Tape tape;
  const auto v = register_params(tape, params);
  Var loss = unroll(tape, v, params, pb.targets, weights, pb.steps, choose, &r.inputs);
  r.loss = tape.value(loss).item();
  r.grads = collect_grads(tape, loss, v);
  return r;
}

LossAndGrads policy_gradient_loss(const ActorParams& params, std::span<const Sentence> sentences,
                                  std::span<const std::vector<double>> q) {
  require(!sentences.empty(), ErrorCode::InvalidArgument, "policy_gradient_loss: empty batch");
  require(q.size() == sentences.size(), ErrorCode::InvalidArgument, "policy_gradient_loss: one Q vector per sentence required");
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    require(!sentences[b].empty(), ErrorCode::InvalidArgument, "policy_gradient_loss: empty sentence");
    require(q[b].size() == sentences[b].size(), ErrorCode::InvalidArgument,
            "policy_gradient_loss: sentence " + std::to_string(b) + " has " + std::to_string(sentences[b].size()) +
                " tokens but " + std::to_string(q[b].size()) + " Q values");
  }
  auto pb = pad_batch(sentences);
  const double inv_b = 1.0 / static_cast<double>(sentences.size());
  std::vector<std::vector<double>> weights(sentences.size(), std::vector<double>(pb.steps, 0.0));
  for (std::size_t b = 0; b < sentences.size(); ++b)
    for (std::size_t t = 0; t < sentences[b].size(); ++t) weights[b][t] = q[b][t] * inv_b;

  Tape tape;
  const auto v = register_params(tape, params);
  Var loss = unroll(tape, v, params, pb.targets, weights, pb.steps,
                    [&](std::size_t t, std::size_t b, const Tensor*) { return t == 0 ? kBos : pb.targets[b][t - 1]; }, nullptr);
  return {tape.value(loss).item(), collect_grads(tape, loss, v)};
}

double perplexity(const ActorParams& params, std::span<const Sentence> sentences) {
  require(!sentences.empty(), ErrorCode::InvalidArgument, "perplexity: empty corpus");
  const std::size_t H = params.dims().hidden, V = params.dims().vocab;
  constexpr std::size_t kChunk = 256;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < sentences.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, sentences.size() - start);
    std::size_t steps = 0;
    for (std::size_t r = 0; r < n; ++r) steps = std::max(steps, sentences[start + r].size());
    std::vector<double> h(n * H, 0.0), c(n * H, 0.0), logits;
    std::vector<int> feed(n, kBos);
    for (std::size_t t = 0; t < steps; ++t) {
      advance(params, feed, h, c, &logits);
      for (std::size_t r = 0; r < n; ++r) {
        const Sentence& s = sentences[start + r];
        if (t >= s.size() || s[t] == kPad) {
          feed[r] = kPad;
          continue;
        }
        check_token(params, s[t]);
        auto row = std::span<const double>(logits).subspan(r * V, V);
        nll += log_sum_exp(row) - row[static_cast<std::size_t>(s[t])];
        ++tokens;
        feed[r] = s[t];
      }
    }
  }
  require(tokens > 0, ErrorCode::InvalidArgument, "perplexity: corpus has no tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

ActorParams distill_first_order(const OracleGrammar& grammar, const Vocabulary& vocab) {
  require(grammar.is_first_order(), ErrorCode::InvalidArgument,
          "distill_first_order: grammar transitions depend on more than the current symbol");
  constexpr double kFloor = -60.0;
  constexpr double kSaturate = 40.0;
  constexpr double kCellGain = 10.0;
  const std::size_t V = vocab.size();
  const std::size_t A = grammar.alphabet_size();

  // Vocabulary id of each grammar symbol.
  std::vector<int> vid(A);
  for (std::size_t s = 0; s < A; ++s) {
    auto id = vocab.find(grammar.alphabet()[s]);
    require(id.has_value(), ErrorCode::InvalidArgument,
            "distill_first_order: symbol '" + grammar.alphabet()[s] + "' missing from the vocabulary");
    vid[s] = *id;
  }

  ActorParams p = ActorParams::zeros({V, V, V});
  for (std::size_t i = 0; i < V; ++i) p[ActorParams::kEmbedding][i * V + i] = 1.0;
  for (std::size_t j = 0; j < V; ++j) {
    p[ActorParams::kBInput][j] = kSaturate;
    p[ActorParams::kBForget][j] = -kSaturate;
    p[ActorParams::kBOutput][j] = kSaturate;
    // Embedding block of the cell-gate weights: token j drives hidden unit j.
    p[ActorParams::kWCell][j * V + j] = kCellGain;
  }
  const double kappa = std::tanh(std::tanh(kCellGain));

  auto set_row = [&](int unit, const std::vector<double>& logp) {
    for (std::size_t j = 0; j < V; ++j) p[ActorParams::kWProj][static_cast<std::size_t>(unit) * V + j] = logp[j] / kappa;
  };
  std::vector<double> logp(V);
  // After BOS: the initial distribution; EOS impossible.
  std::fill(logp.begin(), logp.end(), kFloor);
  for (std::size_t s = 0; s < A; ++s)
    if (grammar.initial()[s] > 0.0) logp[static_cast<std::size_t>(vid[s])] = std::log(grammar.initial()[s]);
  set_row(kBos, logp);
  // After symbol s: stop, or continue with its transition row.
  for (std::size_t s = 0; s < A; ++s) {
    const std::size_t ctx = grammar.context(-1, static_cast<int>(s));
    std::fill(logp.begin(), logp.end(), kFloor);
    const double stop = grammar.stop(ctx);
    if (stop > 0.0) logp[kEos] = std::log(stop);
    const auto row = grammar.next(ctx);
    for (std::size_t y = 0; y < A; ++y)
      if (row[y] > 0.0 && stop < 1.0) logp[static_cast<std::size_t>(vid[y])] = std::log1p(-stop) + std::log(row[y]);
    set_row(vid[s], logp);
  }
  return p;
}

}  // namespace memr
