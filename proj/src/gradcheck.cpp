#include "memr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "memr/actor.hpp"
#include "memr/critic.hpp"
#include "memr/numerics.hpp"
#include "memr/rng.hpp"

namespace memr {

namespace {

constexpr double kEps = 1e-5;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& x : t.data()) x = lo + (hi - lo) * rng.uniform();
  return t;
}

// Keeps values away from zero so ReLU kinks stay outside the difference step.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = random_tensor(shape, rng);
  for (auto& x : t.data()) x = x < 0 ? x - 0.05 : x + 0.05;
  return t;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Loss = mean(op(inputs) * fixed random weights), or the op itself when it is
// already a scalar.
double check_op(const std::vector<Tensor>& inputs, const Builder& build, Rng& rng) {
  Tensor probe;
  {
    Tape t;
    std::vector<Var> v;
    for (const auto& x : inputs) v.push_back(t.leaf(x));
    probe = random_tensor(t.value(build(t, v)).shape(), rng);
  }
  DifferentiableFn f = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> v;
    for (const auto& x : xs) v.push_back(t.leaf(x));
    Var out = build(t, v);
    Var loss = t.value(out).rank() == 0 ? out : t.mean(t.mul(out, t.constant(probe)));
    const auto g = t.backward(loss);
    std::vector<Tensor> grads;
    for (Var x : v) grads.push_back(g.at(x));
    return std::make_pair(t.value(loss).item(), grads);
  };
  return grad_check(f, inputs, kEps);
}

std::vector<Sentence> random_sentences(std::size_t n, std::size_t vocab, std::size_t max_len, Rng& rng) {
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sentence s;
    const std::size_t len = 1 + rng.below(max_len - 1);
    for (std::size_t t = 0; t < len; ++t) s.push_back(kReservedIds + static_cast<int>(rng.below(vocab - kReservedIds)));
    s.push_back(kEos);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gradcheck"));
  std::vector<GradCheckEntry> out;
  auto add = [&](std::string name, double err) { out.push_back({std::move(name), err}); };

  add("op.matmul", check_op({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
                            [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); }, rng));
  add("op.add", check_op({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                         [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }, rng));
  add("op.add_broadcast", check_op({random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                                   [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }, rng));
  add("op.mul", check_op({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                         [](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); }, rng));
  add("op.scale", check_op({random_tensor({3, 4}, rng)},
                           [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.7); }, rng));
  add("op.sigmoid", check_op({random_tensor({3, 4}, rng, -3, 3)},
                             [](Tape& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); }, rng));
  add("op.tanh", check_op({random_tensor({3, 4}, rng, -3, 3)},
                          [](Tape& t, const std::vector<Var>& v) { return t.tanh(v[0]); }, rng));
  add("op.relu", check_op({away_from_zero({3, 4}, rng)},
                          [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); }, rng));
  add("op.softmax", check_op({random_tensor({3, 5}, rng, -2, 2)},
                             [](Tape& t, const std::vector<Var>& v) { return t.softmax(v[0], 0.7); }, rng));
  add("op.embedding", check_op({random_tensor({6, 3}, rng)},
                               [](Tape& t, const std::vector<Var>& v) {
                                 return t.embedding(v[0], {0, 5, 2, 2, 1, 4}, {2, 3});
                               },
                               rng));
  add("op.conv1d", check_op({random_tensor({2, 5, 3}, rng), random_tensor({3, 3, 4}, rng), random_tensor({4}, rng)},
                            [](Tape& t, const std::vector<Var>& v) { return t.conv1d(v[0], v[1], v[2]); }, rng));
  add("op.max_pool_time", check_op({random_tensor({2, 6, 3}, rng)},
                                   [](Tape& t, const std::vector<Var>& v) { return t.max_pool_time(v[0]); }, rng));
  add("op.mean", check_op({random_tensor({3, 4}, rng)}, [](Tape& t, const std::vector<Var>& v) { return t.mean(v[0]); },
                          rng));
  add("op.squared_error", check_op({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                                   [](Tape& t, const std::vector<Var>& v) { return t.squared_error(v[0], v[1]); }, rng));
  add("op.cross_entropy", check_op({random_tensor({4, 6}, rng, -2, 2)},
                                   [](Tape& t, const std::vector<Var>& v) {
                                     return t.cross_entropy(v[0], {1, 5, 0, 3}, {0.25, 0.5, 0.0, 1.0});
                                   },
                                   rng));
  add("op.concat", check_op({random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
                            [](Tape& t, const std::vector<Var>& v) { return t.concat(v[0], v[1]); }, rng));

  // One LSTM cell step: inputs x, h, c, weights for the four gates and biases.
  {
    const std::size_t B = 2, E = 3, H = 4;
    std::vector<Tensor> in{random_tensor({B, E}, rng), random_tensor({B, H}, rng), random_tensor({B, H}, rng)};
    for (int g = 0; g < 4; ++g) in.push_back(random_tensor({E + H, H}, rng));
    for (int g = 0; g < 4; ++g) in.push_back(random_tensor({H}, rng));
    add("lstm_cell", check_op(in,
                              [](Tape& t, const std::vector<Var>& v) {
                                Var xh = t.concat(v[0], v[1]);
                                auto gate = [&](int g) { return t.add(t.matmul(xh, v[3 + g]), v[7 + g]); };
                                Var i = t.sigmoid(gate(0)), f = t.sigmoid(gate(1)), g = t.tanh(gate(2)),
                                    o = t.sigmoid(gate(3));
                                Var c = t.add(t.mul(f, v[2]), t.mul(i, g));
                                return t.mul(o, t.tanh(c));
                              },
                              rng));
  }

  const ActorDims ad{11, 6, 8};
  Rng init(rng.next_u64());
  const ActorParams actor = ActorParams::init(ad, init);
  const auto names = actor.params().names;
  auto as_actor = [&](const std::vector<Tensor>& xs) { return ActorParams::from_params(ParamSet{names, xs}); };
  const auto batch = random_sentences(4, ad.vocab, 7, rng);

  add("teacher_forcing_loss", grad_check(
                                  [&](const std::vector<Tensor>& xs) {
                                    auto r = teacher_forcing_loss(as_actor(xs), batch);
                                    return std::make_pair(r.loss, r.grads);
                                  },
                                  actor.params().values, kEps));

  const std::uint64_t ss_seed = rng.next_u64();
  add("scheduled_sampling_loss", grad_check(
                                     [&](const std::vector<Tensor>& xs) {
                                       Rng r(ss_seed);
                                       auto res = scheduled_sampling_loss(as_actor(xs), batch, 0.5, r);
                                       return std::make_pair(res.loss, res.grads);
                                     },
                                     actor.params().values, kEps));

  std::vector<Sentence> samples;
  {
    std::vector<std::vector<int>> prefixes(4);
    std::vector<Rng> streams;
    for (int i = 0; i < 4; ++i) streams.emplace_back(rng.next_u64());
    samples = sample_batch(actor, 1.0, 8, prefixes, streams);
  }
  std::vector<std::vector<double>> q;
  for (const auto& s : samples) {
    std::vector<double> row;
    for (std::size_t t = 0; t < s.size(); ++t) row.push_back(rng.uniform());
    q.push_back(std::move(row));
  }
  add("policy_gradient_loss", grad_check(
                                  [&](const std::vector<Tensor>& xs) {
                                    auto r = policy_gradient_loss(as_actor(xs), samples, q);
                                    return std::make_pair(r.loss, r.grads);
                                  },
                                  actor.params().values, kEps));

  const CriticDims cd{11, 4, 8, 8, 3};
  Rng cinit(rng.next_u64());
  const CriticParams critic = CriticParams::init(cd, cinit);
  const auto cnames = critic.params().names;
  const auto cbatch = random_sentences(4, cd.vocab, 7, rng);
  std::vector<double> targets;
  for (std::size_t i = 0; i < cbatch.size(); ++i) targets.push_back(rng.uniform());
  add("critic_loss", grad_check(
                         [&](const std::vector<Tensor>& xs) {
                           auto r = critic_loss(CriticParams::from_params(ParamSet{cnames, xs}), cbatch, targets, all_heads(), 8);
                           return std::make_pair(r.loss, r.grads);
                         },
                         critic.params().values, kEps));
  return out;
}

}  // namespace memr
