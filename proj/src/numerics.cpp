#include "memr/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "memr/error.hpp"

namespace memr {

namespace {

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
  fail(ErrorCode::Shape, std::string(op_name(op)) + ": " + detail);
}

std::string two_shapes(const Tensor& a, const Tensor& b) {
  return "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " do not conform";
}

// Forward pass of one node given its input values. Fills node.value (and any
// saved state). Validates shapes and attributes.
void compute(TapeNode& node, const std::vector<const Tensor*>& in) {
  const OpKind op = node.op;
  switch (op) {
    case OpKind::Leaf:
    case OpKind::Constant:
      return;

    case OpKind::MatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail(op, two_shapes(a, b));
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      node.value = Tensor({m, n});
      gemm_rows(a.data(), b.data(), node.value.data(), m, k, n);
      return;
    }

    case OpKind::Add: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      node.value = a;
      auto out = node.value.data();
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
        const std::size_t n = b.dim(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
      } else {
        shape_fail(op, two_shapes(a, b));
      }
      return;
    }

    case OpKind::Mul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape() != b.shape()) shape_fail(op, two_shapes(a, b));
      node.value = a;
      auto out = node.value.data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      return;
    }

    case OpKind::Scale: {
      node.value = *in[0];
      for (auto& x : node.value.data()) x *= node.scalar;
      return;
    }

    case OpKind::Sigmoid:
      node.value = *in[0];
      for (auto& x : node.value.data()) x = sigmoid_scalar(x);
      return;

    case OpKind::Tanh:
      node.value = *in[0];
      for (auto& x : node.value.data()) x = std::tanh(x);
      return;

    case OpKind::Relu:
      node.value = *in[0];
      for (auto& x : node.value.data()) x = x > 0.0 ? x : 0.0;
      return;

    case OpKind::Softmax: {
      const Tensor& x = *in[0];
      if (!(node.scalar > 0.0)) fail(ErrorCode::Domain, "softmax: temperature must be > 0");
      if (x.rank() < 1 || x.shape().back() == 0) shape_fail(op, "needs a non-empty last dim, got " + shape_str(x.shape()));
      node.value = Tensor(x.shape());
      const std::size_t n = x.shape().back();
      for (std::size_t r = 0; r < x.size() / n; ++r)
        softmax_row(x.data().subspan(r * n, n), node.scalar, node.value.data().subspan(r * n, n));
      return;
    }

    case OpKind::Embedding: {
      const Tensor& table = *in[0];
      if (table.rank() != 2) shape_fail(op, "table must be rank 2, got " + shape_str(table.shape()));
      if (product(node.lead_shape) != node.ids.size())
        shape_fail(op, "lead shape " + shape_str(node.lead_shape) + " does not match " + std::to_string(node.ids.size()) + " ids");
      const std::size_t vocab = table.dim(0), e = table.dim(1);
      Shape out_shape = node.lead_shape;
      out_shape.push_back(e);
      node.value = Tensor(out_shape);
      auto out = node.value.data();
      for (std::size_t i = 0; i < node.ids.size(); ++i) {
        const int id = node.ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
          fail(ErrorCode::InvalidArgument, "embedding: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(id * e), e, out.begin() + static_cast<std::ptrdiff_t>(i * e));
      }
      return;
    }

    case OpKind::Conv1d: {
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      const Tensor& bias = *in[2];
      if (x.rank() != 3 || w.rank() != 3 || bias.rank() != 1 || w.dim(1) != x.dim(2) || bias.dim(0) != w.dim(2) || w.dim(0) == 0)
        shape_fail(op, "input " + shape_str(x.shape()) + ", filter " + shape_str(w.shape()) + ", bias " + shape_str(bias.shape()) + " do not conform");
      const std::size_t B = x.dim(0), T = x.dim(1), cin = x.dim(2), width = w.dim(0), cout = w.dim(2);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((width - 1) / 2);
      node.value = Tensor({B, T, cout});
      auto out = node.value.data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          double* row = out.data() + (b * T + t) * cout;
          std::copy_n(bias.data().begin(), cout, row);
          for (std::size_t j = 0; j < width; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            gemm_rows(x.data().subspan((b * T + static_cast<std::size_t>(src)) * cin, cin),
                      w.data().subspan(j * cin * cout, cin * cout), std::span<double>(row, cout), 1, cin, cout, true);
          }
        }
      }
      return;
    }

    case OpKind::MaxPoolTime: {
      const Tensor& x = *in[0];
      if (x.rank() != 3 || x.dim(1) == 0) shape_fail(op, "expects [B,T,C] with T > 0, got " + shape_str(x.shape()));
      const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
      node.value = Tensor({B, C});
      node.argmax.assign(B * C, 0);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = 0;
          double v = x[(b * T) * C + c];
          for (std::size_t t = 1; t < T; ++t) {
            const double cand = x[(b * T + t) * C + c];
            if (cand > v) {
              v = cand;
              best = t;
            }
          }
          node.value[b * C + c] = v;
          node.argmax[b * C + c] = best;
        }
      }
      return;
    }

    case OpKind::Mean: {
      const Tensor& x = *in[0];
      if (x.empty()) shape_fail(op, "empty input");
      double s = 0.0;
      for (double v : x.data()) s += v;
      node.value = Tensor::scalar(s / static_cast<double>(x.size()));
      return;
    }

    case OpKind::SquaredError: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.size() != b.size() || a.empty()) shape_fail(op, two_shapes(a, b));
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      node.value = Tensor::scalar(s / static_cast<double>(a.size()));
      return;
    }

    case OpKind::CrossEntropy: {
      const Tensor& logits = *in[0];
      if (logits.rank() != 2 || logits.dim(0) != node.ids.size() || node.weights.size() != node.ids.size())
        shape_fail(op, "logits " + shape_str(logits.shape()) + " vs " + std::to_string(node.ids.size()) + " targets / " +
                           std::to_string(node.weights.size()) + " weights");
      const std::size_t rows = logits.dim(0), V = logits.dim(1);
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const int target = node.ids[r];
        if (target < 0 || static_cast<std::size_t>(target) >= V)
          fail(ErrorCode::InvalidArgument, "cross_entropy: target " + std::to_string(target) + " outside " + std::to_string(V) + " classes");
        if (node.weights[r] == 0.0) continue;
        auto row = logits.data().subspan(r * V, V);
        s += node.weights[r] * (log_sum_exp(row) - row[static_cast<std::size_t>(target)]);
      }
      node.value = Tensor::scalar(s);
      return;
    }

    case OpKind::Concat: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) shape_fail(op, two_shapes(a, b));
      const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
      node.value = Tensor({m, p + q});
      auto out = node.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * p), p, out.begin() + static_cast<std::ptrdiff_t>(i * (p + q)));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(i * q), q, out.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p));
      }
      return;
    }
  }
}

Tensor& grad_slot(GradientMap& grads, int id, const Tensor& like) {
  Tensor& g = grads.slot(id);
  if (g.empty() && like.size() > 0) g = Tensor(like.shape());
  if (g.shape() != like.shape()) g = Tensor(like.shape());
  return g;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size())
    fail(ErrorCode::Shape, "tensor: shape " + shape_str(shape_) + " holds " + std::to_string(product(shape_)) +
                               " values, got " + std::to_string(data_.size()));
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorCode::Shape, "item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void gemm_rows(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict row = out.data() + i * n;
    if (!accumulate) std::fill_n(row, n, 0.0);
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      const double* __restrict brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

void softmax_row(std::span<const double> logits, double tau, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    z += out[i];
  }
  for (auto& p : out) p /= z;
}

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softmax: return "softmax";
    case OpKind::Embedding: return "embedding";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::MaxPoolTime: return "max_pool_time";
    case OpKind::Mean: return "mean";
    case OpKind::SquaredError: return "squared_error";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Concat: return "concat";
  }
  return "unknown";
}

const Tensor& GradientMap::at(Var v) const {
  require(has(v), ErrorCode::Contract, "gradient requested for node " + std::to_string(v.id) + " that has none");
  return grads_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Tensor value) {
  TapeNode n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  TapeNode n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::apply(TapeNode node) {
  std::vector<const Tensor*> in;
  in.reserve(node.inputs.size());
  node.requires_grad = false;
  for (int id : node.inputs) {
    require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), ErrorCode::Contract,
            std::string(op_name(node.op)) + ": input id " + std::to_string(id) + " is not on this tape");
    in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
    node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  compute(node, in);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

namespace {
TapeNode make(OpKind op, std::initializer_list<Var> inputs) {
  TapeNode n;
  n.op = op;
  for (Var v : inputs) n.inputs.push_back(v.id);
  return n;
}
}  // namespace

Var Tape::matmul(Var a, Var b) { return apply(make(OpKind::MatMul, {a, b})); }
Var Tape::add(Var a, Var b) { return apply(make(OpKind::Add, {a, b})); }
Var Tape::mul(Var a, Var b) { return apply(make(OpKind::Mul, {a, b})); }
Var Tape::sigmoid(Var a) { return apply(make(OpKind::Sigmoid, {a})); }
Var Tape::tanh(Var a) { return apply(make(OpKind::Tanh, {a})); }
Var Tape::relu(Var a) { return apply(make(OpKind::Relu, {a})); }
Var Tape::max_pool_time(Var x) { return apply(make(OpKind::MaxPoolTime, {x})); }
Var Tape::mean(Var a) { return apply(make(OpKind::Mean, {a})); }
Var Tape::squared_error(Var a, Var b) { return apply(make(OpKind::SquaredError, {a, b})); }
Var Tape::concat(Var a, Var b) { return apply(make(OpKind::Concat, {a, b})); }
Var Tape::conv1d(Var x, Var w, Var bias) { return apply(make(OpKind::Conv1d, {x, w, bias})); }

Var Tape::scale(Var a, double factor) {
  auto n = make(OpKind::Scale, {a});
  n.scalar = factor;
  return apply(std::move(n));
}

Var Tape::softmax(Var logits, double tau) {
  auto n = make(OpKind::Softmax, {logits});
  n.scalar = tau;
  return apply(std::move(n));
}

Var Tape::embedding(Var table, std::vector<int> ids, Shape lead_shape) {
  auto n = make(OpKind::Embedding, {table});
  n.ids = std::move(ids);
  n.lead_shape = std::move(lead_shape);
  return apply(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights) {
  auto n = make(OpKind::CrossEntropy, {logits});
  n.ids = std::move(targets);
  n.weights = std::move(weights);
  return apply(std::move(n));
}

GradientMap Tape::backward(Var seed) const {
  require(seed.id >= 0 && static_cast<std::size_t>(seed.id) < nodes_.size(), ErrorCode::Contract,
          "backward: seed is not on this tape");
  const TapeNode& out = nodes_[static_cast<std::size_t>(seed.id)];
  require(out.value.size() == 1, ErrorCode::Contract,
          "backward: seed must be scalar, got shape " + shape_str(out.value.shape()));

  GradientMap grads(nodes_.size());
  grads.slot(seed.id) = Tensor(out.value.shape(), 1.0);

  for (int id = seed.id; id >= 0; --id) {
    const TapeNode& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || node.op == OpKind::Leaf) continue;
    const Tensor& g_out = grads.slot(id);
    if (g_out.empty()) continue;
    auto input = [&](std::size_t i) -> const TapeNode& { return nodes_[static_cast<std::size_t>(node.inputs[i])]; };
    auto wants = [&](std::size_t i) { return input(i).requires_grad; };
    auto slot = [&](std::size_t i) -> Tensor& { return grad_slot(grads, node.inputs[i], input(i).value); };
    const auto gy = g_out.data();

    switch (node.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;

      case OpKind::MatMul: {
        const Tensor& a = input(0).value;
        const Tensor& b = input(1).value;
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (wants(0)) {
          auto ga = slot(0).data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double* brow = b.data().data() + p * n;
              const double* grow = gy.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              ga[i * k + p] += s;
            }
        }
        if (wants(1)) {
          auto gb = slot(1).data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double s = a[i * k + p];
              double* __restrict dst = gb.data() + p * n;
              const double* grow = gy.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) dst[j] += s * grow[j];
            }
        }
        break;
      }

      case OpKind::Add: {
        if (wants(0)) {
          auto ga = slot(0).data();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (wants(1)) {
          auto gb = slot(1).data();
          const std::size_t n = gb.size();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i % n] += gy[i];
        }
        break;
      }

      case OpKind::Mul: {
        const Tensor& a = input(0).value;
        const Tensor& b = input(1).value;
        if (wants(0)) {
          auto ga = slot(0).data();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
        }
        if (wants(1)) {
          auto gb = slot(1).data();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
        }
        break;
      }

      case OpKind::Scale: {
        auto ga = slot(0).data();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * node.scalar;
        break;
      }

      case OpKind::Sigmoid: {
        auto ga = slot(0).data();
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double y = node.value[i];
          ga[i] += gy[i] * y * (1.0 - y);
        }
        break;
      }

      case OpKind::Tanh: {
        auto ga = slot(0).data();
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const double y = node.value[i];
          ga[i] += gy[i] * (1.0 - y * y);
        }
        break;
      }

      case OpKind::Relu: {
        auto ga = slot(0).data();
        const Tensor& x = input(0).value;
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (x[i] > 0.0) ga[i] += gy[i];
        break;
      }

      case OpKind::Softmax: {
        auto ga = slot(0).data();
        const std::size_t n = node.value.shape().back();
        for (std::size_t r = 0; r < node.value.size() / n; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * node.value[r * n + j];
          for (std::size_t j = 0; j < n; ++j)
            ga[r * n + j] += node.value[r * n + j] * (gy[r * n + j] - dot) / node.scalar;
        }
        break;
      }

      case OpKind::Embedding: {
        auto gt = slot(0).data();
        const std::size_t e = input(0).value.dim(1);
        for (std::size_t i = 0; i < node.ids.size(); ++i) {
          double* dst = gt.data() + static_cast<std::size_t>(node.ids[i]) * e;
          for (std::size_t j = 0; j < e; ++j) dst[j] += gy[i * e + j];
        }
        break;
      }

      case OpKind::Conv1d: {
        const Tensor& x = input(0).value;
        const Tensor& w = input(1).value;
        const std::size_t B = x.dim(0), T = x.dim(1), cin = x.dim(2), width = w.dim(0), cout = w.dim(2);
        const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((width - 1) / 2);
        Tensor* gx = wants(0) ? &slot(0) : nullptr;
        Tensor* gw = wants(1) ? &slot(1) : nullptr;
        Tensor* gbias = wants(2) ? &slot(2) : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t t = 0; t < T; ++t) {
            const double* grow = gy.data() + (b * T + t) * cout;
            if (gbias)
              for (std::size_t o = 0; o < cout; ++o) (*gbias)[o] += grow[o];
            for (std::size_t j = 0; j < width; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
              const std::size_t xoff = (b * T + static_cast<std::size_t>(src)) * cin;
              const double* wj = w.data().data() + j * cin * cout;
              for (std::size_t c = 0; c < cin; ++c) {
                if (gw) {
                  const double s = x[xoff + c];
                  double* __restrict dst = gw->data().data() + (j * cin + c) * cout;
                  for (std::size_t o = 0; o < cout; ++o) dst[o] += s * grow[o];
                }
                if (gx) {
                  double s = 0.0;
                  const double* wrow = wj + c * cout;
                  for (std::size_t o = 0; o < cout; ++o) s += grow[o] * wrow[o];
                  (*gx)[xoff + c] += s;
                }
              }
            }
          }
        }
        break;
      }

      case OpKind::MaxPoolTime: {
        auto gx = slot(0).data();
        const Tensor& x = input(0).value;
        const std::size_t T = x.dim(1), C = x.dim(2);
        for (std::size_t bc = 0; bc < node.argmax.size(); ++bc) {
          const std::size_t b = bc / C, c = bc % C;
          gx[(b * T + node.argmax[bc]) * C + c] += gy[bc];
        }
        break;
      }

      case OpKind::Mean: {
        auto ga = slot(0).data();
        const double s = gy[0] / static_cast<double>(ga.size());
        for (auto& g : ga) g += s;
        break;
      }

      case OpKind::SquaredError: {
        const Tensor& a = input(0).value;
        const Tensor& b = input(1).value;
        const double f = 2.0 * gy[0] / static_cast<double>(a.size());
        if (wants(0)) {
          auto ga = slot(0).data();
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += f * (a[i] - b[i]);
        }
        if (wants(1)) {
          auto gb = slot(1).data();
          for (std::size_t i = 0; i < a.size(); ++i) gb[i] -= f * (a[i] - b[i]);
        }
        break;
      }

      case OpKind::CrossEntropy: {
        const Tensor& logits = input(0).value;
        auto gl = slot(0).data();
        const std::size_t V = logits.dim(1);
        std::vector<double> p(V);
        for (std::size_t r = 0; r < node.ids.size(); ++r) {
          if (node.weights[r] == 0.0) continue;
          softmax_row(logits.data().subspan(r * V, V), 1.0, p);
          const double s = gy[0] * node.weights[r];
          for (std::size_t j = 0; j < V; ++j) gl[r * V + j] += s * p[j];
          gl[r * V + static_cast<std::size_t>(node.ids[r])] -= s;
        }
        break;
      }

      case OpKind::Concat: {
        const std::size_t m = input(0).value.dim(0), p = input(0).value.dim(1), q = input(1).value.dim(1);
        if (wants(0)) {
          auto ga = slot(0).data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += gy[i * (p + q) + j];
        }
        if (wants(1)) {
          auto gb = slot(1).data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += gy[i * (p + q) + p + j];
        }
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id)
    if (nodes_[id].op == OpKind::Leaf && grads.slot(static_cast<int>(id)).empty())
      grads.slot(static_cast<int>(id)) = Tensor(nodes_[id].value.shape());
  return grads;
}

bool Tape::replay_matches() const {
  std::vector<TapeNode> fresh;
  fresh.reserve(nodes_.size());
  for (const auto& original : nodes_) {
    TapeNode n = original;
    if (n.op != OpKind::Leaf && n.op != OpKind::Constant) {
      std::vector<const Tensor*> in;
      for (int id : n.inputs) in.push_back(&fresh[static_cast<std::size_t>(id)].value);
      n.value = Tensor();
      n.argmax.clear();
      compute(n, in);
      if (n.value.shape() != original.value.shape() || n.argmax != original.argmax) return false;
      if (std::memcmp(n.value.data().data(), original.value.data().data(), n.value.size() * sizeof(double)) != 0) return false;
    }
    fresh.push_back(std::move(n));
  }
  return true;
}

std::size_t ParamSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  fail(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& t : values) n += t.size();
  return n;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    feed(names[i].data(), names[i].size());
    for (auto d : values[i].shape()) {
      const std::uint64_t d64 = d;
      feed(&d64, sizeof d64);
    }
    feed(values[i].data().data(), values[i].size() * sizeof(double));
  }
  return h;
}

bool ParamSet::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](const Tensor& t) { return t.all_finite(); });
}

AdamState AdamState::for_params(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config) {
  require(config.lr > 0.0, ErrorCode::Domain, "adam: learning rate must be > 0");
  if (state.m.empty() && state.step == 0) state = AdamState::for_params(params);
  require(grads.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::Shape, "adam: parameter, gradient and moment counts differ");
  double max_abs = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].shape() == params[i].shape() && state.m[i].shape() == params[i].shape(), ErrorCode::Shape,
            "adam: gradient " + std::to_string(i) + " shape " + shape_str(grads[i].shape()) + " vs parameter " +
                shape_str(params[i].shape()));
    for (double g : grads[i].data()) {
      if (!std::isfinite(g))
        ++bad;
      else
        max_abs = std::max(max_abs, std::abs(g));
    }
  }
  if (bad > 0) {
    std::ostringstream msg;
    msg << "adam: update " << state.step + 1 << " aborted, " << bad << " non-finite gradient values (max finite |grad| = "
        << max_abs << ")";
    fail(ErrorCode::Numeric, msg.str());
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (auto& x : g.data()) x *= f;
  }
  return norm;
}

double grad_check(const DifferentiableFn& f, const std::vector<Tensor>& params, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, ErrorCode::Domain, "grad_check: step must lie in [1e-7, 1e-3]");
  auto [value, analytic] = f(params);
  auto [value2, analytic2] = f(params);
  if (std::memcmp(&value, &value2, sizeof value) != 0 || analytic != analytic2)
    fail(ErrorCode::Contract, "grad_check: function is not deterministic (two evaluations differ)");
  require(analytic.size() == params.size(), ErrorCode::Shape, "grad_check: gradient count differs from parameter count");

  std::vector<Tensor> x = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(analytic[i].shape() == x[i].shape(), ErrorCode::Shape, "grad_check: gradient shape mismatch");
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      const double orig = x[i][j];
      x[i][j] = orig + eps;
      const double up = f(x).first;
      x[i][j] = orig - eps;
      const double down = f(x).first;
      x[i][j] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

namespace {

constexpr std::string_view kCheckpointMagic = "memr-checkpoint";
constexpr int kCheckpointVersion = 1;

std::uint64_t to_little(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xffULL) << (8 * (7 - i));
  return r;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ostringstream header;
  header << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  header << "tensors " << params.size() << '\n';
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names[i];
    require(!name.empty() && name.find_first_of(" \t\r\n") == std::string::npos, ErrorCode::InvalidArgument,
            "checkpoint: parameter name '" + name + "' must be non-empty without whitespace");
    header << name << ' ' << offset << ' ' << params.values[i].rank();
    for (auto d : params.values[i].shape()) header << ' ' << d;
    header << '\n';
    offset += params.values[i].size() * sizeof(double);
  }
  header << "data " << offset << '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write checkpoint " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& t : params.values)
    for (double v : t.data()) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing checkpoint " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open checkpoint " + path.string());
  auto bad = [&](const std::string& why) { fail(ErrorCode::Io, "malformed checkpoint " + path.string() + ": " + why); };

  std::string line;
  if (!std::getline(in, line)) bad("missing header");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kCheckpointMagic) bad("bad magic");
    if (version != kCheckpointVersion) bad("unsupported version " + std::to_string(version));
  }
  std::size_t count = 0;
  {
    if (!std::getline(in, line)) bad("missing tensor count");
    std::istringstream ls(line);
    std::string key;
    ls >> key >> count;
    if (key != "tensors" || !ls) bad("bad tensor count line");
  }
  ParamSet ps;
  std::vector<std::size_t> offsets;
  std::size_t expected = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) bad("truncated manifest");
    std::istringstream ls(line);
    std::string name;
    std::size_t offset = 0, rank = 0;
    ls >> name >> offset >> rank;
    if (!ls) bad("bad tensor line '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape) ls >> d;
    if (!ls) bad("bad shape on line '" + line + "'");
    if (offset != expected) bad("non-contiguous offset for " + name);
    ps.names.push_back(name);
    ps.values.emplace_back(shape);
    expected += ps.values.back().size() * sizeof(double);
  }
  {
    if (!std::getline(in, line)) bad("missing data line");
    std::istringstream ls(line);
    std::string key;
    std::size_t total = 0;
    ls >> key >> total;
    if (key != "data" || total != expected) bad("data size mismatch");
  }
  for (auto& t : ps.values)
    for (auto& v : t.data()) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) bad("truncated data");
      v = std::bit_cast<double>(to_little(bits));
    }
  if (in.peek() != std::char_traits<char>::eof()) bad("trailing bytes");
  return ps;
}

}  // namespace memr
