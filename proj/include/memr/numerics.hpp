#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace memr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a single-element tensor.
  double item() const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Row-wise dense kernels. Each output row depends only on the matching input
// row, so results are identical whatever the batch composition.
void gemm_rows(std::span<const double> a, std::span<const double> b, std::span<double> out,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

void softmax_row(std::span<const double> logits, double tau, std::span<double> out);
double log_sum_exp(std::span<const double> xs);

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Mul,
  Scale,
  Sigmoid,
  Tanh,
  Relu,
  Softmax,
  Embedding,
  Conv1d,
  MaxPoolTime,
  Mean,
  SquaredError,
  CrossEntropy,
  Concat,
};

std::string_view op_name(OpKind op);

struct Var {
  int id = -1;
  friend bool operator==(Var, Var) = default;
};

struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<int> inputs;
  Tensor value;
  // Op attributes.
  double scalar = 0.0;           // temperature (Softmax), factor (Scale)
  std::vector<int> ids;          // lookup ids (Embedding), targets (CrossEntropy)
  std::vector<double> weights;   // per-row weights (CrossEntropy)
  Shape lead_shape;              // output leading dims (Embedding)
  // Saved forward state.
  std::vector<std::size_t> argmax;  // MaxPoolTime
  bool requires_grad = false;
};

class GradientMap {
 public:
  explicit GradientMap(std::size_t n) : grads_(n) {}
  bool has(Var v) const { return v.id >= 0 && static_cast<std::size_t>(v.id) < grads_.size() && !grads_[v.id].empty(); }
  // Gradient of the seed w.r.t. v; a zero tensor of v's shape when v does not
  // influence the seed is produced by the tape, not here.
  const Tensor& at(Var v) const;
  Tensor& slot(int id) { return grads_[static_cast<std::size_t>(id)]; }

 private:
  std::vector<Tensor> grads_;
};

// Reverse-mode record. Nodes are appended in execution order, so every input
// id precedes its consumer.
class Tape {
 public:
  Var leaf(Tensor value);
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  // Same shapes, or b one-dimensional matching a's last dim (row broadcast).
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softmax(Var logits, double tau);
  Var embedding(Var table, std::vector<int> ids, Shape lead_shape);
  // x [B,T,Cin], w [width,Cin,Cout], bias [Cout]; same-length zero padding.
  Var conv1d(Var x, Var w, Var bias);
  // [B,T,C] -> [B,C]
  Var max_pool_time(Var x);
  Var mean(Var a);
  // mean((a - b)^2)
  Var squared_error(Var a, Var b);
  // sum_b weights[b] * -log softmax(logits_b)[targets[b]]
  Var cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights);
  // Concatenate two rank-2 tensors along the last dim.
  Var concat(Var a, Var b);

  // Generic entry: inputs and attributes described by a node template.
  Var apply(TapeNode node);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  const TapeNode& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  std::size_t size() const noexcept { return nodes_.size(); }

  GradientMap backward(Var seed) const;

  // Recomputes every non-leaf node from its inputs and reports whether the
  // saved activations are reproduced bit-exactly.
  bool replay_matches() const;

 private:
  std::vector<TapeNode> nodes_;
};

// Named, ordered parameter tensors (actor and critic weights, Adam moments).
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t index(std::string_view name) const;
  std::size_t element_count() const;
  // FNV-1a over names, shapes and raw bytes.
  std::uint64_t checksum() const;
  bool all_finite() const;
  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamState for_params(const std::vector<Tensor>& params);
};

// Throws ErrorCode::Numeric (naming the step and max |grad|) without touching
// params or state when any gradient is not finite.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& config);

// Rescales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// Scalar function of parameter tensors returning its value and analytic
// gradients (same shapes as the inputs).
using DifferentiableFn = std::function<std::pair<double, std::vector<Tensor>>(const std::vector<Tensor>&)>;

// max over coordinates of |analytic - central difference| / max(1, |analytic|)
double grad_check(const DifferentiableFn& f, const std::vector<Tensor>& params, double eps);

// Manifest text (version, names, shapes, byte offsets) followed by raw
// little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace memr
