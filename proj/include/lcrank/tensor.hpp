#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation
// on a define-by-run tape, plus the LSTM recurrence and an Adam optimizer.
// The graph is rebuilt for every forward pass; tensors are immutable once a
// node owns them, so sharing across threads is read-only safe.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lcrank {

// Deterministic RNG. mt19937_64 supplies the bits; all transforms to doubles
// and bounded ints are explicit so the stream is identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [lo, hi)
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  // [0, n)
  std::int64_t uniform_int(std::int64_t n);

  double gaussian(double mean = 0.0, double sd = 1.0);

  // 10^U[log10(lo), log10(hi)]
  double log_uniform(double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

// splitmix64 step; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // sized like values iff requires_grad

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v, bool rg = false);

  static Tensor zeros(Shape s, bool rg = false);
  static Tensor full(Shape s, double v, bool rg = false);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);     // [1 x n]
  static Tensor column(std::vector<double> v);  // [n x 1]
  static Tensor matrix(int r, int c, std::vector<double> v);

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols() + j]; }

  void set_requires_grad(bool rg);
  void zero_grad();
  bool all_finite() const;
};

// Weight initializers. Dense/conv/LSTM weights use uniform
// [-sqrt(6/(fan_in+fan_out)), +], biases start at zero and embedding tables
// at uniform [-0.1, 0.1].
Tensor glorot_uniform(Shape s, int fan_in, int fan_out, Rng& rng);
Tensor uniform_init(Shape s, double lo, double hi, Rng& rng);

// Handle to a node on a Graph tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run tape. Nodes are appended in topological order by
// construction; backward() walks them once in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf with no gradient.
  Var constant(Tensor t);
  // Leaf bound to an external parameter; backward() accumulates into
  // param.grad when param.requires_grad is set. `param` must outlive the
  // graph.
  Var leaf(Tensor& param);

  // Elementwise; equal shapes or scalar (numel == 1) broadcast.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // [B x H] + [1 x H] row broadcast.
  Var add_rows(Var x, Var row);
  Var scale(Var x, double s);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var exp(Var x);
  Var log(Var x);  // domain error on non-positive input
  Var clamp(Var x, double lo, double hi);

  Var matmul(Var a, Var b);  // [m x k] . [k x n]
  Var concat(const std::vector<Var>& parts, int axis);
  Var slice(Var x, int axis, int start, int len);
  Var reshape(Var x, Shape s);

  Var reduce_sum(Var x);  // -> [1]
  Var reduce_max(Var x);  // -> [1]; gradient routed to first maximal element
  Var mean(Var x);
  Var softmax(Var x);  // row-wise for rank 2, whole vector for rank 1

  // signal [l x c_in], kernels [k x c_in x c_out], bias [c_out]
  // -> [(l-k+1) x c_out], stride 1, no padding.
  Var conv1d_valid(Var signal, Var kernels, Var bias);
  // [l x c] -> [c]; per-channel max over the length axis, gradient to the
  // first maximal position.
  Var global_max_pool(Var signal);
  // [N x c] -> [N/segment x c]; per-channel max over consecutive blocks of
  // `segment` rows (N must divide evenly), gradient to the first maximal
  // row of each block. Batched form of global_max_pool.
  Var segment_max_pool(Var x, int segment);

  Var embedding_lookup(Var table, int index);              // [V x D] -> [D]
  Var rows_lookup(Var table, std::vector<int> indices);    // [V x D] -> [B x D]

  // Reverse accumulation from a scalar loss. Leaf parameters receive their
  // gradients in param.grad (accumulated, not overwritten).
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient buffer of a node after backward(); empty before.
  const std::vector<double>& grad(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor out;
    std::vector<double> grad;
    Tensor* bound = nullptr;
    std::function<void(Graph&)> backprop;  // empty for leaves
  };

  // Deque keeps value()/grad() references stable while nodes are appended.
  std::deque<Node> nodes_;

  Var emplace(Tensor out, std::function<void(Graph&)> bp);
  Var elementwise_(Var a, Var b, int kind_tag);
  std::vector<double>& grad_buf(int id);
  const Tensor& out_of(int id) const { return nodes_[static_cast<std::size_t>(id)].out; }
  void check(Var v) const;
};

struct LstmParams {
  // Gate order: input, forget, cell candidate, output.
  Tensor wi, wf, wg, wo;  // [in x H]
  Tensor ui, uf, ug, uo;  // [H x H]
  Tensor bi, bf, bg, bo;  // [1 x H]

  static LstmParams init(int in_dim, int hidden_dim, Rng& rng);
  int hidden_dim() const { return ui.rows(); }
  int in_dim() const { return wi.rows(); }
  std::vector<Tensor*> tensors();
  std::vector<std::pair<std::string, Tensor*>> named_tensors(const std::string& prefix);
};

struct LstmStepState {
  Var h;  // [B x H]
  Var c;  // [B x H]
};

struct LstmTrace {
  std::vector<Var> outputs;  // one [B x H] per step
  LstmStepState final_state;
};

// Standard LSTM recurrence over a sequence of [B x in] inputs, zero initial
// state. Throws on an empty sequence.
LstmTrace lstm_forward(Graph& g, const std::vector<Var>& inputs, LstmParams& p, int batch);
// Single cell step from an explicit state.
LstmStepState lstm_cell(Graph& g, Var x, const LstmStepState& state, LstmParams& p);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor*>& params, double lr = 1e-3,
                     double b1 = 0.9, double b2 = 0.999, double eps = 1e-8);
};

// Bias-corrected Adam update reading param->grad for each parameter.
// Parameter order must match the one AdamState was built from.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

}  // namespace lcrank
