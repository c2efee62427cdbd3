#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tcbp/sketch.hpp"

// Minimal reverse-mode differentiation for the clip encoder and the ordering
// losses. Values are dense row-major matrices; vectors are n x 1.
namespace tcbp::ad {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values);

  static Tensor column(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;
};

// A learnable tensor with its gradient buffer. `decay` marks whether weight
// decay applies (weights yes, biases no).
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;

  Param() = default;
  Param(std::string n, Tensor v, bool apply_decay);
  void zero_grad();
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  std::size_t id() const { return id_; }
  bool valid() const { return id_ != kInvalid; }

 private:
  friend class Tape;
  explicit Var(std::size_t id) : id_(id) {}
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id_ = kInvalid;
};

// Records operations in execution order; backward() replays them in exact
// reverse order. One tape per example or batch, single-threaded.
// Tensors referenced by param()/frozen() and sketch params captured by
// recorded ops must outlive the tape.
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into its inputs
  // through Tape::grad_buffer.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var input(Tensor value);
  // Gradients flow straight into p.grad. Binding the same Param twice returns
  // the same Var.
  Var param(Param& p);
  // Read-only leaf; gradients (if any) stay on the tape.
  Var frozen(const Tensor& value);
  Var record(const char* op, Tensor value, Backward backward);

  const Tensor& value(Var v) const;
  // nullptr if no gradient reached this node.
  const Tensor* grad(Var v) const;
  Tensor& grad_buffer(Var v);
  const char* op_name(Var v) const;

  // Seeds d(out) with `seed` and propagates to every recorded node.
  void backward(Var out, const Tensor& seed);
  // Same with seed 1 for a 1x1 output.
  void backward(Var scalar_out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor owned;
    const Tensor* ref = nullptr;
    Param* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    Backward backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  std::vector<std::pair<const Param*, std::size_t>> bound_params_;
};

// ---- differentiable operations ------------------------------------------

// W (m x n) times X (n x k).
Var matmul(Tape& tape, Var w, Var x);
// Y (m x k) plus bias b (m x 1) broadcast over columns.
Var add_bias(Tape& tape, Var y, Var b);
Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var relu(Tape& tape, Var x);
// |x|; subgradient 0 at 0.
Var abs(Tape& tape, Var x);

inline constexpr double kSignedSqrtClamp = 1e-8;
inline constexpr double kL2Epsilon = 1e-12;

// sign(x) * sqrt(|x|). The derivative clamps |x| at kSignedSqrtClamp.
Var signed_sqrt(Tape& tape, Var x);
// x / (||x||_2 + kL2Epsilon) over all entries.
Var l2_normalize(Tape& tape, Var x);

// Sum over columns: m x k -> m x 1.
Var sum_pool(Tape& tape, Var x);
// m x k -> (m*k) x 1, segment after segment: out[t*m + i] = X(i, t).
Var flatten_columns(Tape& tape, Var x);

// Sketch projection of a c x t map with per-(channel, segment) signs `s`
// (row-major c x t): out[h[i]] += sum_t s[i,t] X(i,t). The spans must outlive
// the tape.
Var count_sketch(Tape& tape, Var x, std::span<const std::uint32_t> h,
                 std::span<const std::int8_t> s, std::size_t dim);
// out[k] = sum_j a[j] b[(k-j) mod d] for d x 1 inputs.
Var circular_convolve(Tape& tape, Var a, Var b);
// Fused temporal compact bilinear pooling (TCBP-mode params).
Var tcbp(Tape& tape, Var x, const SketchParams& params);
// Fused compact bilinear pooling: per-column tensor sketch, sum-pooled.
Var cbp(Tape& tape, Var x, const SketchParams& params);

// sum_k max(0, a[k] - b[k])^2 -> 1 x 1.
Var pair_loss(Tape& tape, Var a, Var b);
// max(0, margin - loss) for a 1 x 1 loss.
Var margin_hinge(Tape& tape, Var loss, double margin);

}  // namespace tcbp::ad
