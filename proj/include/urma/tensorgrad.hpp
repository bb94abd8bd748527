#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace urma::tg {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 is treated as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }
  double* data() noexcept { return values_.data(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double item() const;

  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  /// Zero-filled when nothing flowed into this node.
  Tensor grad() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

/// Records operations for reverse-mode differentiation. In inference mode no backward closures are kept.
class Tape {
 public:
  enum class Mode { record, inference };
  using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return mode_ == Mode::record; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  Var leaf(Tensor value);

  /// Seeds d(output)/d(output) = 1 for a single-element output and runs every closure once in reverse order.
  void backward(Var output);

  const Tensor& value(Var v) const;
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Op plumbing. The result requires grad iff any input does.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  void accumulate(Var target, const Tensor& contribution);
  void accumulate(Var target, std::span<const double> contribution);
  double* grad_buffer(Var target);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  void check_owned(Var v) const;

  Mode mode_;
  std::deque<Node> nodes_;
};

// Elementwise ops accept equal shapes or a single-element operand on either side.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);

enum class ElementwiseOp { add, mul, tanh, exp, neg, scale };
Var elementwise(ElementwiseOp op, std::span<const Var> args, double scalar = 1.0);

/// (m x k) . (k x n). Rank-1 operands are treated as a single row.
Var matmul(Var a, Var b);
/// x (r x c) + bias (c).
Var add_rowwise(Var x, Var bias);
/// Per-row normalization over the last axis with a 1e-5 variance stabilizer, then gain and bias.
Var layer_norm(Var x, Var gain, Var bias);
Var layer_norm(Var x);
/// Row-wise softmax(x / (tau + eps)); tau is a single-element var.
Var softmax_with_temperature(Var x, Var tau, double eps);

/// Column sums over the rows of x, evaluated on sorted values with a fixed pairwise tree.
/// The result does not depend on row order, bit for bit.
Var reduce_sum_over_set(Var x);
/// Row i of x is added into output row segments[i]; each output row is reduced like reduce_sum_over_set.
Var segment_sum(Var x, std::span<const std::uint32_t> segments, std::size_t count);

Var gather_rows(Var x, std::span<const std::uint32_t> indices);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var x, Shape shape);

Var sum_all(Var x);
Var mean_all(Var x);

/// Elementwise log N(sample; mean, std^2).
Var gaussian_logdensity(Var mean, Var std, Var sample);
/// Sum of the elementwise log densities.
Var gaussian_logprob(Var mean, Var std, Var sample);

/// Sum of values in a fixed pairwise tree after sorting; used wherever set reductions must be order free.
double pairwise_sorted_sum(std::span<double> values);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using GradCheckFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Central-difference check of d f / d inputs. f must return a single-element var.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const GradCheckFn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                           double floor = 1e-6);
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5);

}  // namespace urma::tg
