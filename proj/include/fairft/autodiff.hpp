#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// double tensors (rank 0, 1 or 2).

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fairft::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);

class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Rows/cols of a rank-2 tensor; a rank-1 tensor is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double item() const;

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zeroed gradient buffer if none is present.
  void require_grad();
  void zero_grad();
  void drop_grad() { grad_.reset(); }
  std::span<const double> grad() const;
  std::span<double> grad();

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

enum class OpKind {
  constant,
  parameter,
  view,
  matmul,
  add,
  sub,
  mul,
  relu,
  sigmoid,
  log,
  mul_scalar,
  affine,
  sum,
  mean,
  abs,
  clamp,
  dot,
};

std::string_view to_string(OpKind k);

class Tape;

// Handle to a node recorded on a tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  const Tensor& value() const;
  double item() const { return value().item(); }
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t i) : tape_(t), index_(i) {}
  Tape* tape_;
  std::size_t index_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  // Leaf whose gradient is accumulated into `target.grad()` by backward().
  // `target` must outlive the backward call.
  Var parameter(Tensor& target);

  // Propagates d(root)/d(leaf) into every bound parameter. Consumes the tape.
  void backward(Var root);

  // Appends an operation node. Used by the op functions below; `aux` holds
  // op-specific constants (e.g. dot weights).
  Var record(OpKind kind, std::initializer_list<Var> inputs, Tensor value, double s0 = 0.0,
             double s1 = 0.0, std::vector<double> aux = {});

  void clear();
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t i) const { return nodes_[i].value; }

 private:
  struct Node {
    OpKind kind;
    std::size_t in0 = 0, in1 = 0;
    int arity = 0;
    Tensor value;
    double s0 = 0.0, s1 = 0.0;
    std::vector<double> aux;
    Tensor* target = nullptr;
  };

  Var push(Node n);
  void check_open(OpKind k) const;
  void propagate(const Node& n, std::span<const double> gy,
                 std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Operations. Every op records onto the tape of its inputs and throws
// DimensionError on incompatible shapes and NumericError on non-finite output.
Var view(Var x, std::size_t offset, Shape shape);  // contiguous sub-block
Var matmul(Var a, Var b);
Var add(Var a, Var b);  // same shape, or (n x m) + (1 x m) row broadcast
Var sub(Var a, Var b);  // same shape
Var mul(Var a, Var b);  // elementwise, same shape
Var relu(Var x);
Var sigmoid(Var x);
Var log(Var x);  // requires x > 0
Var mul_scalar(Var x, double s);
Var affine(Var x, double scale, double shift);  // scale * x + shift
Var sum(Var x);
Var mean(Var x);
Var abs(Var x);
Var clamp(Var x, double lo, double hi);
Var dot(Var x, std::span<const double> weights);  // sum_i w_i x_i, weights constant

// Central-difference gradient check of a taped scalar objective.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

using TapedObjective = std::function<Var(Tape&, Var theta)>;

// Returns max_i |g_analytic - g_fd| / max(1e-8, |g_fd|). Throws NumericError
// naming the coordinate when a probe evaluation is non-finite.
GradCheckResult grad_check(const TapedObjective& objective, std::span<const double> theta,
                           double h);

}  // namespace fairft::ad
