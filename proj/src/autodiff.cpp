#include "fairft/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fairft/error.hpp"
#include "fairft/kernels/kernels.hpp"

namespace fairft::ad {

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

std::size_t shape_product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double> transpose(std::span<const double> v, std::size_t rows, std::size_t cols) {
  std::vector<double> t(v.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = v[r * cols + c];
  return t;
}

[[noreturn]] void shape_mismatch(OpKind k, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(to_string(k)) + ": incompatible shapes " +
                       shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void same_tape(Var a, Var b, OpKind k) {
  if (&a.tape() != &b.tape())
    throw ContractError(std::string(to_string(k)) + ": operands recorded on different tapes");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 2)
    throw DimensionError("tensor rank " + std::to_string(shape_.size()) + " not supported");
  if (shape_product(shape_) != values_.size())
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

void Tensor::require_grad() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw StateError("tensor has no gradient buffer");
  return *grad_;
}

std::span<double> Tensor::grad() {
  if (!grad_) throw StateError("tensor has no gradient buffer");
  return *grad_;
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::view: return "view";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log: return "log";
    case OpKind::mul_scalar: return "mul_scalar";
    case OpKind::affine: return "affine";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::abs: return "abs";
    case OpKind::clamp: return "clamp";
    case OpKind::dot: return "dot";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(index_); }

void Tape::check_open(OpKind k) const {
  if (consumed_)
    throw StateError(std::string(to_string(k)) + ": tape already consumed by backward(); clear it");
}

Var Tape::push(Node n) {
  check_open(n.kind);
  if (!n.value.all_finite())
    throw NumericError(std::string(to_string(n.kind)) + ": non-finite output");
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& target) {
  Node n;
  n.kind = OpKind::parameter;
  n.value = Tensor(target.shape(), std::vector<double>(target.values().begin(), target.values().end()));
  n.target = &target;
  return push(std::move(n));
}

Var Tape::record(OpKind kind, std::initializer_list<Var> inputs, Tensor value, double s0, double s1,
                 std::vector<double> aux) {
  Node n;
  n.kind = kind;
  n.arity = static_cast<int>(inputs.size());
  auto it = inputs.begin();
  if (n.arity > 0) n.in0 = it->index();
  if (n.arity > 1) n.in1 = (it + 1)->index();
  for (const Var& v : inputs)
    if (&v.tape() != this) throw ContractError("record: input belongs to another tape");
  n.value = std::move(value);
  n.s0 = s0;
  n.s1 = s1;
  n.aux = std::move(aux);
  return push(std::move(n));
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(Var root) {
  if (consumed_) throw StateError("backward: tape already consumed");
  if (&root.tape() != this) throw ContractError("backward: root belongs to another tape");
  const Node& r = nodes_[root.index()];
  if (r.value.size() != 1)
    throw ContractError("backward: root must be scalar, got shape " + shape_string(r.value.shape()));

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[root.index()].assign(1, 1.0);

  for (std::size_t i = root.index() + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::parameter) {
      n.target->require_grad();
      kernels::axpy(1.0, grads[i], n.target->grad());
      continue;
    }
    propagate(n, grads[i], grads);
  }
  consumed_ = true;

  for (const Node& n : nodes_) {
    if (n.kind != OpKind::parameter) continue;
    for (double g : n.target->grad())
      if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
  }
}

void Tape::propagate(const Node& n, std::span<const double> gy,
                     std::vector<std::vector<double>>& grads) const {
  auto slot = [&](std::size_t idx) -> std::vector<double>& {
    auto& g = grads[idx];
    if (g.empty()) g.assign(nodes_[idx].value.size(), 0.0);
    return g;
  };
  const Tensor& y = n.value;

  switch (n.kind) {
    case OpKind::constant:
    case OpKind::parameter:
      break;
    case OpKind::view: {
      auto& gx = slot(n.in0);
      const auto off = static_cast<std::size_t>(n.s0);
      kernels::axpy(1.0, gy, std::span<double>(gx).subspan(off, gy.size()));
      break;
    }
    case OpKind::matmul: {
      const Tensor& a = nodes_[n.in0].value;
      const Tensor& b = nodes_[n.in1].value;
      const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
      // dA += dC * B^T ; dB += A^T * dC
      const auto bt = transpose(b.values(), k, nn);
      kernels::gemm_acc(gy, bt, slot(n.in0), m, nn, k);
      const auto at = transpose(a.values(), m, k);
      kernels::gemm_acc(at, gy, slot(n.in1), k, m, nn);
      break;
    }
    case OpKind::add: {
      kernels::axpy(1.0, gy, slot(n.in0));
      auto& gb = slot(n.in1);
      if (gb.size() == gy.size()) {
        kernels::axpy(1.0, gy, gb);
      } else {
        const std::size_t cols = gb.size();
        for (std::size_t r = 0; r < gy.size() / cols; ++r)
          kernels::axpy(1.0, gy.subspan(r * cols, cols), gb);
      }
      break;
    }
    case OpKind::sub:
      kernels::axpy(1.0, gy, slot(n.in0));
      kernels::axpy(-1.0, gy, slot(n.in1));
      break;
    case OpKind::mul: {
      std::vector<double> tmp(gy.size());
      kernels::mul(gy, nodes_[n.in1].value.values(), tmp);
      kernels::axpy(1.0, tmp, slot(n.in0));
      kernels::mul(gy, nodes_[n.in0].value.values(), tmp);
      kernels::axpy(1.0, tmp, slot(n.in1));
      break;
    }
    case OpKind::relu:
      kernels::relu_backward_acc(nodes_[n.in0].value.values(), gy, slot(n.in0));
      break;
    case OpKind::sigmoid: {
      auto& gx = slot(n.in0);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (y[i] * (1.0 - y[i]));
      break;
    }
    case OpKind::log: {
      auto& gx = slot(n.in0);
      const Tensor& x = nodes_[n.in0].value;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / x[i];
      break;
    }
    case OpKind::mul_scalar:
    case OpKind::affine:
      kernels::axpy(n.s0, gy, slot(n.in0));
      break;
    case OpKind::sum: {
      auto& gx = slot(n.in0);
      for (double& g : gx) g += gy[0];
      break;
    }
    case OpKind::mean: {
      auto& gx = slot(n.in0);
      const double scale = gy[0] / static_cast<double>(gx.size());
      for (double& g : gx) g += scale;
      break;
    }
    case OpKind::abs: {
      auto& gx = slot(n.in0);
      const Tensor& x = nodes_[n.in0].value;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double sign = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        gx[i] += gy[i] * sign;
      }
      break;
    }
    case OpKind::clamp: {
      auto& gx = slot(n.in0);
      const Tensor& x = nodes_[n.in0].value;
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (x[i] >= n.s0 && x[i] <= n.s1) gx[i] += gy[i];
      break;
    }
    case OpKind::dot:
      kernels::axpy(gy[0], n.aux, slot(n.in0));
      break;
  }
}

// ---------------------------------------------------------------------------
// Operations

Var view(Var x, std::size_t offset, Shape shape) {
  const Tensor& v = x.value();
  const std::size_t n = shape_product(shape);
  if (offset + n > v.size())
    throw DimensionError("view: block [" + std::to_string(offset) + ", " +
                         std::to_string(offset + n) + ") exceeds tensor of size " +
                         std::to_string(v.size()));
  std::vector<double> vals(v.values().begin() + static_cast<std::ptrdiff_t>(offset),
                           v.values().begin() + static_cast<std::ptrdiff_t>(offset + n));
  return x.tape().record(OpKind::view, {x}, Tensor(std::move(shape), std::move(vals)),
                         static_cast<double>(offset));
}

Var matmul(Var a, Var b) {
  same_tape(a, b, OpKind::matmul);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) shape_mismatch(OpKind::matmul, ta, tb);
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm_acc(ta.values(), tb.values(), out.values(), m, k, n);
  return a.tape().record(OpKind::matmul, {a, b}, std::move(out));
}

Var add(Var a, Var b) {
  same_tape(a, b, OpKind::add);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  Tensor out = Tensor::zeros(ta.shape());
  if (ta.shape() == tb.shape()) {
    kernels::add(ta.values(), tb.values(), out.values());
  } else if (ta.rank() == 2 && tb.size() == ta.cols() && tb.rows() == 1) {
    const std::size_t cols = ta.cols();
    for (std::size_t r = 0; r < ta.rows(); ++r)
      kernels::add(ta.values().subspan(r * cols, cols), tb.values(),
                   out.values().subspan(r * cols, cols));
  } else {
    shape_mismatch(OpKind::add, ta, tb);
  }
  return a.tape().record(OpKind::add, {a, b}, std::move(out));
}

Var sub(Var a, Var b) {
  same_tape(a, b, OpKind::sub);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.shape() != tb.shape()) shape_mismatch(OpKind::sub, ta, tb);
  Tensor out = Tensor::zeros(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] = ta[i] - tb[i];
  return a.tape().record(OpKind::sub, {a, b}, std::move(out));
}

Var mul(Var a, Var b) {
  same_tape(a, b, OpKind::mul);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.shape() != tb.shape()) shape_mismatch(OpKind::mul, ta, tb);
  Tensor out = Tensor::zeros(ta.shape());
  kernels::mul(ta.values(), tb.values(), out.values());
  return a.tape().record(OpKind::mul, {a, b}, std::move(out));
}

Var relu(Var x) {
  Tensor out = Tensor::zeros(x.value().shape());
  kernels::relu(x.value().values(), out.values());
  return x.tape().record(OpKind::relu, {x}, std::move(out));
}

Var sigmoid(Var x) {
  // Clamped so outputs stay strictly inside (0, 1) even when exp saturates.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const double v = tx[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  return x.tape().record(OpKind::sigmoid, {x}, std::move(out));
}

Var log(Var x) {
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) {
    if (!(tx[i] > 0.0))
      throw NumericError("log: argument " + std::to_string(tx[i]) + " at index " +
                         std::to_string(i) + " is not strictly positive");
    out[i] = std::log(tx[i]);
  }
  return x.tape().record(OpKind::log, {x}, std::move(out));
}

Var mul_scalar(Var x, double s) {
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = s * tx[i];
  return x.tape().record(OpKind::mul_scalar, {x}, std::move(out), s);
}

Var affine(Var x, double scale, double shift) {
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = scale * tx[i] + shift;
  return x.tape().record(OpKind::affine, {x}, std::move(out), scale, shift);
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record(OpKind::sum, {x}, Tensor::scalar(acc));
}

Var mean(Var x) {
  const Tensor& tx = x.value();
  double acc = 0.0;
  for (double v : tx.values()) acc += v;
  return x.tape().record(OpKind::mean, {x}, Tensor::scalar(acc / static_cast<double>(tx.size())));
}

Var abs(Var x) {
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = std::fabs(tx[i]);
  return x.tape().record(OpKind::abs, {x}, std::move(out));
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lower bound exceeds upper bound");
  const Tensor& tx = x.value();
  Tensor out = Tensor::zeros(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) out[i] = std::clamp(tx[i], lo, hi);
  return x.tape().record(OpKind::clamp, {x}, std::move(out), lo, hi);
}

Var dot(Var x, std::span<const double> weights) {
  const Tensor& tx = x.value();
  if (weights.size() != tx.size())
    throw DimensionError("dot: " + std::to_string(weights.size()) + " weights for tensor of shape " +
                         shape_string(tx.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < tx.size(); ++i) acc += weights[i] * tx[i];
  return x.tape().record(OpKind::dot, {x}, Tensor::scalar(acc), 0.0, 0.0,
                         std::vector<double>(weights.begin(), weights.end()));
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double evaluate(const TapedObjective& f, std::span<const double> theta, std::size_t coord) {
  Tape tape;
  Var th = tape.constant(Tensor::vector(std::vector<double>(theta.begin(), theta.end())));
  double v;
  try {
    v = f(tape, th).item();
  } catch (const NumericError& e) {
    throw NumericError("grad_check: objective failed at probe for coordinate " +
                       std::to_string(coord) + ": " + e.what());
  }
  if (!std::isfinite(v))
    throw NumericError("grad_check: non-finite objective at probe for coordinate " +
                       std::to_string(coord));
  return v;
}

}  // namespace

GradCheckResult grad_check(const TapedObjective& objective, std::span<const double> theta,
                           double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step size must be positive");
  GradCheckResult res;

  Tensor params = Tensor::vector(std::vector<double>(theta.begin(), theta.end()));
  params.require_grad();
  {
    Tape tape;
    Var root = objective(tape, tape.parameter(params));
    tape.backward(root);
  }
  res.analytic.assign(params.grad().begin(), params.grad().end());

  std::vector<double> probe(theta.begin(), theta.end());
  res.numeric.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double fp = evaluate(objective, probe, i);
    probe[i] = theta[i] - h;
    const double fm = evaluate(objective, probe, i);
    probe[i] = theta[i];
    res.numeric[i] = (fp - fm) / (2.0 * h);

    const double err =
        std::fabs(res.analytic[i] - res.numeric[i]) / std::max(1e-8, std::fabs(res.numeric[i]));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace fairft::ad
