#pragma once

// Reverse-mode automatic differentiation over dense double arrays.
//
// A Tape records primitive operations in execution order (define-by-run).
// Each recorded entry keeps its forward value and a local backward rule;
// Tape::backward walks the entries once in reverse and accumulates
// gradients additively when a value fans out to several consumers.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advx::ad {

/// Dense row-major array of doubles with rank 0, 1 or 2.
///
/// Rank-1 arrays behave as a single row (rows() == 1) so that a bias of
/// shape {n} broadcasts against a {batch, n} activation.
class RealArray {
 public:
  RealArray() = default;
  RealArray(std::size_t rows, std::size_t cols, double fill = 0.0);
  RealArray(std::vector<std::size_t> shape, std::vector<double> values);

  static RealArray scalar(double value);
  static RealArray vector(std::vector<double> values);
  static RealArray matrix(std::initializer_list<std::initializer_list<double>> rows);
  static RealArray zeros_like(const RealArray& other);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// Value of a single-element array; throws ContractError otherwise.
  double item() const;

  bool same_shape(const RealArray& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  RealArray& operator+=(const RealArray& other);
  RealArray& operator*=(double factor);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// True iff shapes match and every element has the same bit pattern.
bool bit_equal(const RealArray& a, const RealArray& b) noexcept;

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const;
  const RealArray& value() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient-reversal scaling factor. Must be nonnegative.
struct GrlSpec {
  double lambda = 1.0;
};

/// Result of Tape::backward: d(loss)/d(node) for every node on the tape.
class Gradients {
 public:
  /// Gradient of the loss with respect to `v`; an all-zero array of the
  /// value's shape when no path connects `v` to the loss.
  const RealArray& operator[](Var v) const;

 private:
  friend class Tape;
  std::vector<RealArray> grads_;
};

class Tape {
 public:
  /// Local derivative rule of a primitive. Receives the gradient flowing
  /// into the output and a mask of operands that need a gradient; returns
  /// one contribution per operand (std::nullopt for no contribution).
  using BackwardRule = std::function<std::vector<std::optional<RealArray>>(
      const RealArray& grad_out, std::span<const bool> wants)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (a parameter).
  Var leaf(RealArray value);
  /// Input that never receives a gradient (data, frozen weights, noise).
  Var constant(RealArray value);
  /// Appends a primitive. Throws on non-finite output values.
  Var record(RealArray value, std::vector<Var> operands, BackwardRule rule,
             std::string_view op_name);

  const RealArray& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse pass from a scalar loss. Each entry is visited exactly once.
  Gradients backward(Var loss);

  /// Number of entries visited by the most recent backward().
  std::size_t backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    RealArray value;
    std::vector<std::size_t> operands;
    BackwardRule rule;
    bool requires_grad = false;
    std::string op_name;
  };

  void check_owned(Var v) const;

  // deque keeps references to earlier values stable while recording.
  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

/// input[batch x in] * weights[in x out] + bias[out], bias broadcast per row.
Var dense(Var input, Var weights, Var bias);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var exp(Var x);
/// Elementwise sum / product of same-shaped operands.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Sum of all elements as a scalar.
Var sum(Var x);

/// Gradient reversal: identity forward, multiplies the incoming gradient
/// by -lambda backward. lambda == 0 contributes nothing at all.
Var grl(Var x, GrlSpec spec);

/// Throws ConfigError when spec.lambda is negative or not finite.
void validate(const GrlSpec& spec);

enum class Activation { kTanh, kRelu, kSigmoid };

Var activate(Var x, Activation activation);
std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

class GradientCheckError : public std::runtime_error {
 public:
  GradientCheckError(const std::string& what, std::size_t param_index, std::size_t coordinate)
      : std::runtime_error(what), param_index_(param_index), coordinate_(coordinate) {}
  std::size_t param_index() const noexcept { return param_index_; }
  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t param_index_;
  std::size_t coordinate_;
};

/// Builds a scalar loss on a fresh tape from leaf parameters.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) for every coordinate of every parameter and
/// returns max |a-b| / max(1e-8, |a|+|b|). `f` must be deterministic.
double finite_difference_check(const ScalarFunction& f, std::vector<RealArray> params,
                               double eps = 1e-5);

}  // namespace advx::ad
