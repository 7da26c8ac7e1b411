#include "advx/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>

#include "advx/errors.hpp"

namespace advx::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const RealArray& a) {
  return ConstMatrixMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                        static_cast<Eigen::Index>(a.cols()));
}

MatrixMap as_matrix(RealArray& a) {
  return MatrixMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                   static_cast<Eigen::Index>(a.cols()));
}

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const RealArray& a, const RealArray& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

template <class F>
RealArray map_values(const RealArray& x, F&& f) {
  RealArray out = RealArray::zeros_like(x);
  auto in = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = f(in[i]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RealArray

RealArray::RealArray(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill) {}

RealArray::RealArray(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 2) {
    throw DimensionError("RealArray supports rank <= 2, got " + shape_string());
  }
  if (product(shape_) != values_.size()) {
    throw DimensionError("RealArray: shape " + shape_string() + " does not hold " +
                         std::to_string(values_.size()) + " values");
  }
}

RealArray RealArray::scalar(double value) {
  return RealArray(std::vector<std::size_t>{}, std::vector<double>{value});
}

RealArray RealArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return RealArray({n}, std::move(values));
}

RealArray RealArray::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("RealArray::matrix: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return RealArray({r, c}, std::move(values));
}

RealArray RealArray::zeros_like(const RealArray& other) {
  RealArray out;
  out.shape_ = other.shape_;
  out.values_.assign(other.values_.size(), 0.0);
  return out;
}

std::size_t RealArray::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t RealArray::cols() const noexcept {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double RealArray::item() const {
  if (values_.size() != 1) {
    throw ContractError("item() on non-scalar array of shape " + shape_string());
  }
  return values_[0];
}

bool RealArray::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string RealArray::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

RealArray& RealArray::operator+=(const RealArray& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

RealArray& RealArray::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

bool bit_equal(const RealArray& a, const RealArray& b) noexcept {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Var / Gradients / Tape

Tape& Var::tape() const {
  if (!tape_) throw ContractError("Var is not bound to a tape");
  return *tape_;
}

const RealArray& Var::value() const { return tape().value(*this); }

const RealArray& Gradients::operator[](Var v) const {
  if (v.id() >= grads_.size()) throw ContractError("Gradients: unknown node");
  return grads_[v.id()];
}

void Tape::check_owned(Var v) const {
  if (!v.valid() || v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

Var Tape::leaf(RealArray value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, "leaf"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(RealArray value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(RealArray value, std::vector<Var> operands, BackwardRule rule,
                 std::string_view op_name) {
  if (!value.all_finite()) {
    throw TrainingError(std::string(op_name) + " produced a non-finite value");
  }
  Node node{std::move(value), {}, std::move(rule), false, std::string(op_name)};
  node.operands.reserve(operands.size());
  for (Var v : operands) {
    check_owned(v);
    node.operands.push_back(v.id_);
    node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const RealArray& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Gradients Tape::backward(Var loss) {
  check_owned(loss);
  const Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + root.value.shape_string());
  }

  std::vector<RealArray> grads(nodes_.size());
  std::vector<bool> has_grad(nodes_.size(), false);
  grads[loss.id_] = RealArray::zeros_like(root.value);
  grads[loss.id_][0] = 1.0;
  has_grad[loss.id_] = true;

  visits_ = 0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    ++visits_;
    const Node& node = nodes_[i];
    if (!has_grad[i] || !node.rule || !node.requires_grad) continue;

    // std::vector<bool> is not contiguous, so the mask lives in a plain array.
    auto wants = std::make_unique<bool[]>(node.operands.size());
    bool any = false;
    for (std::size_t k = 0; k < node.operands.size(); ++k) {
      wants[k] = nodes_[node.operands[k]].requires_grad;
      any = any || wants[k];
    }
    if (!any) continue;

    auto contributions =
        node.rule(grads[i], std::span<const bool>(wants.get(), node.operands.size()));
    for (std::size_t k = 0; k < node.operands.size(); ++k) {
      if (k >= contributions.size() || !contributions[k] || !wants[k]) continue;
      const std::size_t target = node.operands[k];
      if (!has_grad[target]) {
        grads[target] = std::move(*contributions[k]);
        has_grad[target] = true;
      } else {
        grads[target] += *contributions[k];
      }
    }
  }

  Gradients result;
  result.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    result.grads_[i] = has_grad[i] ? std::move(grads[i]) : RealArray::zeros_like(nodes_[i].value);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Primitives

Var dense(Var input, Var weights, Var bias) {
  const RealArray& x = input.value();
  const RealArray& w = weights.value();
  const RealArray& b = bias.value();
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw DimensionError("dense: input " + x.shape_string() + " does not conform to weights " +
                         w.shape_string());
  }
  if (b.size() != w.cols()) {
    throw DimensionError("dense: bias " + b.shape_string() + " does not conform to weights " +
                         w.shape_string());
  }

  RealArray out(x.rows(), w.cols());
  if (out.size() > 0) {
    auto y = as_matrix(out);
    y.noalias() = as_matrix(x) * as_matrix(w);
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }

  Tape& tape = input.tape();
  return tape.record(
      std::move(out), {input, weights, bias},
      [input, weights, bias](const RealArray& g, std::span<const bool> wants) {
        std::vector<std::optional<RealArray>> d(3);
        const RealArray& x = input.value();
        const RealArray& w = weights.value();
        if (wants[0]) {
          RealArray dx = RealArray::zeros_like(x);
          if (dx.size() > 0) as_matrix(dx).noalias() = as_matrix(g) * as_matrix(w).transpose();
          d[0] = std::move(dx);
        }
        if (wants[1]) {
          RealArray dw = RealArray::zeros_like(w);
          if (x.rows() > 0) as_matrix(dw).noalias() = as_matrix(x).transpose() * as_matrix(g);
          d[1] = std::move(dw);
        }
        if (wants[2]) {
          RealArray db = RealArray::zeros_like(bias.value());
          if (g.rows() > 0) {
            Eigen::Map<Eigen::RowVectorXd>(db.data(), static_cast<Eigen::Index>(db.size())) =
                as_matrix(g).colwise().sum();
          }
          d[2] = std::move(db);
        }
        return d;
      },
      "dense");
}

Var tanh(Var x) {
  RealArray y = map_values(x.value(), [](double v) { return std::tanh(v); });
  RealArray saved = y;
  return x.tape().record(std::move(y), {x},
                         [saved = std::move(saved)](const RealArray& g, std::span<const bool>) {
                           RealArray d = RealArray::zeros_like(g);
                           for (std::size_t i = 0; i < d.size(); ++i) {
                             d[i] = g[i] * (1.0 - saved[i] * saved[i]);
                           }
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "tanh");
}

Var sigmoid(Var x) {
  RealArray y = map_values(x.value(), [](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  RealArray saved = y;
  return x.tape().record(std::move(y), {x},
                         [saved = std::move(saved)](const RealArray& g, std::span<const bool>) {
                           RealArray d = RealArray::zeros_like(g);
                           for (std::size_t i = 0; i < d.size(); ++i) {
                             d[i] = g[i] * saved[i] * (1.0 - saved[i]);
                           }
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "sigmoid");
}

Var relu(Var x) {
  RealArray y = map_values(x.value(), [](double v) { return v > 0 ? v : 0.0; });
  return x.tape().record(std::move(y), {x},
                         [x](const RealArray& g, std::span<const bool>) {
                           const RealArray& in = x.value();
                           RealArray d = RealArray::zeros_like(g);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0 ? g[i] : 0.0;
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "relu");
}

Var exp(Var x) {
  RealArray y = map_values(x.value(), [](double v) { return std::exp(v); });
  RealArray saved = y;
  return x.tape().record(std::move(y), {x},
                         [saved = std::move(saved)](const RealArray& g, std::span<const bool>) {
                           RealArray d = RealArray::zeros_like(g);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * saved[i];
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "exp");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  RealArray y = a.value();
  y += b.value();
  return a.tape().record(std::move(y), {a, b},
                         [](const RealArray& g, std::span<const bool> wants) {
                           std::vector<std::optional<RealArray>> d(2);
                           if (wants[0]) d[0] = g;
                           if (wants[1]) d[1] = g;
                           return d;
                         },
                         "add");
}

Var mul(Var a, Var b) {
  const RealArray& av = a.value();
  const RealArray& bv = b.value();
  require_same_shape(av, bv, "mul");
  RealArray y = RealArray::zeros_like(av);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return a.tape().record(std::move(y), {a, b},
                         [a, b](const RealArray& g, std::span<const bool> wants) {
                           std::vector<std::optional<RealArray>> d(2);
                           const RealArray& av = a.value();
                           const RealArray& bv = b.value();
                           if (wants[0]) {
                             RealArray da = RealArray::zeros_like(g);
                             for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * bv[i];
                             d[0] = std::move(da);
                           }
                           if (wants[1]) {
                             RealArray db = RealArray::zeros_like(g);
                             for (std::size_t i = 0; i < db.size(); ++i) db[i] = g[i] * av[i];
                             d[1] = std::move(db);
                           }
                           return d;
                         },
                         "mul");
}

Var scale(Var x, double factor) {
  RealArray y = x.value();
  y *= factor;
  return x.tape().record(std::move(y), {x},
                         [factor](const RealArray& g, std::span<const bool>) {
                           RealArray d = g;
                           d *= factor;
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "scale");
}

Var sum(Var x) {
  const RealArray& v = x.value();
  double total = 0.0;
  for (double e : v.values()) total += e;
  return x.tape().record(RealArray::scalar(total), {x},
                         [x](const RealArray& g, std::span<const bool>) {
                           RealArray d = RealArray::zeros_like(x.value());
                           std::fill(d.values().begin(), d.values().end(), g[0]);
                           return std::vector<std::optional<RealArray>>{std::move(d)};
                         },
                         "sum");
}

void validate(const GrlSpec& spec) {
  if (!(spec.lambda >= 0.0) || !std::isfinite(spec.lambda)) {
    throw ConfigError("gradient reversal lambda must be finite and >= 0, got " +
                      std::to_string(spec.lambda));
  }
}

Var grl(Var x, GrlSpec spec) {
  validate(spec);
  const double factor = -spec.lambda;
  return x.tape().record(RealArray(x.value()), {x},
                         [factor](const RealArray& g, std::span<const bool>) {
                           std::vector<std::optional<RealArray>> d(1);
                           if (factor != 0.0) {
                             RealArray r = g;
                             r *= factor;
                             d[0] = std::move(r);
                           }
                           return d;
                         },
                         "grl");
}

Var activate(Var x, Activation activation) {
  switch (activation) {
    case Activation::kTanh:
      return tanh(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kSigmoid:
      return sigmoid(x);
  }
  throw ConfigError("unknown activation");
}

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double evaluate(const ScalarFunction& f, const std::vector<RealArray>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

double finite_difference_check(const ScalarFunction& f, std::vector<RealArray> params,
                               double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be > 0");

  std::vector<RealArray> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    Var loss = f(tape, vars);
    Gradients grads = tape.backward(loss);
    for (Var v : vars) analytic.push_back(grads[v]);
  }

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      double plus = 0.0;
      double minus = 0.0;
      try {
        params[p][i] = original + eps;
        plus = evaluate(f, params);
        params[p][i] = original - eps;
        minus = evaluate(f, params);
      } catch (const TrainingError& e) {
        throw GradientCheckError(std::string("non-finite value at perturbed point: ") + e.what(),
                                 p, i);
      }
      params[p][i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw GradientCheckError("non-finite loss at parameter " + std::to_string(p) +
                                     " coordinate " + std::to_string(i),
                                 p, i);
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace advx::ad
