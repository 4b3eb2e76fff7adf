#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "strv/numkit/tensor.hpp"

namespace strv::numkit {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() { grad.fill(0.0); }

  Tensor value;
  Tensor grad;
};

using NamedParameter = std::pair<std::string, Parameter*>;

void zero_grads(std::span<const NamedParameter> params);

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// Reverse-mode computation record. Operations append nodes; backward() replays
// them in reverse and deposits gradients in every registered Parameter.
class Tape {
 public:
  // Receives the tape and the id of the node it is attached to.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape();

  Var constant(Tensor value);
  // Registers a parameter leaf. Registering the same parameter twice returns
  // the same node.
  Var parameter(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients are accumulated into
  // Parameter::grad (callers zero them between steps).
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  Tensor& value_mut(std::size_t id) { return nodes_[id].value; }
  // Gradient of the last backward() w.r.t. any recorded node.
  const Tensor& grad(Var v) const;
  Tensor& grad_mut(std::size_t id) { return nodes_[id].grad; }

  // Smallest |pre-activation| seen by any relu on this tape; used to reject
  // gradient-check points sitting on a kink.
  double min_relu_margin() const { return min_relu_margin_; }
  void note_relu_margin(double m) {
    if (m < min_relu_margin_) min_relu_margin_ = m;
  }

  Var push(Tensor value, BackwardFn backward);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  double min_relu_margin_ = std::numeric_limits<double>::infinity();
  bool has_grads_ = false;
};

// Primitive operations. All operands are rank-2; shape mismatches raise
// ContractViolation and non-finite inputs to softmax raise NumericError.
Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
Var add(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
Var softmax(Var x);  // row-wise
// Mean over rows of -log(p[row, label[row]]).
Var cross_entropy(Var probabilities, std::span<const int> labels);
// Numerically stable fused softmax + mean cross-entropy on raw logits.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
// Mean over all elements of (pred - target)^2.
Var mse(Var pred, Var target);
Var gather_rows(Var x, std::span<const std::size_t> rows);
// Mean of consecutive groups of `group` rows, summed in row order.
Var segment_mean(Var x, std::size_t group);
Var concat_cols(Var a, Var b);

}  // namespace strv::numkit
