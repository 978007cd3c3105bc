#pragma once

#include <deque>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "elp/tensor.hpp"

namespace elp::ad {

/// A trainable tensor with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.dims()) {}

  void zero_grad() { grad.array().setZero(); }

  std::string name;
  Tensor value;
  Tensor grad;
};

/// Per-tape gradient sink, keyed by parameter. Lets independent tapes run in
/// parallel and be reduced into the shared accumulators afterwards.
using GradientMap = std::map<const Parameter*, Tensor>;

enum class OpKind {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  ScaleConst,
  Scale,
  Relu,
  Exp,
  Broadcast,
  Sum,
  Mean,
  Conv2d,
  AvgPool2,
  Upsample2,
  Concat,
  Gather,
  MaskSum,
  MaskSpread,
  Opaque,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of a forward evaluation. backward() walks it once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  /// Records a value produced outside the differentiable set. Reverse mode
  /// refuses to pass through it whenever an input needs a gradient.
  Var opaque(std::string name, Tensor value, std::initializer_list<Var> inputs);

  /// Accumulates d(loss)/d(parameter) into every Parameter::grad reached.
  void backward(Var loss);
  /// Same, but accumulates into `sink` instead of the parameters.
  void backward(Var loss, GradientMap& sink);

  std::size_t size() const { return nodes_.size(); }

  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> inputs;
    Tensor value;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Tensor aux;                // masks for MaskSum/MaskSpread
    std::vector<Index> index;  // channel map for Gather
    double scalar = 0.0;       // factor for ScaleConst
    std::string name;          // label for Opaque
  };

  /// Appends a node; requires_grad is derived from the inputs.
  Var push(Node node);
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  template <typename Sink>
  void run_backward(Var loss, Sink&& sink);

  std::deque<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// x * c for a constant c.
Var scale(Var x, double c);
/// x * s for a scalar node s (dims [1]).
Var scale(Var x, Var s);
Var relu(Var x);
Var exp(Var x);
/// Expands a scalar node (dims [1]) to `dims`.
Var broadcast(Var s, const Dims& dims);
Var sum(Var x);
Var mean(Var x);
Var conv2d(Var input, Var kernel, Var bias);
Var avg_pool2(Var x);
Var upsample2(Var x);
/// Channels of a then b. A default-constructed Var on either side is skipped.
Var concat_channels(Var a, Var b);
Var gather_channels(Var x, std::vector<Index> index);
/// Sum over frames of masks_b * x_b: [B,H,W] -> [H,W].
Var mask_sum(Var x, const Tensor& masks);
/// masks_b * y for every frame: [H,W] -> [B,H,W].
Var mask_spread(Var y, const Tensor& masks);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator*(Var x, double c) { return scale(x, c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

}  // namespace elp::ad
