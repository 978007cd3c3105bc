#include "elp/autodiff.hpp"

#include <algorithm>
#include <optional>

#include "elp/tensor_ops.hpp"

namespace elp::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::ScaleConst: return "scale_const";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::AvgPool2: return "avg_pool2";
    case OpKind::Upsample2: return "upsample2";
    case OpKind::Concat: return "concat_channels";
    case OpKind::Gather: return "gather_channels";
    case OpKind::MaskSum: return "mask_sum";
    case OpKind::MaskSpread: return "mask_spread";
    case OpKind::Opaque: return "opaque";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an empty Var");
  return tape_->node(id_).value;
}

bool Var::requires_grad() const { return tape_ && tape_->node(id_).requires_grad; }

Var Tape::push(Node node) {
  for (int in : node.inputs) node.requires_grad = node.requires_grad || this->node(in).requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.kind = OpKind::Param;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

namespace {

Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v) throw ContractError("operation on an empty Var");
    if (tape && v.tape() != tape) throw ContractError("operands live on different tapes");
    tape = v.tape();
  }
  return *tape;
}

struct Pending {
  Tape& tape;
  Tape::Node node;
  Var push() { return tape.push(std::move(node)); }
};

Pending pending(OpKind kind, std::initializer_list<Var> inputs, Tensor value) {
  Pending p{same_tape(inputs), {}};
  p.node.kind = kind;
  for (const Var& v : inputs) p.node.inputs.push_back(v.id());
  p.node.value = std::move(value);
  return p;
}

Var make(OpKind kind, std::initializer_list<Var> inputs, Tensor value) {
  return pending(kind, inputs, std::move(value)).push();
}

Tensor elementwise(const Tensor& a, const Tensor& b, const char* what,
                   Tensor::Array (*fn)(const Tensor::Array&, const Tensor::Array&)) {
  a.require_same(b, what);
  return Tensor(a.dims(), fn(a.array(), b.array()));
}

void require_scalar(const Var& s, const char* what) {
  if (s.value().size() != 1 || s.value().rank() != 1)
    throw ShapeError(std::string(what) + ": expected a scalar node, got " +
                     dims_string(s.dims()));
}

}  // namespace

Var Tape::opaque(std::string name, Tensor value, std::initializer_list<Var> inputs) {
  Node n;
  n.kind = OpKind::Opaque;
  n.name = std::move(name);
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("opaque input from another tape");
    n.inputs.push_back(v.id());
  }
  n.value = std::move(value);
  return push(std::move(n));
}

Var add(Var a, Var b) {
  return make(OpKind::Add, {a, b},
              elementwise(a.value(), b.value(), "add",
                          [](const Tensor::Array& x, const Tensor::Array& y) -> Tensor::Array {
                            return x + y;
                          }));
}

Var sub(Var a, Var b) {
  return make(OpKind::Sub, {a, b},
              elementwise(a.value(), b.value(), "sub",
                          [](const Tensor::Array& x, const Tensor::Array& y) -> Tensor::Array {
                            return x - y;
                          }));
}

Var mul(Var a, Var b) {
  return make(OpKind::Mul, {a, b},
              elementwise(a.value(), b.value(), "mul",
                          [](const Tensor::Array& x, const Tensor::Array& y) -> Tensor::Array {
                            return x * y;
                          }));
}

Var div(Var a, Var b) {
  return make(OpKind::Div, {a, b},
              elementwise(a.value(), b.value(), "div",
                          [](const Tensor::Array& x, const Tensor::Array& y) -> Tensor::Array {
                            return x / y;
                          }));
}

Var scale(Var x, double c) {
  auto p = pending(OpKind::ScaleConst, {x}, x.value() * c);
  p.node.scalar = c;
  return p.push();
}

Var scale(Var x, Var s) {
  require_scalar(s, "scale");
  return make(OpKind::Scale, {x, s}, x.value() * s.value()[0]);
}

Var relu(Var x) {
  return make(OpKind::Relu, {x}, Tensor(x.dims(), x.value().array().max(0.0)));
}

Var exp(Var x) { return make(OpKind::Exp, {x}, Tensor(x.dims(), x.value().array().exp())); }

Var broadcast(Var s, const Dims& dims) {
  require_scalar(s, "broadcast");
  return make(OpKind::Broadcast, {s}, Tensor(dims, s.value()[0]));
}

Var sum(Var x) { return make(OpKind::Sum, {x}, Tensor::scalar(x.value().sum())); }

Var mean(Var x) {
  return make(OpKind::Mean, {x},
              Tensor::scalar(x.value().sum() / static_cast<double>(x.value().size())));
}

Var conv2d(Var input, Var kernel, Var bias) {
  return make(OpKind::Conv2d, {input, kernel, bias},
              elp::conv2d(input.value(), kernel.value(), bias.value()));
}

Var avg_pool2(Var x) { return make(OpKind::AvgPool2, {x}, elp::avg_pool2(x.value())); }

Var upsample2(Var x) { return make(OpKind::Upsample2, {x}, elp::upsample2(x.value())); }

Var concat_channels(Var a, Var b) {
  if (!b) return a;
  if (!a) return b;
  return make(OpKind::Concat, {a, b}, elp::concat_channels(a.value(), b.value()));
}

Var gather_channels(Var x, std::vector<Index> index) {
  auto p = pending(OpKind::Gather, {x}, elp::gather_channels<double>(x.value(), index));
  p.node.index = std::move(index);
  return p.push();
}

Var mask_sum(Var x, const Tensor& masks) {
  masks.require_same(x.value(), "mask_sum");
  const Index B = masks.dim(0);
  Tensor y({masks.dim(1), masks.dim(2)});
  for (Index b = 0; b < B; ++b)
    y.matrix().array() += masks.frame(b).array() * x.value().frame(b).array();
  auto p = pending(OpKind::MaskSum, {x}, std::move(y));
  p.node.aux = masks;
  return p.push();
}

Var mask_spread(Var y, const Tensor& masks) {
  if (y.value().rank() != 2 || y.dims()[0] != masks.dim(1) || y.dims()[1] != masks.dim(2))
    throw ShapeError("mask_spread: measurement " + dims_string(y.dims()) + " vs masks " +
                     dims_string(masks.dims()));
  Tensor x(masks.dims());
  for (Index b = 0; b < masks.dim(0); ++b)
    x.frame(b).array() = masks.frame(b).array() * y.value().matrix().array();
  auto p = pending(OpKind::MaskSpread, {y}, std::move(x));
  p.node.aux = masks;
  return p.push();
}

template <typename Sink>
void Tape::run_backward(Var loss, Sink&& sink) {
  if (!loss || loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (loss.value().size() != 1) throw ContractError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  std::vector<std::optional<Tensor>> grads(static_cast<std::size_t>(loss.id()) + 1);
  grads[static_cast<std::size_t>(loss.id())] = Tensor(loss.dims(), 1.0);

  auto accumulate = [&](int id, Tensor g) {
    if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (slot)
      *slot += g;
    else
      slot = std::move(g);
  };

  for (int id = loss.id(); id >= 0; --id) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (!slot) continue;
    const Tensor g = std::move(*slot);
    slot.reset();
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    auto in = [&](std::size_t k) -> const Node& { return node(n.inputs[k]); };

    switch (n.kind) {
      case OpKind::Constant:
        break;
      case OpKind::Param:
        sink(*n.param, g);
        break;
      case OpKind::Add:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::Sub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], -g);
        break;
      case OpKind::Mul:
        accumulate(n.inputs[0], hadamard(g, in(1).value));
        accumulate(n.inputs[1], hadamard(g, in(0).value));
        break;
      case OpKind::Div: {
        const auto& a = in(0).value.array();
        const auto& b = in(1).value.array();
        accumulate(n.inputs[0], Tensor(g.dims(), g.array() / b));
        accumulate(n.inputs[1], Tensor(g.dims(), -g.array() * a / (b * b)));
        break;
      }
      case OpKind::ScaleConst:
        accumulate(n.inputs[0], g * n.scalar);
        break;
      case OpKind::Scale:
        accumulate(n.inputs[0], g * in(1).value[0]);
        accumulate(n.inputs[1], Tensor::scalar(dot(g, in(0).value)));
        break;
      case OpKind::Relu:
        // subgradient 0 at the kink
        accumulate(n.inputs[0],
                   Tensor(g.dims(), (in(0).value.array() > 0.0).select(g.array(), 0.0)));
        break;
      case OpKind::Exp:
        accumulate(n.inputs[0], hadamard(g, n.value));
        break;
      case OpKind::Broadcast:
        accumulate(n.inputs[0], Tensor::scalar(g.sum()));
        break;
      case OpKind::Sum:
        accumulate(n.inputs[0], Tensor(in(0).value.dims(), g[0]));
        break;
      case OpKind::Mean:
        accumulate(n.inputs[0], Tensor(in(0).value.dims(),
                                       g[0] / static_cast<double>(in(0).value.size())));
        break;
      case OpKind::Conv2d: {
        auto cg = conv2d_backward(in(0).value, in(1).value, g);
        accumulate(n.inputs[0], std::move(cg.input));
        accumulate(n.inputs[1], std::move(cg.kernel));
        accumulate(n.inputs[2], std::move(cg.bias));
        break;
      }
      case OpKind::AvgPool2:
        // adjoint of 2x2 mean is replication scaled by 1/4
        accumulate(n.inputs[0], elp::upsample2(g) * 0.25);
        break;
      case OpKind::Upsample2: {
        // adjoint of replication is the 2x2 block sum
        accumulate(n.inputs[0], elp::avg_pool2(g) * 4.0);
        break;
      }
      case OpKind::Concat: {
        const Index c1 = in(0).value.dim(0);
        accumulate(n.inputs[0], slice_channels(g, 0, c1));
        accumulate(n.inputs[1], slice_channels(g, c1, g.dim(0) - c1));
        break;
      }
      case OpKind::Gather:
        accumulate(n.inputs[0], scatter_add_channels<double>(g, n.index, in(0).value.dim(0)));
        break;
      case OpKind::MaskSum: {
        Tensor dx(n.aux.dims());
        for (Index b = 0; b < n.aux.dim(0); ++b)
          dx.frame(b).array() = n.aux.frame(b).array() * g.matrix().array();
        accumulate(n.inputs[0], std::move(dx));
        break;
      }
      case OpKind::MaskSpread: {
        Tensor dy({n.aux.dim(1), n.aux.dim(2)});
        for (Index b = 0; b < n.aux.dim(0); ++b)
          dy.matrix().array() += n.aux.frame(b).array() * g.frame(b).array();
        accumulate(n.inputs[0], std::move(dy));
        break;
      }
      case OpKind::Opaque:
        throw UnsupportedOpError("backward: no gradient rule for '" + n.name + "'");
    }
  }
}

void Tape::backward(Var loss) {
  run_backward(loss, [](Parameter& p, const Tensor& g) { p.grad += g; });
}

void Tape::backward(Var loss, GradientMap& sink) {
  run_backward(loss, [&sink](Parameter& p, const Tensor& g) {
    auto it = sink.find(&p);
    if (it == sink.end())
      sink.emplace(&p, g);
    else
      it->second += g;
  });
}

}  // namespace elp::ad
