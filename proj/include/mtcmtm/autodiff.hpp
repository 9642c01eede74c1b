#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every primitive applied to Vars created on it. Vars are
// cheap handles (tape pointer + node index); the tape owns the values.
// backward() walks the nodes once in reverse creation order, which is a
// valid reverse topological order because inputs always precede outputs.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtcmtm/tensor.hpp"

namespace mtcmtm {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const;
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using GradMap = std::map<std::string, Tensor>;

struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad;
  // needs[i] is false when input i does not require a gradient; rules may
  // leave that slot default-constructed.
  std::span<const char> needs;
};

using BackwardFn = std::function<std::vector<Tensor>(const BackwardArgs&)>;

class Tape {
 public:
  /// A non-recording tape evaluates values only and refuses backward().
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient under `name`. Names must be unique per tape.
  Var parameter(const std::string& name, Tensor value);

  /// Appends a primitive node. Validates finiteness (naming `op` on
  /// failure) and applies the global precision rounding to `value`.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  const std::map<std::string, std::size_t>& parameters() const { return params_; }
  bool has_parameter(const std::string& name) const { return params_.count(name) != 0; }
  Var parameter_var(const std::string& name);

  /// Gradient of a single-element `loss` with respect to every named
  /// parameter leaf; parameters off the loss path get zeros.
  GradMap backward(const Var& loss);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool recording_;
  std::deque<Node> nodes_;  // deque: Var::value() references survive appends
  std::map<std::string, std::size_t> params_;
};

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise ops broadcast only when one operand is a
// single element or its shape is a trailing suffix of the other's shape
// (i.e. it is repeated over the leading dimensions).

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var neg(const Var& x);

/// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);

/// Cross-correlation. x [B,Cin,S], w [Cout,Cin,K], optional bias [Cout].
/// Output [B,Cout,(S+2*pad-K)/stride+1].
Var conv1d(const Var& x, const Var& w, const Var* bias, std::size_t stride, std::size_t pad);
/// x [B,Cin,H,W], w [Cout,Cin,KH,KW], optional bias [Cout].
Var conv2d(const Var& x, const Var& w, const Var* bias, std::size_t stride, std::size_t pad);

Var sum(const Var& x);
Var sum(const Var& x, std::size_t axis);
Var mean(const Var& x);
Var mean(const Var& x, std::size_t axis);
Var max(const Var& x, std::size_t axis);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
Var sqrt(const Var& x);
Var power(const Var& x, double p);
Var clamp(const Var& x, double lo, double hi);

Var softmax(const Var& x, std::size_t axis);
Var log_softmax(const Var& x, std::size_t axis);
Var log_sum_exp(const Var& x, std::size_t axis);
/// x / max(||x||_2, eps) along `axis`.
Var l2_normalize(const Var& x, std::size_t axis, double eps = 1e-12);

Var concat(std::span<const Var> xs, std::size_t axis);
Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x, std::vector<std::size_t> perm);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);

/// Same value, cut from the gradient path.
Var detach(const Var& x);

}  // namespace mtcmtm
