#include "mtcmtm/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace mtcmtm {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return *tape_;
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  check_finite(value, "constant");
  value.quantize();
  nodes_.push_back(Node{"constant", std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  check_finite(value, name);
  value.quantize();
  nodes_.push_back(Node{"parameter", std::move(value), {}, recording_, {}});
  params_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter_var(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter '" + name + "' on tape");
  return Var(this, it->second);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  check_finite(value, op);
  value.quantize();
  Node node{op, std::move(value), {}, false, {}};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw std::logic_error(std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  node.requires_grad = node.requires_grad && recording_;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& loss) {
  if (!recording_) throw std::logic_error("backward() on a non-recording tape");
  if (loss.tape_ != this) throw std::logic_error("backward(): loss belongs to another tape");
  const Tensor& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
  }

  std::vector<Tensor> grads(loss.id_ + 1);
  std::vector<char> has(loss.id_ + 1, 0);
  grads[loss.id_] = Tensor::ones(lv.shape());
  has[loss.id_] = 1;

  std::vector<const Tensor*> in_values;
  std::vector<char> needs;
  for (std::size_t k = loss.id_ + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!has[k] || !node.requires_grad || !node.backward) continue;
    in_values.clear();
    needs.clear();
    for (auto i : node.inputs) {
      in_values.push_back(&nodes_[i].value);
      needs.push_back(nodes_[i].requires_grad ? 1 : 0);
    }
    BackwardArgs args{in_values, node.value, grads[k], needs};
    std::vector<Tensor> in_grads = node.backward(args);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      if (!needs[j]) continue;
      const std::size_t target = node.inputs[j];
      Tensor& g = in_grads[j];
      if (g.shape() != nodes_[target].value.shape()) {
        throw std::logic_error(std::string(node.op) + ": gradient shape " +
                               shape_string(g.shape()) + " does not match input " +
                               shape_string(nodes_[target].value.shape()));
      }
      if (!has[target]) {
        grads[target] = std::move(g);
        has[target] = 1;
      } else {
        auto dst = grads[target].mutable_data();
        auto src = g.data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      }
    }
    // Intermediate gradients are no longer needed once propagated.
    grads[k] = Tensor();
  }

  GradMap out;
  for (const auto& [name, id] : params_) {
    if (id <= loss.id_ && has[id]) {
      out.emplace(name, std::move(grads[id]));
    } else {
      out.emplace(name, Tensor::zeros(nodes_[id].value.shape()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// helpers

namespace {

struct AxisSplit {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, std::string_view op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) r.push_back(s[i]);
  }
  return r;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<long>(small.size()));
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return a;
  const std::size_t na = numel(a), nb = numel(b);
  if (nb == 1 && na >= 1 && (b.size() <= 1 || is_suffix(b, a))) return a;
  if (na == 1 && (a.size() <= 1 || is_suffix(a, b))) return b;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

// Sums a broadcast gradient back down to `shape` (blocks over leading dims).
Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor r(shape);
  const std::size_t n = r.size();
  auto dst = r.mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i % n] += src[i];
  return r;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// grad_in[i] = grad[i] * f(x[i], y[i])
template <typename F>
Tensor chain(const Tensor& grad, const Tensor& x, const Tensor& y, F f) {
  Tensor out(x.shape());
  auto g = grad.data();
  auto xs = x.data();
  auto ys = y.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = g[i] * f(xs[i], ys[i]);
  return out;
}

template <typename F>
Var unary(std::string_view op, const Var& x, F forward, std::function<double(double, double)> deriv) {
  Tensor out = map_unary(x.value(), forward);
  return x.tape().record(op, std::move(out), {x},
                         [deriv](const BackwardArgs& a) {
                           return std::vector<Tensor>{chain(a.grad, *a.inputs[0], a.output, deriv)};
                         });
}

template <typename F>
Tensor binary_forward(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  Tensor out(out_shape);
  const std::size_t na = a.size(), nb = b.size();
  auto av = a.data();
  auto bv = b.data();
  auto dst = out.mutable_data();
  if (na == dst.size() && nb == dst.size()) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(av[i % na], bv[i % nb]);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise arithmetic

Var add(const Var& a, const Var& b) {
  Shape s = broadcast_shape(a.shape(), b.shape(), "add");
  Tensor out = binary_forward(a.value(), b.value(), s, [](double x, double y) { return x + y; });
  return a.tape().record("add", std::move(out), {a, b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = reduce_to(g.grad, g.inputs[0]->shape());
    if (g.needs[1]) r[1] = reduce_to(g.grad, g.inputs[1]->shape());
    return r;
  });
}

Var sub(const Var& a, const Var& b) {
  Shape s = broadcast_shape(a.shape(), b.shape(), "sub");
  Tensor out = binary_forward(a.value(), b.value(), s, [](double x, double y) { return x - y; });
  return a.tape().record("sub", std::move(out), {a, b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    if (g.needs[0]) r[0] = reduce_to(g.grad, g.inputs[0]->shape());
    if (g.needs[1]) {
      Tensor ng = map_unary(g.grad, [](double v) { return -v; });
      r[1] = reduce_to(ng, g.inputs[1]->shape());
    }
    return r;
  });
}

Var mul(const Var& a, const Var& b) {
  Shape s = broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor out = binary_forward(a.value(), b.value(), s, [](double x, double y) { return x * y; });
  return a.tape().record("mul", std::move(out), {a, b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    const Tensor& av = *g.inputs[0];
    const Tensor& bv = *g.inputs[1];
    if (g.needs[0]) {
      Tensor t = binary_forward(g.grad, bv, g.grad.shape(), [](double x, double y) { return x * y; });
      r[0] = reduce_to(t, av.shape());
    }
    if (g.needs[1]) {
      Tensor t = binary_forward(g.grad, av, g.grad.shape(), [](double x, double y) { return x * y; });
      r[1] = reduce_to(t, bv.shape());
    }
    return r;
  });
}

Var div(const Var& a, const Var& b) {
  Shape s = broadcast_shape(a.shape(), b.shape(), "div");
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  Tensor out = binary_forward(a.value(), b.value(), s, [](double x, double y) { return x / y; });
  return a.tape().record("div", std::move(out), {a, b}, [](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    const Tensor& av = *g.inputs[0];
    const Tensor& bv = *g.inputs[1];
    if (g.needs[0]) {
      Tensor t = binary_forward(g.grad, bv, g.grad.shape(), [](double x, double y) { return x / y; });
      r[0] = reduce_to(t, av.shape());
    }
    if (g.needs[1]) {
      // d(a/b)/db = -out / b
      Tensor t = binary_forward(g.grad, bv, g.grad.shape(), [](double x, double y) { return x / y; });
      auto td = t.mutable_data();
      auto od = g.output.data();
      for (std::size_t i = 0; i < td.size(); ++i) td[i] = -td[i] * od[i];
      r[1] = reduce_to(t, bv.shape());
    }
    return r;
  });
}

Var scale(const Var& x, double c) {
  return unary("scale", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var neg(const Var& x) { return scale(x, -1.0); }

// ---------------------------------------------------------------------------
// matmul / convolutions

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  }
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  Tensor out(Shape{sa[0], sb[1]});
  MutMap(out.mutable_data().data(), m, n).noalias() =
      ConstMap(a.value().data().data(), m, k) * ConstMap(b.value().data().data(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](const BackwardArgs& g) {
    std::vector<Tensor> r(2);
    ConstMap G(g.grad.data().data(), m, n);
    if (g.needs[0]) {
      r[0] = Tensor(g.inputs[0]->shape());
      MutMap(r[0].mutable_data().data(), m, k).noalias() =
          G * ConstMap(g.inputs[1]->data().data(), k, n).transpose();
    }
    if (g.needs[1]) {
      r[1] = Tensor(g.inputs[1]->shape());
      MutMap(r[1].mutable_data().data(), k, n).noalias() =
          ConstMap(g.inputs[0]->data().data(), m, k).transpose() * G;
    }
    return r;
  });
}

namespace {

// Geometry shared by conv1d and conv2d; conv1d is the H=1 case.
struct ConvGeom {
  std::size_t batch, cin, cout, h, w, kh, kw, oh, ow, stride, pad_h, pad_w;
  std::size_t col_rows() const { return cin * kh * kw; }
  std::size_t col_cols() const { return batch * oh * ow; }
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                     std::string_view op) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (in + 2 * pad < k) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " larger than padded input " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

RowMat im2col(const double* x, const ConvGeom& c) {
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(c.col_rows()),
                             static_cast<Eigen::Index>(c.col_cols()));
  for (std::size_t ci = 0; ci < c.cin; ++ci) {
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        double* row = cols.data() + ((ci * c.kh + ki) * c.kw + kj) * c.col_cols();
        for (std::size_t b = 0; b < c.batch; ++b) {
          const double* xb = x + (b * c.cin + ci) * c.h * c.w;
          for (std::size_t oi = 0; oi < c.oh; ++oi) {
            const long ii = static_cast<long>(oi * c.stride + ki) - static_cast<long>(c.pad_h);
            if (ii < 0 || ii >= static_cast<long>(c.h)) continue;
            for (std::size_t oj = 0; oj < c.ow; ++oj) {
              const long jj = static_cast<long>(oj * c.stride + kj) - static_cast<long>(c.pad_w);
              if (jj < 0 || jj >= static_cast<long>(c.w)) continue;
              row[(b * c.oh + oi) * c.ow + oj] = xb[static_cast<std::size_t>(ii) * c.w +
                                                    static_cast<std::size_t>(jj)];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMat& cols, double* dx, const ConvGeom& c) {
  for (std::size_t ci = 0; ci < c.cin; ++ci) {
    for (std::size_t ki = 0; ki < c.kh; ++ki) {
      for (std::size_t kj = 0; kj < c.kw; ++kj) {
        const double* row = cols.data() + ((ci * c.kh + ki) * c.kw + kj) * c.col_cols();
        for (std::size_t b = 0; b < c.batch; ++b) {
          double* xb = dx + (b * c.cin + ci) * c.h * c.w;
          for (std::size_t oi = 0; oi < c.oh; ++oi) {
            const long ii = static_cast<long>(oi * c.stride + ki) - static_cast<long>(c.pad_h);
            if (ii < 0 || ii >= static_cast<long>(c.h)) continue;
            for (std::size_t oj = 0; oj < c.ow; ++oj) {
              const long jj = static_cast<long>(oj * c.stride + kj) - static_cast<long>(c.pad_w);
              if (jj < 0 || jj >= static_cast<long>(c.w)) continue;
              xb[static_cast<std::size_t>(ii) * c.w + static_cast<std::size_t>(jj)] +=
                  row[(b * c.oh + oi) * c.ow + oj];
            }
          }
        }
      }
    }
  }
}

Var conv_impl(std::string_view op, const Var& x, const Var& w, const Var* bias, const ConvGeom& c,
              Shape out_shape) {
  auto cols = std::make_shared<RowMat>(im2col(x.value().data().data(), c));
  const auto cout = static_cast<Eigen::Index>(c.cout);
  const auto krows = static_cast<Eigen::Index>(c.col_rows());
  const auto ncols = static_cast<Eigen::Index>(c.col_cols());
  RowMat y = ConstMap(w.value().data().data(), cout, krows) * (*cols);
  if (bias) y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->value().data().data(), cout);

  // [Cout, B*P] -> [B, Cout, P]
  const std::size_t plane = c.oh * c.ow;
  Tensor out(std::move(out_shape));
  auto dst = out.mutable_data();
  for (std::size_t co = 0; co < c.cout; ++co) {
    for (std::size_t b = 0; b < c.batch; ++b) {
      const double* src = y.data() + co * c.col_cols() + b * plane;
      std::copy(src, src + plane, dst.data() + (b * c.cout + co) * plane);
    }
  }

  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(op, std::move(out), std::move(inputs),
                         [c, cols, cout, krows, ncols, plane](const BackwardArgs& g) {
    std::vector<Tensor> r(g.inputs.size());
    RowMat gm(cout, ncols);
    auto gd = g.grad.data();
    for (std::size_t co = 0; co < c.cout; ++co) {
      for (std::size_t b = 0; b < c.batch; ++b) {
        const double* src = gd.data() + (b * c.cout + co) * plane;
        std::copy(src, src + plane, gm.data() + co * c.col_cols() + b * plane);
      }
    }
    if (g.needs[1]) {
      r[1] = Tensor(g.inputs[1]->shape());
      MutMap(r[1].mutable_data().data(), cout, krows).noalias() = gm * cols->transpose();
    }
    if (g.inputs.size() == 3 && g.needs[2]) {
      r[2] = Tensor(g.inputs[2]->shape());
      Eigen::Map<Eigen::VectorXd>(r[2].mutable_data().data(), cout) = gm.rowwise().sum();
    }
    if (g.needs[0]) {
      RowMat dcols = ConstMap(g.inputs[1]->data().data(), cout, krows).transpose() * gm;
      r[0] = Tensor(g.inputs[0]->shape());
      col2im(dcols, r[0].mutable_data().data(), c);
    }
    return r;
  });
}

void check_bias(const Var* bias, std::size_t cout, std::string_view op) {
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != cout)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_string(bias->shape()) +
                     " does not match output channels " + std::to_string(cout));
  }
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var* bias, std::size_t stride, std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1]) {
    throw ShapeError("conv1d: input " + shape_string(sx) + " incompatible with kernel " +
                     shape_string(sw));
  }
  check_bias(bias, sw[0], "conv1d");
  ConvGeom c{sx[0], sx[1], sw[0], 1, sx[2], 1, sw[2], 1, 0, stride, 0, pad};
  c.ow = conv_out(sx[2], sw[2], stride, pad, "conv1d");
  return conv_impl("conv1d", x, w, bias, c, Shape{sx[0], sw[0], c.ow});
}

Var conv2d(const Var& x, const Var& w, const Var* bias, std::size_t stride, std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) {
    throw ShapeError("conv2d: input " + shape_string(sx) + " incompatible with kernel " +
                     shape_string(sw));
  }
  check_bias(bias, sw[0], "conv2d");
  ConvGeom c{sx[0], sx[1], sw[0], sx[2], sx[3], sw[2], sw[3], 0, 0, stride, pad, pad};
  c.oh = conv_out(sx[2], sw[2], stride, pad, "conv2d");
  c.ow = conv_out(sx[3], sw[3], stride, pad, "conv2d");
  return conv_impl("conv2d", x, w, bias, c, Shape{sx[0], sw[0], c.oh, c.ow});
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{Tensor::full(g.inputs[0]->shape(), g.grad.item())};
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record("mean", Tensor::scalar(s / n), {x}, [n](const BackwardArgs& g) {
    return std::vector<Tensor>{Tensor::full(g.inputs[0]->shape(), g.grad.item() / n)};
  });
}

namespace {

Var reduce_axis(std::string_view op, const Var& x, std::size_t axis, double factor) {
  const auto sp = split_axis(x.shape(), axis, op);
  Tensor out(drop_axis(x.shape(), axis));
  auto src = x.value().data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.n; ++i) {
      const double* row = src.data() + (o * sp.n + i) * sp.inner;
      double* d = dst.data() + o * sp.inner;
      for (std::size_t j = 0; j < sp.inner; ++j) d[j] += row[j];
    }
  }
  for (auto& v : dst) v *= factor;
  return x.tape().record(op, std::move(out), {x}, [sp, factor](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.n; ++i) {
        for (std::size_t j = 0; j < sp.inner; ++j) {
          rd[(o * sp.n + i) * sp.inner + j] = gd[o * sp.inner + j] * factor;
        }
      }
    }
    return std::vector<Tensor>{std::move(r)};
  });
}

}  // namespace

Var sum(const Var& x, std::size_t axis) { return reduce_axis("sum_axis", x, axis, 1.0); }

Var mean(const Var& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "mean_axis");
  return reduce_axis("mean_axis", x, axis, 1.0 / static_cast<double>(sp.n));
}

Var max(const Var& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "max_axis");
  Tensor out(drop_axis(x.shape(), axis));
  std::vector<std::size_t> argmax(out.size());
  auto src = x.value().data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t best = o * sp.n * sp.inner + j;
      for (std::size_t i = 1; i < sp.n; ++i) {
        const std::size_t idx = (o * sp.n + i) * sp.inner + j;
        if (src[idx] > src[best]) best = idx;
      }
      dst[o * sp.inner + j] = src[best];
      argmax[o * sp.inner + j] = best;
    }
  }
  return x.tape().record("max_axis", std::move(out), {x},
                         [argmax = std::move(argmax)](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for (std::size_t k = 0; k < argmax.size(); ++k) rd[argmax[k]] += gd[k];
    return std::vector<Tensor>{std::move(r)};
  });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw DomainError("log: negative input " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); },
               [](double in, double) { return 1.0 / in; });
}

Var abs(const Var& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(const Var& x) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Var power(const Var& x, double p) {
  const bool integral = std::floor(p) == p;
  for (double v : x.value().data()) {
    if (v < 0.0 && !integral) {
      throw DomainError("power: negative base " + std::to_string(v) + " with exponent " +
                        std::to_string(p));
    }
  }
  return unary("power", x, [p](double v) { return std::pow(v, p); },
               [p](double in, double) { return p * std::pow(in, p - 1.0); });
}

Var clamp(const Var& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double in, double) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// axis-wise normalizers

namespace {

// Visits each 1-d fiber along the split axis.
template <typename F>
void for_each_fiber(const AxisSplit& sp, F f) {
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) f(o * sp.n * sp.inner + j, sp.inner);
  }
}

}  // namespace

Var softmax(const Var& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  auto src = x.value().data();
  auto dst = out.mutable_data();
  for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, src[base + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < sp.n; ++i) {
      dst[base + i * stride] = std::exp(src[base + i * stride] - m);
      z += dst[base + i * stride];
    }
    for (std::size_t i = 0; i < sp.n; ++i) dst[base + i * stride] /= z;
  });
  return x.tape().record("softmax", std::move(out), {x}, [sp](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto y = g.output.data();
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
      double dot = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) dot += gd[base + i * stride] * y[base + i * stride];
      for (std::size_t i = 0; i < sp.n; ++i) {
        const std::size_t k = base + i * stride;
        rd[k] = y[k] * (gd[k] - dot);
      }
    });
    return std::vector<Tensor>{std::move(r)};
  });
}

Var log_softmax(const Var& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "log_softmax");
  Tensor out(x.shape());
  auto src = x.value().data();
  auto dst = out.mutable_data();
  for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, src[base + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < sp.n; ++i) z += std::exp(src[base + i * stride] - m);
    const double lse = m + std::log(z);
    for (std::size_t i = 0; i < sp.n; ++i) dst[base + i * stride] = src[base + i * stride] - lse;
  });
  return x.tape().record("log_softmax", std::move(out), {x}, [sp](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto y = g.output.data();
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
      double gs = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) gs += gd[base + i * stride];
      for (std::size_t i = 0; i < sp.n; ++i) {
        const std::size_t k = base + i * stride;
        rd[k] = gd[k] - std::exp(y[k]) * gs;
      }
    });
    return std::vector<Tensor>{std::move(r)};
  });
}

Var log_sum_exp(const Var& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "log_sum_exp");
  Tensor out(drop_axis(x.shape(), axis));
  auto src = x.value().data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const std::size_t base = o * sp.n * sp.inner + j;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) m = std::max(m, src[base + i * sp.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) z += std::exp(src[base + i * sp.inner] - m);
      dst[o * sp.inner + j] = m + std::log(z);
    }
  }
  return x.tape().record("log_sum_exp", std::move(out), {x}, [sp](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto xs = g.inputs[0]->data();
    auto y = g.output.data();
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const std::size_t base = o * sp.n * sp.inner + j;
        const std::size_t oi = o * sp.inner + j;
        for (std::size_t i = 0; i < sp.n; ++i) {
          const std::size_t k = base + i * sp.inner;
          rd[k] = gd[oi] * std::exp(xs[k] - y[oi]);
        }
      }
    }
    return std::vector<Tensor>{std::move(r)};
  });
}

Var l2_normalize(const Var& x, std::size_t axis, double eps) {
  const auto sp = split_axis(x.shape(), axis, "l2_normalize");
  Tensor out(x.shape());
  std::vector<double> norms(sp.outer * sp.inner);
  auto src = x.value().data();
  auto dst = out.mutable_data();
  std::size_t fiber = 0;
  for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
    double ss = 0.0;
    for (std::size_t i = 0; i < sp.n; ++i) ss += src[base + i * stride] * src[base + i * stride];
    const double nrm = std::max(std::sqrt(ss), eps);
    norms[fiber++] = nrm;
    for (std::size_t i = 0; i < sp.n; ++i) dst[base + i * stride] = src[base + i * stride] / nrm;
  });
  return x.tape().record("l2_normalize", std::move(out), {x},
                         [sp, eps, norms = std::move(norms)](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto y = g.output.data();
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    std::size_t f = 0;
    for_each_fiber(sp, [&](std::size_t base, std::size_t stride) {
      const double nrm = norms[f++];
      if (nrm <= eps) {
        for (std::size_t i = 0; i < sp.n; ++i) rd[base + i * stride] = gd[base + i * stride] / eps;
        return;
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) dot += gd[base + i * stride] * y[base + i * stride];
      for (std::size_t i = 0; i < sp.n; ++i) {
        const std::size_t k = base + i * stride;
        rd[k] = (gd[k] - y[k] * dot) / nrm;
      }
    });
    return std::vector<Tensor>{std::move(r)};
  });
}

// ---------------------------------------------------------------------------
// structural ops

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_string(s) + " does not match " +
                       shape_string(first) + " off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const auto sp = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  auto dst = out.mutable_data();
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto src = xs[t].value().data();
    const std::size_t chunk = widths[t] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(src.data() + o * chunk, src.data() + (o + 1) * chunk,
                dst.data() + o * sp.n * sp.inner + offset * sp.inner);
    }
    offset += widths[t];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return xs[0].tape().record("concat", std::move(out), std::move(inputs),
                             [sp, widths](const BackwardArgs& g) {
    std::vector<Tensor> r(g.inputs.size());
    auto gd = g.grad.data();
    std::size_t offset = 0;
    for (std::size_t t = 0; t < g.inputs.size(); ++t) {
      const std::size_t chunk = widths[t] * sp.inner;
      if (g.needs[t]) {
        r[t] = Tensor(g.inputs[t]->shape());
        auto rd = r[t].mutable_data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = gd.data() + o * sp.n * sp.inner + offset * sp.inner;
          std::copy(src, src + chunk, rd.data() + o * chunk);
        }
      }
      offset += widths[t];
    }
    return r;
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](const BackwardArgs& g) {
    return std::vector<Tensor>{g.grad.reshaped(g.inputs[0]->shape())};
  });
}

namespace {

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // stride in the input for each output axis
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) st[i] = in_strides[perm[i]];

  Tensor out(out_shape);
  auto src = x.data();
  auto dst = out.mutable_data();
  std::vector<std::size_t> idx(r, 0);
  std::size_t in_off = 0;
  for (std::size_t k = 0; k < dst.size(); ++k) {
    dst[k] = src[in_off];
    for (std::size_t a = r; a-- > 0;) {
      ++idx[a];
      in_off += st[a];
      if (idx[a] < out_shape[a]) break;
      in_off -= st[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  return out;
}

}  // namespace

Var transpose(const Var& x, std::vector<std::size_t> perm) {
  const std::size_t r = x.shape().size();
  std::vector<char> seen(r, 0);
  bool ok = perm.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = perm[i] < r && !seen[perm[i]];
    if (ok) seen[perm[i]] = 1;
  }
  if (!ok) throw ShapeError("transpose: invalid permutation for shape " + shape_string(x.shape()));
  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) inverse[perm[i]] = i;
  Tensor out = permute(x.value(), perm);
  return x.tape().record("transpose", std::move(out), {x}, [inverse](const BackwardArgs& g) {
    return std::vector<Tensor>{permute(g.grad, inverse)};
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > sp.n) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis of size " +
                     std::to_string(sp.n));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  auto src = x.value().data();
  auto dst = out.mutable_data();
  const std::size_t chunk = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* s = src.data() + o * sp.n * sp.inner + start * sp.inner;
    std::copy(s, s + chunk, dst.data() + o * chunk);
  }
  return x.tape().record("slice", std::move(out), {x}, [sp, start, chunk](const BackwardArgs& g) {
    Tensor r(g.inputs[0]->shape());
    auto gd = g.grad.data();
    auto rd = r.mutable_data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(gd.data() + o * chunk, gd.data() + (o + 1) * chunk,
                rd.data() + o * sp.n * sp.inner + start * sp.inner);
    }
    return std::vector<Tensor>{std::move(r)};
  });
}

Var detach(const Var& x) { return x.tape().constant(x.value()); }

}  // namespace mtcmtm
