#include "mtcmtm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace mtcmtm {

namespace {
std::atomic<Precision> g_precision{Precision::f32};
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NumericError::NumericError(std::string op, const std::string& detail)
    : std::runtime_error("non-finite value in op '" + op + "': " + detail),
      op_(std::move(op)) {}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

std::string_view precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view name) {
  if (name == "f32" || name == "float32") return Precision::f32;
  if (name == "f64" || name == "float64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(name) +
                              "' (expected f32 or f64)");
}

PrecisionScope::PrecisionScope(Precision p) : saved_(precision()) {
  set_precision(p);
}
PrecisionScope::~PrecisionScope() { set_precision(saved_); }

double round_to_precision(double v) {
  if (precision() == Precision::f32) return static_cast<double>(static_cast<float>(v));
  return v;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return data_[flat];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::quantize() {
  if (precision() != Precision::f32) return;
  for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
}

void check_finite(const Tensor& t, std::string_view op) {
  const auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string(op), "element " + std::to_string(i) + " of output " +
                                              shape_string(t.shape()) + " is " +
                                              std::to_string(data[i]));
    }
  }
}

}  // namespace mtcmtm
