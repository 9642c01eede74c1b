#include "mtcmtm/params.hpp"

namespace mtcmtm {

void ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  value.quantize();
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), trainable});
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).value; }

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  Entry& e = entries_[it->second];
  if (e.value.shape() != value.shape()) {
    throw ShapeError("parameter '" + name + "' has shape " + shape_string(e.value.shape()) +
                     ", cannot assign " + shape_string(value.shape()));
  }
  value.quantize();
  e.value = std::move(value);
}

bool ParamStore::trainable(const std::string& name) const { return entry(name).trainable; }

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

std::size_t ParamStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::load_prefix(const ParamStore& other, const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& e : other.entries()) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    if (!contains(e.name)) {
      throw std::invalid_argument("source parameter '" + e.name + "' has no counterpart");
    }
    set(e.name, e.value);
    ++copied;
  }
  for (const auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0 && !other.contains(e.name)) {
      throw std::invalid_argument("parameter '" + e.name + "' missing from source");
    }
  }
  if (copied == 0) throw std::invalid_argument("no parameters with prefix '" + prefix + "'");
}

Var Forward::param(const std::string& name) {
  if (store_.trainable(name)) {
    if (tape_.has_parameter(name)) return tape_.parameter_var(name);
    return tape_.parameter(name, store_.get(name));
  }
  auto it = constants_.find(name);
  if (it != constants_.end()) return it->second;
  Var v = tape_.constant(store_.get(name));
  constants_.emplace(name, v);
  return v;
}

GradMap Forward::gradients(const Var& loss) {
  GradMap grads = tape_.backward(loss);
  for (const auto& e : store_.entries()) {
    if (e.trainable && !grads.count(e.name)) grads.emplace(e.name, Tensor::zeros(e.value.shape()));
  }
  return grads;
}

}  // namespace mtcmtm
