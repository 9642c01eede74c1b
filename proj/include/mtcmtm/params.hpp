#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtcmtm/autodiff.hpp"

namespace mtcmtm {

/// Named model tensors in registration order. Names are hierarchical
/// ("tab.block0.conv1.w"); non-trainable entries hold running statistics.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(std::string name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  /// Replaces a value; the shape must not change.
  void set(const std::string& name, Tensor value);
  bool trainable(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& mutable_entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t trainable_scalars() const;
  std::size_t total_scalars() const;

  /// Copies every entry whose name starts with `prefix` from `other`.
  /// Throws if any of them is missing here or has a different shape.
  void load_prefix(const ParamStore& other, const std::string& prefix);

 private:
  const Entry& entry(const std::string& name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Mode { train, eval };

/// Binds a ParamStore to a Tape for one forward pass.
class Forward {
 public:
  Forward(Tape& tape, ParamStore& store, Mode mode) : tape_(tape), store_(store), mode_(mode) {}

  /// Leaf for a stored tensor; trainable entries become gradient-tracked
  /// parameters, the rest constants. Repeated calls return the same leaf.
  Var param(const std::string& name);
  Var input(Tensor value) { return tape_.constant(std::move(value)); }

  Tape& tape() { return tape_; }
  ParamStore& store() { return store_; }
  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::train; }

  /// Train-mode batch norm writes running statistics only when enabled.
  bool update_running_stats() const { return update_running_stats_; }
  void set_update_running_stats(bool on) { update_running_stats_ = on; }

  /// Gradients for every trainable entry of the store (zeros if unused).
  GradMap gradients(const Var& loss);

 private:
  Tape& tape_;
  ParamStore& store_;
  Mode mode_;
  bool update_running_stats_ = true;
  std::unordered_map<std::string, Var> constants_;
};

}  // namespace mtcmtm
