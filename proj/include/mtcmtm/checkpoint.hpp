#pragma once

// Checkpoint file: 4-byte big-endian manifest length, JSON manifest, then
// the tensors as little-endian float32 in manifest order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mtcmtm/params.hpp"

namespace mtcmtm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ParamStore params;
  std::string config_hash;
  std::string rng_state;
  std::size_t epoch = 0;
  std::map<std::string, std::string> meta;
};

/// FNV-1a 64-bit hash as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `ckpt` whose name starts with `prefix` into
/// `model`, which must hold exactly the same names and shapes under that
/// prefix. An empty prefix means all tensors, in both directions.
void restore_params(const Checkpoint& ckpt, ParamStore& model, const std::string& prefix = "");

}  // namespace mtcmtm
