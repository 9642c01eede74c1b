#include "mtcmtm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mtcmtm {

namespace {

constexpr const char* kFormat = "mtcmtm-checkpoint-1";

void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : ckpt.params.entries()) {
    const std::size_t offset = payload.size();
    for (double v : e.value.data()) put_f32_le(payload, static_cast<float>(v));
    tensors.push_back({{"name", e.name},
                       {"shape", e.value.shape()},
                       {"dtype", "float32"},
                       {"trainable", e.trainable},
                       {"byte_offset", offset},
                       {"byte_length", payload.size() - offset}});
  }
  nlohmann::json manifest = {{"format", kFormat},
                             {"config_hash", ckpt.config_hash},
                             {"rng_state", ckpt.rng_state},
                             {"epoch", ckpt.epoch},
                             {"meta", ckpt.meta},
                             {"payload_bytes", payload.size()},
                             {"payload_fnv1a", fnv1a_hex(payload)},
                             {"tensors", tensors}};
  const std::string text = manifest.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  std::string out;
  out.reserve(4 + text.size() + payload.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xffu));
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4) throw CheckpointError("checkpoint truncated before manifest length");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len = (len << 8) | static_cast<unsigned char>(bytes[i]);
  if (bytes.size() - 4 < len) throw CheckpointError("checkpoint manifest length exceeds file size");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(4, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(4 + len);

  Checkpoint ckpt;
  try {
    if (manifest.at("format") != kFormat) throw CheckpointError("unknown checkpoint format");
    if (manifest.at("payload_bytes").get<std::size_t>() != payload.size()) {
      throw CheckpointError("checkpoint payload has " + std::to_string(payload.size()) +
                            " bytes, manifest says " +
                            std::to_string(manifest.at("payload_bytes").get<std::size_t>()));
    }
    if (manifest.at("payload_fnv1a").get<std::string>() != fnv1a_hex(payload)) {
      throw CheckpointError("checkpoint payload checksum mismatch");
    }
    ckpt.config_hash = manifest.at("config_hash").get<std::string>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.epoch = manifest.at("epoch").get<std::size_t>();
    ckpt.meta = manifest.at("meta").get<std::map<std::string, std::string>>();

    std::size_t expected_offset = 0;
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("byte_offset").get<std::size_t>();
      const auto length = t.at("byte_length").get<std::size_t>();
      if (t.at("dtype") != "float32") throw CheckpointError("tensor '" + name + "' is not float32");
      if (offset != expected_offset) {
        throw CheckpointError("tensor '" + name + "' is not contiguous with its predecessor");
      }
      std::size_t count = 1;
      for (std::size_t d : shape) {
        if (d == 0) throw CheckpointError("tensor '" + name + "' has a zero dimension");
        count *= d;
      }
      if (length != 4 * count || offset + length > payload.size()) {
        throw CheckpointError("tensor '" + name + "' byte range does not match its shape");
      }
      Tensor value(shape);
      const auto* p = reinterpret_cast<const unsigned char*>(payload.data() + offset);
      for (std::size_t i = 0; i < count; ++i) value[i] = get_f32_le(p + 4 * i);
      ckpt.params.add(name, std::move(value), t.at("trainable").get<bool>());
      expected_offset = offset + length;
    }
    if (expected_offset != payload.size()) throw CheckpointError("checkpoint payload has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

void restore_params(const Checkpoint& ckpt, ParamStore& model, const std::string& prefix) {
  try {
    model.load_prefix(ckpt.params, prefix);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint does not match model: ") + e.what());
  }
}

}  // namespace mtcmtm
