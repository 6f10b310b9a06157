#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "viis/config.hpp"

namespace viis {

/// Complete training state: enough to resume bitwise-identically.
struct Checkpoint {
  TrainConfig config;
  ParamStore<float> params;
  ParamStore<float> m, v;  // Adam moments, same keys as params
  uint64_t step = 0;
  Rng rng{0};
};

namespace detail {

inline void put_u32(std::ostream& o, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& o, uint64_t v) {
  put_u32(o, static_cast<uint32_t>(v));
  put_u32(o, static_cast<uint32_t>(v >> 32));
}

inline uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError(path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
         static_cast<uint32_t>(b[3]) << 24;
}

inline uint64_t get_u64(std::istream& in, const std::string& path) {
  const uint64_t lo = get_u32(in, path);
  const uint64_t hi = get_u32(in, path);
  return lo | hi << 32;
}

inline void put_tensor(std::ostream& o, const std::string& name, const Tensor<float>& t) {
  put_u32(o, static_cast<uint32_t>(name.size()));
  o.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(o, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) put_u32(o, static_cast<uint32_t>(d));
  for (float v : t.data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(o, bits);
  }
}

inline std::pair<std::string, Tensor<float>> get_tensor(std::istream& in, const std::string& path) {
  const uint32_t nlen = get_u32(in, path);
  std::string name(nlen, '\0');
  in.read(name.data(), nlen);
  if (!in) throw IoError(path + ": truncated tensor name");
  const uint32_t rank = get_u32(in, path);
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(get_u32(in, path));
  Tensor<float> t(shape);
  for (auto& v : t.data) {
    const uint32_t bits = get_u32(in, path);
    std::memcpy(&v, &bits, 4);
  }
  return {std::move(name), std::move(t)};
}

/// Config text stored inside the tensor container: one byte per element, so
/// the snapshot round-trips exactly within the single wire format.
inline Tensor<float> text_tensor(const std::string& s) {
  Tensor<float> t({static_cast<int>(s.size())});
  for (size_t i = 0; i < s.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(static_cast<unsigned char>(s[i]));
  return t;
}

inline std::string tensor_text(const Tensor<float>& t) {
  std::string s(static_cast<size_t>(t.size()), '\0');
  for (int64_t i = 0; i < t.size(); ++i) s[static_cast<size_t>(i)] = static_cast<char>(static_cast<int>(t[i]));
  return s;
}

}  // namespace detail

/// Atomic write: temp file in the same directory, then rename.
inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw IoError(tmp + ": cannot open for writing");
    o.write("VIIS", 4);
    detail::put_u32(o, 1);  // version
    detail::put_u32(o, static_cast<uint32_t>(1 + c.params.items.size() + c.m.items.size() + c.v.items.size()));
    detail::put_tensor(o, "config.text", detail::text_tensor(config_to_text(c.config)));
    for (auto& [k, t] : c.params.items) detail::put_tensor(o, k, t);
    for (auto& [k, t] : c.m.items) detail::put_tensor(o, k + ".m", t);
    for (auto& [k, t] : c.v.items) detail::put_tensor(o, k + ".v", t);
    detail::put_u64(o, c.step);
    unsigned char state[Rng::kStateBytes];
    c.rng.save_state(state);
    o.write(reinterpret_cast<const char*>(state), Rng::kStateBytes);
    if (!o) throw IoError(tmp + ": write failed");
  }
  fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open checkpoint");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VIIS", 4) != 0) throw IoError(path + ": bad checkpoint magic");
  const uint32_t version = detail::get_u32(in, path);
  if (version != 1) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = detail::get_u32(in, path);
  Checkpoint c;
  bool have_config = false;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::get_tensor(in, path);
    if (name == "config.text") {
      std::istringstream ss(detail::tensor_text(t));
      c.config = parse_config_text(ss);
      have_config = true;
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".m") == 0) {
      c.m.add(name.substr(0, name.size() - 2), std::move(t));
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".v") == 0) {
      c.v.add(name.substr(0, name.size() - 2), std::move(t));
    } else {
      c.params.add(name, std::move(t));
    }
  }
  if (!have_config) throw IoError(path + ": checkpoint has no config snapshot");
  c.step = detail::get_u64(in, path);
  unsigned char state[Rng::kStateBytes];
  in.read(reinterpret_cast<char*>(state), Rng::kStateBytes);
  if (!in) throw IoError(path + ": truncated trailer");
  c.rng.load_state(state);
  return c;
}

}  // namespace viis
