#pragma once

// Single-file checkpoint: "PVGRU1", u32 entry count, then per entry
// u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64), u32 rank,
// rank x u64 dims, raw little-endian data.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvgru/model.hpp"
#include "pvgru/optim.hpp"

namespace pvgru {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::f64;
  Tensor value;
};

namespace detail {

inline void put_u(std::ostream& os, std::uint64_t v, int bytes) {
  char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, bytes);
}

inline std::uint64_t get_u(std::istream& is, int bytes, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), bytes)) throw CheckpointError("checkpoint truncated while reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "PVGRU1";

class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t, DType dtype = DType::f64) {
    if (index_.count(name)) throw CheckpointError("duplicate checkpoint entry " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, dtype, t});
  }

  void put_scalar(const std::string& name, double v) { put(name, Tensor(Shape{1}, std::vector<double>{v})); }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("checkpoint has no entry " + name);
    return entries_[it->second].value;
  }

  double scalar(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.size() != 1) throw CheckpointError("checkpoint entry " + name + " is not a scalar");
    return t[0];
  }

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void write(std::ostream& os) const {
    os.write(kCheckpointMagic, 6);
    detail::put_u(os, entries_.size(), 4);
    for (const auto& e : entries_) {
      detail::put_u(os, e.name.size(), 4);
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      detail::put_u(os, static_cast<std::uint8_t>(e.dtype), 1);
      const Shape& s = e.value.shape();
      detail::put_u(os, s.size(), 4);
      for (std::size_t d : s) detail::put_u(os, d, 8);
      for (double x : e.value.values()) {
        if (e.dtype == DType::f64) {
          detail::put_u(os, std::bit_cast<std::uint64_t>(x), 8);
        } else {
          detail::put_u(os, std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
        }
      }
    }
  }

  static Checkpoint read(std::istream& is) {
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kCheckpointMagic, 6) != 0) {
      throw CheckpointError("not a checkpoint (bad magic)");
    }
    Checkpoint c;
    const auto n = detail::get_u(is, 4, "entry count");
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto len = detail::get_u(is, 4, "name length");
      std::string name(len, '\0');
      if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated in name");
      const auto tag = detail::get_u(is, 1, name + " dtype");
      if (tag > 1) throw CheckpointError("entry " + name + ": unknown dtype " + std::to_string(tag));
      const auto rank = detail::get_u(is, 4, name + " rank");
      Shape shape;
      for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(detail::get_u(is, 8, name + " dims"));
      Tensor t(shape);
      for (double& x : t.values()) {
        if (tag == 1) {
          x = std::bit_cast<double>(detail::get_u(is, 8, name));
        } else {
          x = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_u(is, 4, name)));
        }
      }
      c.put(name, t, static_cast<DType>(tag));
    }
    return c;
  }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw CheckpointError("cannot write " + tmp);
      write(os);
      if (!os) throw CheckpointError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint to " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    return read(is);
  }

 private:
  std::vector<CheckpointEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Model configuration and weights

inline void put_model_config(Checkpoint& c, const ModelConfig& m) {
  c.put_scalar("config/architecture", static_cast<double>(m.architecture));
  c.put_scalar("config/cell", static_cast<double>(m.cell));
  c.put_scalar("config/d_embed", static_cast<double>(m.d_embed));
  c.put_scalar("config/d_hidden", static_cast<double>(m.d_hidden));
  c.put_scalar("config/encoder_layers", static_cast<double>(m.encoder_layers));
  c.put_scalar("config/decoder_layers", static_cast<double>(m.decoder_layers));
  c.put_scalar("config/vocab_size", static_cast<double>(m.vocab_size));
  c.put_scalar("config/max_turns", static_cast<double>(m.max_turns));
  c.put_scalar("config/max_tokens", static_cast<double>(m.max_tokens));
  c.put_scalar("config/tie_embeddings", m.tie_embeddings);
  c.put_scalar("config/use_bias", m.use_bias);
  c.put_scalar("config/head_depth", static_cast<double>(m.head_depth));
  c.put_scalar("config/context_input_v", m.context_input_v);
}

inline ModelConfig get_model_config(const Checkpoint& c) {
  auto n = [&](const char* k) { return static_cast<std::size_t>(c.scalar(std::string("config/") + k)); };
  ModelConfig m;
  m.architecture = static_cast<Architecture>(n("architecture"));
  m.cell = static_cast<CellKind>(n("cell"));
  m.d_embed = n("d_embed");
  m.d_hidden = n("d_hidden");
  m.encoder_layers = n("encoder_layers");
  m.decoder_layers = n("decoder_layers");
  m.vocab_size = n("vocab_size");
  m.max_turns = n("max_turns");
  m.max_tokens = n("max_tokens");
  m.tie_embeddings = n("tie_embeddings") != 0;
  m.use_bias = n("use_bias") != 0;
  m.head_depth = n("head_depth");
  m.context_input_v = n("context_input_v") != 0;
  m.validate();
  return m;
}

inline void put_model(Checkpoint& c, const Model& model, DType dtype = DType::f64) {
  put_model_config(c, model.config);
  for_each_present(model.weights,
                   [&](const std::string& name, const Tensor& t) { c.put("param/" + name, t, dtype); });
}

/// Rebuilds a model from its stored configuration; every parameter must be present with its shape.
inline Model get_model(const Checkpoint& c) {
  Model m = Model::init(get_model_config(c), 0);
  for_each_present(m.weights, [&](const std::string& name, Tensor& t) {
    const Tensor& stored = c.get("param/" + name);
    if (stored.shape() != t.shape()) {
      throw CheckpointError("param/" + name + ": stored shape " + shape_string(stored.shape()) + ", model expects " +
                            shape_string(t.shape()));
    }
    t = stored;
  });
  return m;
}

}  // namespace pvgru
