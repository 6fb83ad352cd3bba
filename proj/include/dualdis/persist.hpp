#pragma once

// Single-file checkpoints (.ddck).
//
//   DDCK <manifest byte length>\n
//   <manifest: [section] headers followed by "key = value" lines>
//   <blob: little-endian float32 tensors, row-major, back to back>
//
// Sections: [checkpoint] format fields, [model] ModelConfig, [train] run
// configuration, [state] counters and tables, [tensors] name = shape @ offset.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dualdis/model.hpp"
#include "dualdis/optim.hpp"

namespace dualdis {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct Checkpoint {
  std::string model_text;
  std::string train_text;
  std::vector<std::pair<std::string, std::string>> state;  // ordered key/value pairs
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find_tensor(std::string_view name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  const std::string* find_state(std::string_view key) const {
    for (const auto& [k, v] : state)
      if (k == key) return &v;
    return nullptr;
  }
  void set_state(const std::string& key, std::string value) {
    for (auto& [k, v] : state)
      if (k == key) {
        v = std::move(value);
        return;
      }
    state.emplace_back(key, std::move(value));
  }
};

namespace detail {

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

inline Shape parse_shape_text(const std::string& s, const std::string& where) {
  Shape out;
  if (s == "scalar") return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t x = s.find('x', start);
    if (x == std::string::npos) x = s.size();
    int d = 0;
    const auto [ptr, ec] = std::from_chars(s.data() + start, s.data() + x, d);
    if (ec != std::errc() || ptr != s.data() + x || d <= 0) throw CheckpointError(where + ": bad shape '" + s + "'");
    out.push_back(d);
    start = x + 1;
  }
  return out;
}

inline std::uint32_t bswap32(std::uint32_t u) {
  return (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
}

inline void append_le_floats(std::string& blob, const Tensor<float>& t) {
  const std::size_t at = blob.size();
  blob.resize(at + t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) u = bswap32(u);
    std::memcpy(blob.data() + at + i * 4, &u, 4);
  }
}

inline Tensor<float> read_le_floats(std::string_view bytes, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + i * 4, 4);
    if constexpr (std::endian::native == std::endian::big) u = bswap32(u);
    t[i] = std::bit_cast<float>(u);
  }
  return t;
}

/// Splits "[name]" sections; text before the first header is an error.
inline std::vector<std::pair<std::string, std::string>> split_sections(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(pos, nl - pos));
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      out.emplace_back(line.substr(1, line.size() - 2), "");
    } else if (!line.empty()) {
      if (out.empty()) throw CheckpointError("checkpoint manifest: content before the first section");
      out.back().second += std::string(text.substr(pos, nl - pos)) + "\n";
    }
    pos = nl + 1;
  }
  return out;
}

}  // namespace detail

/// Serializes to bytes; deterministic for equal inputs.
inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string blob;
  std::ostringstream tensors;
  for (const auto& [name, t] : ck.tensors) {
    if (name.find_first_of("=#\n") != std::string::npos) throw CheckpointError("tensor name '" + name + "' is not storable");
    tensors << name << " = " << detail::shape_text(t.shape()) << " @ " << blob.size() << "\n";
    detail::append_le_floats(blob, t);
  }
  std::ostringstream m;
  m << "[checkpoint]\nformat = ddck\nversion = " << kCheckpointVersion << "\nendianness = little\nblob_bytes = " << blob.size()
    << "\n[model]\n"
    << ck.model_text << "[train]\n"
    << ck.train_text << "[state]\n";
  for (const auto& [k, v] : ck.state) m << k << " = " << v << "\n";
  m << "[tensors]\n" << tensors.str();
  const std::string manifest = m.str();
  return "DDCK " + std::to_string(manifest.size()) + "\n" + manifest + blob;
}

namespace detail {

inline Checkpoint decode_checkpoint_unchecked(std::string_view bytes, bool inference_only, const std::string& where) {
  const std::size_t nl = bytes.find('\n');
  if (bytes.substr(0, 5) != "DDCK " || nl == std::string_view::npos || nl > 32) throw CheckpointError(where + ": not a .ddck file");
  std::size_t manifest_len = 0;
  {
    const auto [ptr, ec] = std::from_chars(bytes.data() + 5, bytes.data() + nl, manifest_len);
    if (ec != std::errc() || ptr != bytes.data() + nl) throw CheckpointError(where + ": corrupt header");
  }
  if (bytes.size() - nl - 1 < manifest_len) throw CheckpointError(where + ": truncated manifest");
  const std::string_view manifest = bytes.substr(nl + 1, manifest_len);
  const std::string_view blob = bytes.substr(nl + 1 + manifest_len);

  Checkpoint ck;
  std::string header, tensors;
  for (auto& [name, body] : detail::split_sections(manifest)) {
    if (name == "checkpoint") header = body;
    else if (name == "model") ck.model_text = body;
    else if (name == "train") ck.train_text = body;
    else if (name == "state") {
      const KeyValues kv = KeyValues::parse(body, where + " [state]");
      for (const auto& k : kv.keys()) ck.state.emplace_back(k, kv.get(k));
    } else if (name == "tensors") tensors = body;
    else throw CheckpointError(where + ": unknown section [" + name + "]");
  }
  const KeyValues h = KeyValues::parse(header, where + " [checkpoint]");
  if (!h.has("format") || h.get("format") != "ddck") throw CheckpointError(where + ": missing format field");
  const int version = h.get_int("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(where + ": format version " + std::to_string(version) + " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (h.get("endianness") != "little") throw CheckpointError(where + ": unsupported endianness '" + h.get("endianness") + "'");
  const std::uint64_t blob_bytes = h.get_u64("blob_bytes");
  if (blob.size() != blob_bytes) {
    throw CheckpointError(where + ": blob holds " + std::to_string(blob.size()) + " bytes, manifest declares " + std::to_string(blob_bytes) +
                          " (truncated or corrupt file)");
  }
  const KeyValues tk = KeyValues::parse(tensors, where + " [tensors]");
  std::size_t expected_offset = 0;
  for (const auto& name : tk.keys()) {
    const std::string& v = tk.get(name);
    const auto at = v.find('@');
    if (at == std::string::npos) throw CheckpointError(where + ": tensor '" + name + "' lacks an offset");
    const Shape shape = detail::parse_shape_text(detail::trim(std::string_view(v).substr(0, at)), where);
    const std::string off_text = detail::trim(std::string_view(v).substr(at + 1));
    std::size_t offset = 0;
    const auto [ptr, ec] = std::from_chars(off_text.data(), off_text.data() + off_text.size(), offset);
    if (ec != std::errc() || ptr != off_text.data() + off_text.size()) throw CheckpointError(where + ": bad offset for '" + name + "'");
    const std::size_t nbytes = num_elements(shape) * 4;
    if (offset != expected_offset || offset + nbytes > blob.size()) {
      throw CheckpointError(where + ": tensor '" + name + "' offset " + off_text + " inconsistent with blob length");
    }
    expected_offset = offset + nbytes;
    if (inference_only && name.rfind("opt.", 0) == 0) continue;
    ck.tensors.emplace_back(name, detail::read_le_floats(blob.substr(offset, nbytes), shape));
  }
  if (expected_offset != blob.size()) throw CheckpointError(where + ": blob has trailing bytes");
  return ck;
}

}  // namespace detail

/// Parses checkpoint bytes. `inference_only` skips optimizer tensors ("opt.*").
inline Checkpoint decode_checkpoint(std::string_view bytes, bool inference_only = false, const std::string& where = "checkpoint") {
  try {
    return detail::decode_checkpoint_unchecked(bytes, inference_only, where);
  } catch (const ConfigError& e) {
    throw CheckpointError(where + ": corrupt manifest: " + e.what());
  }
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  namespace fs = std::filesystem;
  const std::string bytes = encode_checkpoint(ck);
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write '" + tmp.string() + "'");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path, bool inference_only = false) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), {});
  return decode_checkpoint(bytes, inference_only, path);
}

// ---------------------------------------------------------------------------
// Model and optimizer state <-> checkpoint tensors.

inline void add_optimizer_tensors(Checkpoint& ck, const std::string& tag, Adam<float>& opt) {
  ck.set_state("opt." + tag + ".steps", std::to_string(opt.step_count()));
  for (std::size_t k = 0; k < opt.parameters().size(); ++k) {
    const std::string& n = opt.parameters()[k]->name();
    ck.tensors.emplace_back("opt." + tag + ".m." + n, opt.first_moments()[k]);
    ck.tensors.emplace_back("opt." + tag + ".v." + n, opt.second_moments()[k]);
  }
}

inline Checkpoint model_checkpoint(Model<float>& model) {
  Checkpoint ck;
  ck.model_text = model.config().to_text();
  for (auto* p : model.parameters()) ck.tensors.emplace_back("param." + p->name(), p->value());
  for (auto& [n, t] : model.buffers()) ck.tensors.emplace_back("buffer." + n, *t);
  return ck;
}

inline void copy_tensor_into(const Checkpoint& ck, const std::string& name, Tensor<float>& dst) {
  const Tensor<float>* src = ck.find_tensor(name);
  if (!src) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
  if (src->shape() != dst.shape()) throw ShapeError("checkpoint tensor " + name, to_string(dst.shape()), src->shape());
  dst = *src;
}

/// Rebuilds the model described by the checkpoint and loads its weights.
inline Model<float> restore_model(const Checkpoint& ck) {
  Model<float> model(ModelConfig::from_text(ck.model_text));
  for (auto* p : model.parameters()) copy_tensor_into(ck, "param." + p->name(), p->value());
  for (auto& [n, t] : model.buffers()) copy_tensor_into(ck, "buffer." + n, *t);
  return model;
}

inline void restore_optimizer(const Checkpoint& ck, const std::string& tag, Adam<float>& opt) {
  const std::string* steps = ck.find_state("opt." + tag + ".steps");
  if (!steps) throw CheckpointError("checkpoint lacks optimizer state '" + tag + "' (saved for inference only?)");
  opt.set_step_count(std::stol(*steps));
  for (std::size_t k = 0; k < opt.parameters().size(); ++k) {
    const std::string& n = opt.parameters()[k]->name();
    copy_tensor_into(ck, "opt." + tag + ".m." + n, opt.first_moments()[k]);
    copy_tensor_into(ck, "opt." + tag + ".v." + n, opt.second_moments()[k]);
  }
}

/// Calibrated flip thresholds, stored as a comma-separated state entry.
inline std::vector<double> checkpoint_epsilons(const Checkpoint& ck) {
  const std::string* v = ck.find_state("epsilon_star");
  if (!v) return {};
  const KeyValues kv = KeyValues::parse("e = " + *v);
  return kv.get_doubles("e");
}

inline void set_checkpoint_epsilons(Checkpoint& ck, const std::vector<double>& eps) {
  std::string s;
  for (std::size_t i = 0; i < eps.size(); ++i) s += (i ? ", " : "") + format_double(eps[i]);
  ck.set_state("epsilon_star", s);
}

}  // namespace dualdis
