#include "alm/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "alm/error.hpp"
#include "alm/hash.hpp"

namespace alm {
namespace {

constexpr char kMagic[4] = {'A', 'L', 'M', 'M'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error("model file truncated at byte offset " + std::to_string(bytes_.size()) +
                  " (needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::size_t expected_size(const ParamLayout& layout) {
  std::size_t n = 4 + 4 + 6 * 4;
  for (const TensorSpec& s : layout.tensors) n += 4 + s.name.size() + 4 + 4 * s.shape.size() + 4 * s.numel;
  return n + 8;
}

}  // namespace

std::string serialize_model(const Model& model) {
  const ModelConfig& c = model.config();
  std::string out;
  out.reserve(expected_size(model.layout()));
  out.append(kMagic, 4);
  put_u32(out, kModelFormatVersion);
  for (std::uint32_t v : {c.vocab_size, c.context_len, c.d_model, c.n_layers, c.n_heads, c.d_ff}) put_u32(out, v);
  const auto values = model.values();
  for (const TensorSpec& s : model.layout().tensors) {
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    put_u32(out, static_cast<std::uint32_t>(s.shape.size()));
    for (std::size_t dim : s.shape) put_u32(out, static_cast<std::uint32_t>(dim));
    for (std::size_t i = 0; i < s.numel; ++i) put_u32(out, std::bit_cast<std::uint32_t>(values[s.offset + i]));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Model parse_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw Error("not a model file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw Error("unsupported model format version " + std::to_string(version) + " (expected " +
                std::to_string(kModelFormatVersion) + ")");
  }
  ModelConfig c;
  c.vocab_size = r.u32();
  c.context_len = r.u32();
  c.d_model = r.u32();
  c.n_layers = r.u32();
  c.n_heads = r.u32();
  c.d_ff = r.u32();
  // Bound the header before allocating anything from it.
  if (c.vocab_size > (1u << 24) || c.context_len > (1u << 20) || c.d_model > (1u << 16) ||
      c.n_layers > 4096 || c.d_ff > (1u << 20)) {
    throw Error("model header has implausible dimensions");
  }
  const ParamLayout layout = make_layout(c);
  const std::size_t want = expected_size(layout);
  if (bytes.size() < want) {
    throw Error("model file truncated at byte offset " + std::to_string(bytes.size()) +
                " (expected " + std::to_string(want) + " bytes)");
  }
  if (bytes.size() > want) {
    throw Error("model file has " + std::to_string(bytes.size() - want) +
                " unexpected trailing bytes after offset " + std::to_string(want));
  }
  const std::uint64_t stored = Reader(bytes.substr(want - 8)).u64();
  if (stored != fnv1a64(bytes.substr(0, want - 8))) throw Error("model file checksum mismatch");

  Model model(c);
  auto values = model.values();
  for (const TensorSpec& s : layout.tensors) {
    const std::uint32_t name_len = r.u32();
    if (r.take(name_len) != s.name) throw Error("model file: unexpected tensor at offset " + std::to_string(r.pos()));
    if (r.u32() != s.shape.size()) throw Error("model file: rank mismatch for '" + s.name + "'");
    for (std::size_t dim : s.shape) {
      if (r.u32() != dim) throw Error("model file: shape mismatch for '" + s.name + "'");
    }
    for (std::size_t i = 0; i < s.numel; ++i) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw Error("model file: non-finite weight in '" + s.name + "'");
      values[s.offset + i] = v;
    }
  }
  return model;
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_binary_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) {
  try {
    return parse_model(read_binary_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace alm
