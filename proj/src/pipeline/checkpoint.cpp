#include "svq/pipeline/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace svq {

namespace {

// little-endian regardless of the host
template <class T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put(out, std::bit_cast<std::uint64_t>(d)); }

class Cursor {
 public:
  explicit Cursor(const std::string& b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out = "SVQN";
  put<std::uint32_t>(out, c.version);
  const std::string cfg = c.config.dump();
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint64_t>(out, c.rng.key);
  put<std::uint64_t>(out, c.rng.counter);
  put<std::uint64_t>(out, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Cursor in(bytes);
  if (in.bytes(4) != "SVQN") throw CheckpointError("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = in.get<std::uint32_t>();
  if (c.version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
  }
  const auto cfg_len = in.get<std::uint64_t>();
  try {
    c.config = nlohmann::json::parse(in.bytes(cfg_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  c.rng.key = in.get<std::uint64_t>();
  c.rng.counter = in.get<std::uint64_t>();
  const auto n = in.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != 0) throw CheckpointError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    const auto rank = in.get<std::uint32_t>();
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(in.get<std::uint64_t>());
      count *= shape.back();
    }
    if (count > in.remaining() / 8) throw CheckpointError("tensor '" + name + "' payload truncated");
    Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) t[i] = std::bit_cast<double>(in.get<std::uint64_t>());
    if (!c.tensors.emplace(name, std::move(t)).second) throw CheckpointError("duplicate tensor '" + name + "'");
  }
  if (in.remaining() != 0) throw CheckpointError("trailing bytes after the tensor table");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return deserialize_checkpoint(s.str());
}

}  // namespace svq
