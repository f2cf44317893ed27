#include "cascade/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "cascade/error.hpp"

namespace cascade {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated integer field");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  const uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("CASC", 4);
  write_u32(os, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t e : t.shape()) write_u32(os, static_cast<uint32_t>(e));
    for (double v : t.data()) write_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

void save_checkpoint(const std::string& path, const ParamStore& store) {
  save_checkpoint(path, store.items());
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StateError("missing checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CASC", 4) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    const int peek = is.peek();
    if (peek == std::char_traits<char>::eof()) break;
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(read_u32(is));
      numel *= shape[i];
    }
    std::vector<double> data(static_cast<size_t>(numel));
    for (auto& v : data) v = static_cast<double>(read_f32(is));
    if (!is) throw IoError("checkpoint: truncated record '" + name + "' in " + path);
    out.emplace_back(std::move(name), Tensor::from_data(shape, std::move(data)));
  }
  return out;
}

void load_checkpoint_into(const std::string& path, ParamStore& store) {
  auto records = load_checkpoint(path);
  std::set<std::string> seen;
  for (auto& [name, t] : records) {
    if (!store.contains(name)) {
      throw StateError("checkpoint " + path + " has unknown parameter '" + name + "'");
    }
    Tensor dst = store.at(name);
    if (dst.shape() != t.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' shape " + shape_str(t.shape()) +
                           " != model shape " + shape_str(dst.shape()));
    }
    dst.mutable_data() = t.data();
    seen.insert(name);
  }
  for (const auto& [name, t] : store.items()) {
    if (!seen.count(name)) {
      throw StateError("checkpoint " + path + " missing parameter '" + name + "'");
    }
  }
}

uint64_t file_fingerprint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for fingerprint: " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace cascade
