#include "hsl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hsl {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'L', 'B'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw ParseError(std::string("checkpoint: truncated while reading ") + what +
                       " at byte offset " + std::to_string(pos));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(bytes[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::string encode_params(const ModelParams& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& [name, t] : params.items) {
    if (name.size() > 0xffff) throw ContractError("checkpoint: parameter name too long");
    if (t.rank() > 0xff) throw ContractError("checkpoint: parameter rank too large");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (float v : t.values()) put_f32(out, v);
  }
  return out;
}

ModelParams decode_params(const std::string& bytes) {
  Reader r{bytes};
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw ParseError("checkpoint: bad magic bytes at byte offset 0");
  const std::uint16_t version = r.u16("version");
  if (version != kVersion)
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t count = r.u32("parameter count");

  ModelParams p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("name length");
    const std::string name = r.str(name_len, "name");
    const std::uint8_t rank = r.u8("rank");
    Shape shape;
    long long numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dimension");
      if (dim == 0 || dim > 1u << 28)
        throw ParseError("checkpoint: implausible dimension " + std::to_string(dim) +
                         " at byte offset " + std::to_string(r.pos - 4));
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = r.f32("values");
    p.add(name, Tensor::from_values(std::move(shape), std::move(values), true));
  }
  if (r.pos != bytes.size())
    throw ParseError("checkpoint: " + std::to_string(bytes.size() - r.pos) +
                     " trailing bytes at byte offset " + std::to_string(r.pos));
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failure on " + path);
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failure on " + path);
}

void save_params(const std::string& path, const ModelParams& params) {
  write_file(path, encode_params(params));
}

ModelParams load_params(const std::string& path) { return decode_params(read_file(path)); }

}  // namespace hsl
