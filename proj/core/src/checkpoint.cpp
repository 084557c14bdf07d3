#include "armp/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <set>

#include "armp/scan_io.hpp"

namespace armp::ckpt {

namespace {

constexpr char kMagic[4] = {'A', 'R', 'M', 'P'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t crc_of(const std::string& bytes, size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len)));
}

struct Reader {
  const uint8_t* p;
  size_t remaining;

  void need(size_t n) const {
    if (remaining < n) throw TruncationError("ARMP: file truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    remaining -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                 (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    remaining -= 4;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    remaining -= n;
  }
};

}  // namespace

void save_checkpoint(const std::string& config_text, const nn::ParamList& params,
                     const std::filesystem::path& path) {
  std::set<std::string> seen;
  for (const auto& [name, t] : params) {
    if (!seen.insert(name).second)
      throw FormatError("ARMP: duplicate parameter name on save: " + name);
    if (!t.defined()) throw ValueError("ARMP: undefined parameter: " + name);
  }

  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<uint32_t>(config_text.size()));
  out += config_text;
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(0);  // dtype f32
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size() * sizeof(float));
  }
  put_u32(out, crc_of(out, out.size()));
  phantom::write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 2 + 4 + 4 + 4) throw TruncationError("ARMP: file too short");

  // Integrity first; only verified bytes get parsed.
  const size_t payload = buf.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(static_cast<uint8_t>(buf[payload + i])) << (8 * i);
  if (crc_of(buf, payload) != stored) throw ChecksumError("ARMP: checksum mismatch");

  Reader r{reinterpret_cast<const uint8_t*>(buf.data()), payload};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("ARMP: bad magic");
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw FormatError("ARMP: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_text = r.str(r.u32());
  const uint32_t count = r.u32();
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    if (!seen.insert(name).second) throw FormatError("ARMP: duplicate tensor name: " + name);
    uint8_t dtype = 0, rank = 0;
    r.bytes(&dtype, 1);
    r.bytes(&rank, 1);
    if (dtype != 0) throw FormatError("ARMP: unsupported dtype");
    Shape shape(rank);
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<size_t>(d)] = static_cast<int>(r.u32());
      numel *= shape[static_cast<size_t>(d)];
    }
    if (numel < 0 || numel > (1ll << 31)) throw FormatError("ARMP: implausible tensor size");
    std::vector<float> data(static_cast<size_t>(numel));
    r.bytes(data.data(), data.size() * sizeof(float));
    ckpt.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  if (r.remaining != 0) throw FormatError("ARMP: trailing bytes");
  return ckpt;
}

void load_into(const Checkpoint& ckpt, const nn::ParamList& target) {
  std::set<std::string> used;
  for (const auto& [name, dst] : target) {
    const Tensor* src = nullptr;
    for (const auto& [cname, ct] : ckpt.tensors) {
      if (cname == name) {
        src = &ct;
        break;
      }
    }
    if (!src) throw FormatError("ARMP: missing tensor name: " + name);
    if (src->shape() != dst.shape())
      throw FormatError("ARMP: shape mismatch for " + name + ": " + shape_str(src->shape()) +
                        " vs " + shape_str(dst.shape()));
    Tensor mut = dst;
    std::copy(src->data().begin(), src->data().end(), mut.raw_data().begin());
    used.insert(name);
  }
  for (const auto& [cname, ct] : ckpt.tensors)
    if (!used.count(cname)) throw FormatError("ARMP: unexpected tensor name: " + cname);
}

void require_config(const Checkpoint& ckpt, const std::string& expected_config_text) {
  if (ckpt.config_text != expected_config_text)
    throw ConfigMismatchError("ARMP: checkpoint config snapshot differs from runtime config");
}

}  // namespace armp::ckpt
