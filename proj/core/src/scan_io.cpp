#include "armp/scan_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace armp::phantom {

namespace {

constexpr char kMagic[4] = {'P', '4', 'D', 'C'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const uint8_t* p;
  size_t remaining;

  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    remaining -= 2;
    return v;
  }
  float f32() {
    need(4);
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    p += 4;
    remaining -= 4;
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    remaining -= n;
  }
  void need(size_t n) const {
    if (remaining < n) throw TruncationError("P4DC: file truncated");
  }
};

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("atomic rename failed: " + path.string() + " (" + ec.message() + ")");
}

void write_scan(const ScanSequence& scan, const std::filesystem::path& path) {
  scan.validate();
  const auto& first = scan.phases.front();
  std::string out;
  out.reserve(14 + scan.phases.size() * first.intensity.size() * 5);
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<uint16_t>(scan.phases.size()));
  put_u16(out, static_cast<uint16_t>(first.height));
  put_u16(out, static_cast<uint16_t>(first.width));
  put_f32(out, static_cast<float>(first.spacing_row_mm));
  put_f32(out, static_cast<float>(first.spacing_col_mm));
  for (const auto& ph : scan.phases) {
    const char* ip = reinterpret_cast<const char*>(ph.intensity.data());
    out.append(ip, ph.intensity.size() * sizeof(float));
    const char* lp = reinterpret_cast<const char*>(ph.labels.data());
    out.append(lp, ph.labels.size());
  }
  write_file_atomic(path, out);
}

ScanSequence read_scan(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open scan: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const uint8_t*>(buf.data()), buf.size()};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("P4DC: bad magic");
  const uint16_t version = r.u16();
  if (version != kVersion)
    throw FormatError("P4DC: unsupported version " + std::to_string(version));
  const int t_count = r.u16();
  const int height = r.u16();
  const int width = r.u16();
  const float sr = r.f32();
  const float sc = r.f32();
  if (t_count < 1 || height < 1 || width < 1) throw FormatError("P4DC: empty dimensions");

  const size_t px = static_cast<size_t>(height) * width;
  const size_t expect = static_cast<size_t>(t_count) * px * 5;
  if (r.remaining < expect) throw TruncationError("P4DC: file truncated");
  if (r.remaining > expect) throw FormatError("P4DC: trailing bytes");

  ScanSequence scan;
  scan.patient_id = path.stem().string();
  scan.phases.resize(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    auto& ph = scan.phases[static_cast<size_t>(t)];
    ph.height = height;
    ph.width = width;
    ph.spacing_row_mm = sr;
    ph.spacing_col_mm = sc;
    ph.phase_index = t;
    ph.intensity.resize(px);
    ph.labels.resize(px);
    r.bytes(ph.intensity.data(), px * sizeof(float));
    r.bytes(ph.labels.data(), px);
  }
  scan.validate();  // invariant violation on load is a rejection
  return scan;
}

void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : entries) out += e.patient_id + "\t" + e.split + "\n";
  write_file_atomic(path, out);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("manifest: malformed line: " + line);
    ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
    if (e.split != "train" && e.split != "test")
      throw FormatError("manifest: unknown split: " + e.split);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace armp::phantom
