// SPDX-License-Identifier: Apache-2.0
#include "dsner/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <type_traits>

#include "dsner/error.hpp"

namespace dsner {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'N', 'R', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * b)));
  }
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit, std::string source)
      : bytes_(bytes), limit_(limit), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      value |= static_cast<T>(bytes_[pos_ + b]) << (8 * b);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw ChecksumError(source_ + ": truncated checkpoint");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string render_manifest(const std::map<std::string, std::string>& manifest) {
  std::string text;
  for (const auto& [k, v] : manifest) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw SchemaError("manifest entry '" + k + "' contains a reserved character");
    }
    text += k;
    text += '=';
    text += v;
    text += '\n';
  }
  return text;
}

std::map<std::string, std::string> parse_manifest(const std::string& text,
                                                  const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ChecksumError(source + ": malformed manifest line");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw SchemaError("checkpoint has no array '" + name + "'");
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = manifest.find(key);
  if (it == manifest.end()) throw SchemaError("checkpoint manifest lacks key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  const std::string manifest = render_manifest(ckpt.manifest);
  put_le<std::uint64_t>(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (a.data.size() != static_cast<std::size_t>(a.rows) * a.cols) {
      throw ShapeError("array '" + a.name + "' size does not match its shape");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_le<std::uint32_t>(out, a.rows);
    put_le<std::uint32_t>(out, a.cols);
    for (float f : a.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  put_le<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                  const std::string& source) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ChecksumError(source + ": bad magic bytes, not a checkpoint");
  }
  const std::size_t body = bytes.size() - 8;
  Reader tail(bytes, bytes.size(), source);
  std::uint64_t stored = 0;
  for (std::size_t b = 0; b < 8; ++b) {
    stored |= static_cast<std::uint64_t>(bytes[body + b]) << (8 * b);
  }
  if (stored != fnv1a64(bytes.data(), body)) {
    throw ChecksumError(source + ": checksum mismatch, file is corrupted");
  }

  Reader r(bytes, body, source);
  r.get_string(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw VersionError(source + ": checkpoint version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint ckpt;
  const auto manifest_len = r.get<std::uint64_t>();
  ckpt.manifest = parse_manifest(r.get_string(manifest_len), source);
  const auto count = r.get<std::uint32_t>();
  ckpt.arrays.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = r.get_string(r.get<std::uint32_t>());
    a.rows = r.get<std::uint32_t>();
    a.cols = r.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
    a.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.data[i] = std::bit_cast<float>(r.get<std::uint32_t>());
    ckpt.arrays.push_back(std::move(a));
  }
  if (r.pos() != body) throw ChecksumError(source + ": trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

namespace {
std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}
}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(slurp(path), path.string());
}

std::string file_digest(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  std::ostringstream hex;
  hex << std::hex;
  hex.width(16);
  hex.fill('0');
  hex << fnv1a64(bytes.data(), bytes.size());
  return hex.str();
}

}  // namespace dsner
