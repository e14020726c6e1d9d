// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dsner {

// Row-major float32 array.
struct NamedArray {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;
};

// Archive layout (all integers little-endian):
//   magic "DSNRCKPT" | u32 version | u64 manifest_len | manifest bytes
//   | u32 array_count | per array: u32 name_len, name, u32 rows, u32 cols,
//   rows*cols f32 | u64 FNV-1a checksum of every preceding byte.
// The manifest is plain text, one "key=value" per line.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> manifest;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                  const std::string& source = "<memory>");

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// Hex FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace dsner
