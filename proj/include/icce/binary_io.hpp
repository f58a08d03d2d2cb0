#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace icce::io {

// Little-endian primitive writer/reader over std::fstream. All on-disk
// formats in this project are explicitly little-endian regardless of host.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void string(std::string_view s);  // u32 length + bytes

  void close();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::string string();
  void read_bytes(char* dst, std::size_t count);

  /// True when every byte has been consumed.
  bool at_end();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
/// Lower-case hex SHA-256 of a string.
std::string sha256_text(std::string_view text);

}  // namespace icce::io
