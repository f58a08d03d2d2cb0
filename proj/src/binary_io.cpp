#include "icce/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "icce/error.hpp"

namespace icce::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

template <typename T>
void write_raw(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string to_hex(const unsigned char* digest, unsigned int len) {
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) {
    s << std::hex << std::setw(2) << std::setfill('0')
      << static_cast<int>(digest[i]);
  }
  return s.str();
}

class DigestContext {
 public:
  DigestContext() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest initialisation failed");
    }
  }
  ~DigestContext() { EVP_MD_CTX_free(ctx_); }
  DigestContext(const DigestContext&) = delete;
  DigestContext& operator=(const DigestContext&) = delete;

  void update(const void* data, std::size_t len) {
    EVP_DigestUpdate(ctx_, data, len);
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest.data(), &len);
    return to_hex(digest.data(), len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) {
    throw Error("cannot open " + path.string() + " for writing");
  }
}

void BinaryWriter::magic(std::string_view tag) {
  out_.write(tag.data(), static_cast<std::streamsize>(tag.size()));
}
void BinaryWriter::u8(std::uint8_t v) { write_raw(out_, v); }
void BinaryWriter::u32(std::uint32_t v) { write_raw(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { write_raw(out_, v); }
void BinaryWriter::f32(float v) { write_raw(out_, v); }
void BinaryWriter::f64(double v) { write_raw(out_, v); }

void BinaryWriter::f64s(std::span<const double> values) {
  out_.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
}

void BinaryWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) {
    throw Error("write to " + path_.string() + " failed");
  }
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) {
    throw LoadError("cannot open " + path.string());
  }
}

void BinaryReader::read_bytes(char* dst, std::size_t count) {
  in_.read(dst, static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in_.gcount()) != count) {
    throw LoadError(path_.string() + ": unexpected end of file");
  }
}

void BinaryReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  read_bytes(got.data(), got.size());
  if (got != tag) {
    throw LoadError(path_.string() + ": bad magic, expected '" +
                    std::string(tag) + "'");
  }
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  read_bytes(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  read_bytes(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  read_bytes(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
float BinaryReader::f32() {
  float v;
  read_bytes(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double BinaryReader::f64() {
  double v;
  read_bytes(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::vector<double> BinaryReader::f64s(std::size_t count) {
  std::vector<double> v(count);
  read_bytes(reinterpret_cast<char*>(v.data()), count * sizeof(double));
  return v;
}

std::string BinaryReader::string() {
  const auto len = u32();
  std::string s(len, '\0');
  read_bytes(s.data(), len);
  return s;
}

bool BinaryReader::at_end() {
  return in_.peek() == std::ifstream::traits_type::eof();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open " + path.string() + " for hashing");
  }
  DigestContext ctx;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    ctx.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return ctx.hex();
}

std::string sha256_text(std::string_view text) {
  DigestContext ctx;
  ctx.update(text.data(), text.size());
  return ctx.hex();
}

}  // namespace icce::io
