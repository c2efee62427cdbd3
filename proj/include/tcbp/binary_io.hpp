#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tcbp {

// Raised for malformed or corrupted on-disk data (bad magic, CRC mismatch,
// truncated payload).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
std::uint64_t crc64(std::span<const std::uint8_t> bytes);

// Little-endian serialization helpers. All on-disk integers and floats in
// this project go through these.
class ByteWriter {
 public:
  void put_bytes(std::string_view raw);
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f32(float v);
  // Appends CRC-64 of everything written so far.
  void put_crc();

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  // `what` names the source in error messages (usually a path).
  ByteReader(std::span<const std::uint8_t> bytes, std::string what);

  void expect_magic(std::string_view magic);
  std::uint8_t get_u8();
  std::uint16_t get_u16();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  float get_f32();
  std::string get_string(std::size_t n);
  std::span<const std::uint8_t> get_span(std::size_t n);

  // Reads a trailing CRC-64 and checks it against everything before it.
  void verify_crc();
  void expect_end() const;

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace tcbp
