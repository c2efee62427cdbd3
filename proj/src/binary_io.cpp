#include "tcbp/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <boost/crc.hpp>

namespace tcbp {

std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ull, ~0ull, ~0ull, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

void ByteWriter::put_bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::put_u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_crc() { put_u64(crc64(buf_)); }

ByteReader::ByteReader(std::span<const std::uint8_t> bytes, std::string what)
    : bytes_(bytes), what_(std::move(what)) {}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size());
  if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

std::uint8_t ByteReader::get_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::get_u16() {
  need(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint32_t ByteReader::get_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::get_u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

std::string ByteReader::get_string(std::size_t n) {
  auto raw = get_span(n);
  return std::string(raw.begin(), raw.end());
}

std::span<const std::uint8_t> ByteReader::get_span(std::size_t n) {
  need(n);
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::verify_crc() {
  const std::uint64_t expected = crc64(bytes_.first(pos_));
  const std::uint64_t stored = get_u64();
  if (stored != expected) throw FormatError(what_ + ": CRC64 mismatch");
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace tcbp
