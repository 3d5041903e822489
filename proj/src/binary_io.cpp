#include "binary_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "evuda/errors.hpp"

namespace evuda::io {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, 1u << 30));
    c = ::crc32(c, data.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

void Writer::seal() { put<std::uint32_t>(crc32(buf_)); }

void Reader::bytes(void* p, std::size_t n) {
  if (n > remaining()) {
    fail("truncated: needed " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
  }
  std::memcpy(p, data_.data() + pos_, n);
  pos_ += n;
}

std::string Reader::str(std::size_t max_len) {
  const auto n = get<std::uint32_t>();
  if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

void Reader::expect_magic(const char (&magic)[5]) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    pos_ = 0;
    fail(std::string("bad magic, expected \"") + magic + "\"");
  }
}

void Reader::verify_checksum() {
  if (data_.size() < 4) fail("truncated: no room for checksum");
  const std::size_t body = data_.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, data_.data() + body, 4);
  if (stored != crc32(data_.first(body))) {
    pos_ = body;
    fail("checksum mismatch");
  }
  data_ = data_.first(body);
}

void Reader::expect_end() const {
  if (remaining() != 0) fail(std::to_string(remaining()) + " unexpected trailing bytes");
}

void Reader::fail(const std::string& msg) const {
  throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ResourceError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw ResourceError("write to '" + path + "' failed");
}

}  // namespace evuda::io
