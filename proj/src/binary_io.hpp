#pragma once

// Little-endian byte encoding shared by the model and dataset containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace evuda::io {

static_assert(std::endian::native == std::endian::little, "container encoding assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  /// Appends the CRC-32 of everything written so far.
  void seal();
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; every failure is a FormatError naming the offset.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n);
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t max_len = 4096);
  void expect_magic(const char (&magic)[5]);
  /// Checks the trailing CRC-32 and shrinks the readable range to exclude it.
  void verify_checksum();
  void expect_end() const;
  [[noreturn]] void fail(const std::string& msg) const;
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::uint32_t crc32(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace evuda::io
