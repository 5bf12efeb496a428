#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "mefa/errors.hpp"

namespace mefa::io {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Little-endian byte source that reports the failing offset on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated file reading ") + what, pos_);
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& data);

}  // namespace mefa::io
