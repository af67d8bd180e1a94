#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace mvnet::io {

// Little-endian byte buffer writer.
class Writer {
 public:
  void bytes(const void* data, std::size_t n);
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> v);
  void string(const std::string& s);  // u32 length + bytes

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  // Writes to `path` through a temporary file and rename.
  void save(const std::string& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

// Reader over a whole file; running past the end raises ErrorCode::kTruncated.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data, std::string what = "file");
  static Reader open(const std::string& path);

  // Raises ErrorCode::kBadMagic when the first four bytes differ.
  void expect_magic(const char (&tag)[5]);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void f32s(std::span<float> out);
  std::string string();
  const std::uint8_t* take(std::size_t n);

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

}  // namespace mvnet::io
