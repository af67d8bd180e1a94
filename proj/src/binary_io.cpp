#include "mvnet/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "mvnet/error.hpp"

namespace mvnet::io {

void Writer::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f32s(std::span<const float> v) {
  buf_.reserve(buf_.size() + 4 * v.size());
  for (float x : v) f32(x);
}

void Writer::string(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void Writer::save(const std::string& path) const { write_file(path, buf_); }

Reader::Reader(std::vector<std::uint8_t> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

Reader Reader::open(const std::string& path) { return Reader(read_file(path), path); }

const std::uint8_t* Reader::take(std::size_t n) {
  if (n > remaining())
    fail(ErrorCode::kTruncated, what_ + ": unexpected end of data at byte " + std::to_string(pos_));
  const std::uint8_t* p = data_.data() + pos_;
  pos_ += n;
  return p;
}

void Reader::expect_magic(const char (&tag)[5]) {
  if (remaining() < 4 || std::memcmp(data_.data() + pos_, tag, 4) != 0)
    fail(ErrorCode::kBadMagic, what_ + ": expected magic '" + std::string(tag) + "'");
  pos_ += 4;
}

std::uint8_t Reader::u8() { return *take(1); }

std::uint32_t Reader::u32() {
  const auto* p = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  const auto* p = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

void Reader::f32s(std::span<float> out) {
  if (4 * out.size() > remaining())
    fail(ErrorCode::kTruncated, what_ + ": unexpected end of data at byte " + std::to_string(pos_));
  for (auto& x : out) x = f32();
}

std::string Reader::string() {
  const std::uint32_t n = u32();
  const auto* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
    if (!out) fail(ErrorCode::kIo, "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace mvnet::io
