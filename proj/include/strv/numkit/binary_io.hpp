#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "strv/errors.hpp"

namespace strv::numkit {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

// Little-endian primitive writer over an ostream.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_span(std::span<const T> values) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
  }
  void put_bytes(std::string_view bytes) {
    out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  void check(const std::string& path) const {
    if (!out_) throw IoError("write failed: " + path);
  }

 private:
  std::ostream& out_;
};

// Reader counterpart; any short read raises IoError (truncated payload).
class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    read(&value, sizeof(T));
    return value;
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_span(std::span<T> values) {
    read(values.data(), values.size_bytes());
  }
  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& path() const { return path_; }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("truncated file: " + path_);
  }

  std::istream& in_;
  std::string path_;
};

}  // namespace strv::numkit
