#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dimask/errors.hpp"

// Little-endian binary encoding shared by the checkpoint and dataset formats.

namespace dimask::binio {

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }

  void put_bytes(std::string_view raw) { bytes_.append(raw); }

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[offset_ + i])) << (8 * i);
    }
    offset_ += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto out = bytes_.substr(offset_, n);
    offset_ += n;
    return out;
  }

  std::size_t offset() const { return offset_; }
  bool at_end() const { return offset_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError(what_ + ": " + message + " at byte offset " + std::to_string(offset_), offset_);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - offset_ < n) {
      fail("truncated input (need " + std::to_string(n) + " bytes, " +
           std::to_string(bytes_.size() - offset_) + " left)");
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace dimask::binio
