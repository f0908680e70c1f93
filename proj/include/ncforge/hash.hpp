#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ncf {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes) noexcept {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) noexcept {
    update({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  }
  void update(std::span<const double> values) noexcept {
    update({reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()});
  }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace ncf
