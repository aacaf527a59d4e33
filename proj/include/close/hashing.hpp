// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace closenet {

/// 64-bit FNV-1a. Stable across platforms of the same endianness; used for
/// cache keys, taxonomy fingerprints and checkpoint hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) noexcept {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) noexcept { update(text.data(), text.size()); }
  void update(std::span<const double> values) noexcept {
    update(values.data(), values.size_bytes());
  }
  template <typename T>
  void update_value(const T& value) noexcept {
    update(&value, sizeof(T));
  }

  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

}  // namespace closenet
