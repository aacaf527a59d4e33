// SPDX-License-Identifier: Apache-2.0
#include "close/hashing.hpp"

#include <cstdio>

namespace closenet {

std::string to_hex(std::uint64_t value) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(value));
  return buffer;
}

std::string Fnv1a::hex() const { return to_hex(state_); }

}  // namespace closenet
