#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ttc {

// SHA-256 of the given bytes, lowercase hex.
std::string sha256_hex(std::string_view bytes);

// First 8 bytes of SHA-256, little-endian. Used for seed derivation and
// cache keys where a fixed-width value is needed.
uint64_t sha256_prefix64(std::string_view bytes);

}  // namespace ttc
