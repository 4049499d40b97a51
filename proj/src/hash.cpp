#include "ttc/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace ttc {

namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view bytes) {
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw std::runtime_error("sha256 digest failed");
    }
    return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    auto raw = sha256_raw(bytes);
    std::string hex;
    hex.reserve(64);
    for (unsigned char b : raw) {
        hex.push_back(digits[b >> 4]);
        hex.push_back(digits[b & 0xf]);
    }
    return hex;
}

uint64_t sha256_prefix64(std::string_view bytes) {
    auto raw = sha256_raw(bytes);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | raw[static_cast<size_t>(i)];
    }
    return v;
}

}  // namespace ttc
