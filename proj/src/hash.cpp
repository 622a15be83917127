// SPDX-License-Identifier: Apache-2.0
#include "ssp/hash.hpp"

#include <openssl/sha.h>

#include <array>

#include "ssp/serialize.hpp"

namespace ssp {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * digest.size());
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

std::string tensor_sha256(const Tensor& t) { return sha256_hex(encode_tensor(t)); }

}  // namespace ssp
