// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "ssp/tensor.hpp"

namespace ssp {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

/// Digest of a tensor's serialized form (shape and payload).
std::string tensor_sha256(const Tensor& t);

}  // namespace ssp
