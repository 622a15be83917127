// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ssp/tensor.hpp"

namespace ssp {

// Binary tensor container:
//   8 bytes  magic "SSPTENS1"
//   u32      rank
//   u32      extents[rank]
//   f64      payload[product(extents)]
// All integers and floats little-endian.
inline constexpr std::string_view kTensorMagic = "SSPTENS1";

std::string encode_tensor(const Tensor& t);
/// `origin` names the source in error messages.
Tensor decode_tensor(std::string_view bytes, const std::string& origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ssp
