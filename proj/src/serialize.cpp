// SPDX-License-Identifier: Apache-2.0
#include "ssp/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ssp/errors.hpp"

namespace ssp {

namespace {

static_assert(sizeof(double) == 8);

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::string out(kTensorMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + 8 * t.numel());
  for (double v : t.data()) put_le<double>(out, v);
  return out;
}

Tensor decode_tensor(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 12 || bytes.substr(0, 8) != kTensorMagic) {
    throw FormatError(origin + ": bad magic, not an SSPTENS1 tensor");
  }
  const auto rank = get_le<std::uint32_t>(bytes, 8);
  if (rank == 0 || rank > 16) throw FormatError(origin + ": implausible rank " + std::to_string(rank));
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw FormatError(origin + ": truncated shape header");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_le<std::uint32_t>(bytes, 12 + 4 * i);
    if (shape[i] == 0) throw FormatError(origin + ": zero extent in shape");
    count *= shape[i];
  }
  if (bytes.size() != header + 8 * count) {
    throw FormatError(origin + ": payload size " + std::to_string(bytes.size() - header) + " does not match shape " +
                      to_string(shape));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = get_le<double>(bytes, header + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

}  // namespace ssp
