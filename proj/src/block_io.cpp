#include "conked/block_io.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

std::vector<unsigned char> encode_ckdb(const FloatBlock& block) {
  const std::size_t n = static_cast<std::size_t>(block.width) * block.height * block.channels;
  if (block.values.size() != n) throw Error(Errc::shape_mismatch, "block value count does not match its shape");
  std::vector<unsigned char> out{'C', 'K', 'D', 'B'};
  out.reserve(16 + 4 * n);
  put_u32(out, block.width);
  put_u32(out, block.height);
  put_u32(out, block.channels);
  for (float v : block.values) put_f32(out, v);
  return out;
}

FloatBlock decode_ckdb(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CKDB", 4) != 0) {
    throw Error(Errc::format_error, "missing CKDB magic");
  }
  FloatBlock b;
  b.width = get_u32(bytes.data() + 4);
  b.height = get_u32(bytes.data() + 8);
  b.channels = get_u32(bytes.data() + 12);
  const std::size_t n = static_cast<std::size_t>(b.width) * b.height * b.channels;
  if (bytes.size() != 16 + 4 * n) throw Error(Errc::format_error, "CKDB payload size does not match header");
  b.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.values[i] = get_f32(bytes.data() + 16 + 4 * i);
  return b;
}

void write_ckdb(const std::filesystem::path& path, const FloatBlock& block) {
  const auto bytes = encode_ckdb(block);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

FloatBlock read_ckdb(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return decode_ckdb(std::vector<unsigned char>(s.begin(), s.end()));
}

}  // namespace conked
