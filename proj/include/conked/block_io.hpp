#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace conked {

// Raw float block: width x height x channels, row-major, channel-innermost.
struct FloatBlock {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;
};

// "CKDB" + u32 LE width, height, channels + f32 LE values.
void write_ckdb(const std::filesystem::path& path, const FloatBlock& block);
FloatBlock read_ckdb(const std::filesystem::path& path);

std::vector<unsigned char> encode_ckdb(const FloatBlock& block);
FloatBlock decode_ckdb(const std::vector<unsigned char>& bytes);

// Little-endian primitives shared with the checkpoint format.
void put_u32(std::vector<unsigned char>& out, std::uint32_t v);
void put_f32(std::vector<unsigned char>& out, float v);
std::uint32_t get_u32(const unsigned char* p);
float get_f32(const unsigned char* p);

}  // namespace conked
