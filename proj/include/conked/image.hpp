#pragma once

#include <filesystem>
#include <vector>

namespace conked {

// Interleaved (row-major, channel-innermost) float image, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  float& at(int x, int y, int c) { return data[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data[index(x, y, c)]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Bilinear sample at continuous pixel coordinates; taps outside the image
// contribute `outside`.
float sample_bilinear(const Image& img, double x, double y, int c, float outside = 0.0f);

// Netpbm: P6 for 3 channels, P5 for 1; 8-bit, value = round(255 v).
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

}  // namespace conked
