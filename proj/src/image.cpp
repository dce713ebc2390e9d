#include "conked/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "conked/error.hpp"
#include "conked/io_util.hpp"

namespace conked {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c),
      data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
  if (w < 0 || h < 0 || c <= 0) throw Error(Errc::invalid_argument, "invalid image shape");
}

float sample_bilinear(const Image& img, double x, double y, int c, float outside) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto tap = [&](int xi, int yi) -> double { return img.contains(xi, yi) ? img.at(xi, yi, c) : outside; };
  const double top = (1 - ax) * tap(x0, y0) + ax * tap(x0 + 1, y0);
  const double bottom = (1 - ax) * tap(x0, y0 + 1) + ax * tap(x0 + 1, y0 + 1);
  return static_cast<float>((1 - ay) * top + ay * bottom);
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw Error(Errc::invalid_argument, "PNM needs 1 or 3 channels");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (float v : img.data) {
    const double q = std::round(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0));
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  write_file_atomic(path, out);
}

Image read_pnm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto next_token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  const std::string magic = next_token();
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw Error(Errc::format_error, path.string() + ": not a binary PNM (P5/P6)");
  const auto w = static_cast<int>(parse_int(next_token()));
  const auto h = static_cast<int>(parse_int(next_token()));
  const auto maxval = parse_int(next_token());
  if (maxval != 255 || w <= 0 || h <= 0) throw Error(Errc::format_error, path.string() + ": unsupported PNM header");
  ++pos;  // single whitespace after maxval
  Image img(w, h, channels);
  if (bytes.size() < pos + img.data.size()) throw Error(Errc::format_error, path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

}  // namespace conked
