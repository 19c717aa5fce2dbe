#include "tltrade/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include <fmt/format.h>

#include "tltrade/errors.hpp"

namespace tlt {
namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  return token;
}

std::size_t parse_header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = next_token(in);
  try {
    std::size_t used = 0;
    const unsigned long value = std::stoul(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw IngestError(fmt::format("{}: malformed netpbm header token '{}'", path.string(), token));
  }
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(fmt::format("cannot open image {}", path.string()));

  const std::string magic = next_token(in);
  std::size_t channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P3") channels = 3;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P6") channels = 3, binary = true;
  else throw IngestError(fmt::format("{}: unsupported image format '{}'", path.string(), magic));

  const std::size_t width = parse_header_number(in, path);
  const std::size_t height = parse_header_number(in, path);
  const std::size_t maxval = parse_header_number(in, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw IngestError(fmt::format("{}: invalid dimensions or maxval", path.string()));
  }

  Tensor image(Shape3{height, width, channels});
  const float top = static_cast<float>(maxval);
  if (binary) {
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(image.size() * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
      throw IngestError(fmt::format("{}: truncated pixel data", path.string()));
    }
    for (std::size_t i = 0; i < image.size(); ++i) {
      const unsigned value = bytes_per == 2 ? (raw[2 * i] << 8U) | raw[2 * i + 1] : raw[i];
      image.data[i] = static_cast<float>(std::min<std::size_t>(value, maxval)) / top;
    }
  } else {
    for (std::size_t i = 0; i < image.size(); ++i) {
      image.data[i] = static_cast<float>(std::min(parse_header_number(in, path), maxval)) / top;
    }
  }
  return image;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  const Shape3 s = image.shape3();
  if (image.rank() != 3 || (s.channels != 1 && s.channels != 3)) {
    throw ShapeError(fmt::format("{}: only 1 or 3 channel images can be written", path.string()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError(fmt::format("cannot write image {}", path.string()));
  out << (s.channels == 1 ? "P5" : "P6") << '\n' << s.width << ' ' << s.height << "\n255\n";
  std::vector<unsigned char> raw(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  const Shape3 s = image.shape3();
  if (image.rank() != 3 || height == 0 || width == 0) {
    throw ShapeError("resize_bilinear expects a rank-3 image and a positive target size");
  }
  if (s.height == height && s.width == width) return image;

  Tensor out(Shape3{height, width, s.channels});
  const double sy = static_cast<double>(s.height) / static_cast<double>(height);
  const double sx = static_cast<double>(s.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(s.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, s.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(s.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, s.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bottom = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

}  // namespace tlt
