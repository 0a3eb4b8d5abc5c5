#include "sidkit/image_io.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "sidkit/schema.hpp"  // sidkit::Error

namespace sidkit {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  in >> tok;
  return tok;
}

int to_u8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<int>(std::lround(c * 255.0));
}

}  // namespace

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image: " + path);
  const std::string magic = next_token(in);
  if (magic != "P6" && magic != "P5")
    throw Error("unsupported image format in " + path + " (need binary PPM/PGM)");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (w <= 0 || h <= 0) throw Error("bad image dimensions in " + path);
  if (maxval != 255) throw Error("only 8-bit images supported: " + path);
  in.get();  // single whitespace after header

  const int channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw Error("truncated image data in " + path);

  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const size_t src = (static_cast<size_t>(y) * w + x) * channels +
                           (channels == 3 ? static_cast<size_t>(c) : 0u);
        img.at(c, y, x) = raw[src] / 255.0;
      }
  return img;
}

void write_ppm(const std::string& path, const Tensor& chw) {
  if (chw.ndim() != 3 || chw.dim(0) != 3) throw Error("write_ppm expects a [3,H,W] tensor");
  const int h = chw.dim(1), w = chw.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        raw[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)] =
            static_cast<unsigned char>(to_u8(chw.at(c, y, x)));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::string& path, const Tensor& hw) {
  if (hw.ndim() != 2) throw Error("write_pgm expects a [H,W] tensor");
  const int h = hw.dim(0), w = hw.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image: " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      raw[static_cast<size_t>(y) * w + x] = static_cast<unsigned char>(to_u8(hw.at(y, x)));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace sidkit
