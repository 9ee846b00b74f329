#include "stainr/ppm.hpp"

#include "stainr/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace stainr {

void write_ppm(const std::string& path, const Tensor<double>& image) {
  if (!image.defined() || image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("write_ppm: expected a [3,H,W] image, got " +
                     (image.defined() ? shape_str(image.shape()) : std::string("undefined")));
  const Index H = image.dim(1), W = image.dim(2), plane = H * W;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(3 * plane));
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data()[c * plane + i], 0.0, 1.0);
      bytes[static_cast<std::size_t>(3 * i + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "P6\n" << W << ' ' << H << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

namespace {

long read_header_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  for (;;) {
    while (ch != EOF && std::isspace(ch)) ch = in.get();
    if (ch != '#') break;
    while (ch != EOF && ch != '\n') ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw DataError("'" + path + "' has a malformed PPM header");
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > (1L << 24)) throw DataError("'" + path + "' has an implausible PPM dimension");
    ch = in.get();
  }
  // exactly one whitespace byte separates the header from the raster
  if (ch == EOF || !std::isspace(ch)) throw DataError("'" + path + "' has a malformed PPM header");
  return v;
}

}  // namespace

Tensor<double> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image '" + path + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw DataError("'" + path + "' is not a binary PPM (P6)");
  const long W = read_header_int(in, path);
  const long H = read_header_int(in, path);
  const long maxval = read_header_int(in, path);
  if (W < 1 || H < 1) throw DataError("'" + path + "' has an empty raster");
  if (maxval != 255) throw DataError("'" + path + "' uses maxval " + std::to_string(maxval) + "; only 255 is supported");
  const Index plane = H * W;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(3 * plane));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError("'" + path + "' is truncated");
  Tensor<double> img({3, H, W});
  for (Index i = 0; i < plane; ++i)
    for (Index c = 0; c < 3; ++c) img.data()[c * plane + i] = bytes[static_cast<std::size_t>(3 * i + c)] / 255.0;
  return img;
}

}  // namespace stainr
