#include "histo/image.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

#include "histo/util.hpp"

namespace histo {

RgbImage::RgbImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("RgbImage: width and height must be >= 1");
  pixels.assign(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

OdImage::OdImage(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("OdImage: width and height must be >= 1");
  od.assign(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
}

ConcentrationMap::ConcentrationMap(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("ConcentrationMap: width and height must be >= 1");
  conc.assign(2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
}

namespace {

// Reads the next whitespace-delimited PPM header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
  return tok;
}

}  // namespace

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path);

  if (next_token(in) != "P6") throw ParseError("not a binary PPM (P6): " + path);
  const long long w = parse_int(next_token(in));
  const long long h = parse_int(next_token(in));
  const long long maxval = parse_int(next_token(in));
  if (w < 1 || h < 1) throw ParseError("bad PPM dimensions in " + path);
  if (maxval != 255) throw ParseError("unsupported PPM maxval (want 255) in " + path);

  RgbImage img(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw ParseError("truncated PPM payload in " + path);
  return img;
}

void write_ppm(const RgbImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace histo
