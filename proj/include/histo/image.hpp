#ifndef HISTO_IMAGE_HPP
#define HISTO_IMAGE_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace histo {

/// 8-bit RGB raster, row-major, three bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size = 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255);

  std::size_t index(int x, int y) const {
    return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x);
  }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + index(x, y); }
  std::uint8_t* at(int x, int y) { return pixels.data() + index(x, y); }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool operator==(const RgbImage& other) const = default;
};

/// Per-pixel optical densities (Beer-Lambert), three components per pixel.
struct OdImage {
  int width = 0;
  int height = 0;
  std::vector<double> od;  // size = 3 * width * height

  OdImage() = default;
  OdImage(int w, int h);

  std::size_t index(int x, int y) const {
    return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x);
  }
  const double* at(int x, int y) const { return od.data() + index(x, y); }
  double* at(int x, int y) { return od.data() + index(x, y); }
};

/// Per-pixel two-stain concentrations: [0] hematoxylin, [1] eosin.
struct ConcentrationMap {
  int width = 0;
  int height = 0;
  std::vector<double> conc;  // size = 2 * width * height

  ConcentrationMap() = default;
  ConcentrationMap(int w, int h);

  std::size_t index(int x, int y) const {
    return 2 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x);
  }
  const double* at(int x, int y) const { return conc.data() + index(x, y); }
  double* at(int x, int y) { return conc.data() + index(x, y); }
};

// Binary PPM (P6, maxval 255). The project's raster format: lossless and
// byte-stable, so fixture generation and normalization round trips are exact.
RgbImage read_ppm(const std::string& path);
void write_ppm(const RgbImage& image, const std::string& path);

}  // namespace histo

#endif  // HISTO_IMAGE_HPP
