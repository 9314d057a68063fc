// Shared fixtures for the unit and acceptance binaries.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "histo/image.hpp"
#include "histo/stain.hpp"
#include "histo/util.hpp"

namespace testutil {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "histopipe_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline histo::Vec3 unit3(histo::Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

/// Renders an image whose OD is exactly stains * concentrations (then 8-bit
/// quantized). conc has 2 entries per pixel, row-major.
inline histo::RgbImage render_two_stain(const histo::StainMatrix& stains,
                                        const std::vector<double>& conc, int width, int height) {
  histo::OdImage od(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = 2 * (static_cast<std::size_t>(y) * width + x);
      double* o = od.at(x, y);
      for (int c = 0; c < 3; ++c)
        o[c] = conc[i] * stains.hematoxylin[c] + conc[i + 1] * stains.eosin[c];
    }
  }
  return histo::od_to_rgb(od);
}

struct Mixture {
  histo::RgbImage image;
  histo::StainMatrix stains;
  std::vector<double> conc;  // 2 per pixel
};

/// Random two-stain image with sizable pure-hematoxylin, pure-eosin, blank,
/// and mixed pixel populations. The perturbation keeps the red-channel
/// ordering rule unambiguous.
inline Mixture random_mixture(histo::Rng& rng, int width, int height,
                              double pure_frac = 0.15, double blank_frac = 0.10) {
  Mixture m;
  auto jitter = [&rng](histo::Vec3 base, double mag) {
    for (double& c : base) c = std::max(0.0, c + histo::uniform_real(rng, -mag, mag));
    return unit3(base);
  };
  m.stains.hematoxylin = jitter({0.65, 0.70, 0.29}, 0.05);
  m.stains.eosin = jitter({0.07, 0.99, 0.11}, 0.05);
  m.conc.resize(2 * static_cast<std::size_t>(width) * height);
  auto amp = [&rng] { return histo::uniform_real(rng, 0.5, 1.1); };
  for (std::size_t i = 0; i < m.conc.size(); i += 2) {
    const double u = histo::uniform01(rng);
    if (u < pure_frac) {
      m.conc[i] = amp();
    } else if (u < 2 * pure_frac) {
      m.conc[i + 1] = amp();
    } else if (u < 2 * pure_frac + blank_frac) {
      // leave (0, 0)
    } else {
      m.conc[i] = histo::uniform_real(rng, 0.1, 1.1);
      m.conc[i + 1] = histo::uniform_real(rng, 0.1, 1.1);
    }
  }
  m.image = render_two_stain(m.stains, m.conc, width, height);
  return m;
}

/// Largest per-column angular error against the true basis, degrees.
inline double stain_angle_error_deg(const histo::StainMatrix& estimated,
                                    const histo::StainMatrix& truth) {
  return std::max(histo::angle_between_deg(estimated.hematoxylin, truth.hematoxylin),
                  histo::angle_between_deg(estimated.eosin, truth.eosin));
}

}  // namespace testutil
