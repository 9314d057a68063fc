#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "histo/image.hpp"
#include "histo/util.hpp"

using namespace histo;

TEST_CASE("white maps to zero optical density") {
  RgbImage img(2, 1, 255);
  const OdImage od = rgb_to_od(img);
  for (double v : od.od) CHECK(v == 0.0);
}

TEST_CASE("one decade of absorbance is od 1") {
  RgbImage img(1, 1);
  img.set(0, 0, 26, 26, 26);
  const OdImage od = rgb_to_od(img, 260.0);
  for (int c = 0; c < 3; ++c) CHECK(od.at(0, 0)[c] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero channels clamp to 1 before the log") {
  RgbImage img(1, 1);
  img.set(0, 0, 0, 0, 0);
  const OdImage od = rgb_to_od(img);
  for (int c = 0; c < 3; ++c) CHECK(od.at(0, 0)[c] == doctest::Approx(2.40654).epsilon(1e-5));
}

TEST_CASE("od is finite and nonnegative for every 8-bit value") {
  RgbImage img(256, 1);
  for (int v = 0; v < 256; ++v)
    img.set(v, 0, static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v),
            static_cast<std::uint8_t>(v));
  const OdImage od = rgb_to_od(img);
  for (double v : od.od) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("od_to_rgb inverts the known points") {
  OdImage od(2, 1);
  od.at(0, 0)[0] = od.at(0, 0)[1] = od.at(0, 0)[2] = 0.0;
  od.at(1, 0)[0] = od.at(1, 0)[1] = od.at(1, 0)[2] = 1.0;
  const RgbImage img = od_to_rgb(od);
  for (int c = 0; c < 3; ++c) {
    CHECK(img.at(0, 0)[c] == 255);
    CHECK(img.at(1, 0)[c] == 26);  // round(255 * 10^-1)
  }
}

TEST_CASE("od round trip is exact when channels stay >= 1") {
  Rng rng(21);
  RgbImage img(37, 23);
  for (std::uint8_t& p : img.pixels) p = static_cast<std::uint8_t>(1 + bounded_u64(rng, 255));
  CHECK(od_to_rgb(rgb_to_od(img)) == img);
}

TEST_CASE("ppm files round trip byte for byte") {
  const auto dir = testutil::fresh_dir("image_ppm");
  Rng rng(4);
  RgbImage img(19, 7);
  for (std::uint8_t& p : img.pixels) p = static_cast<std::uint8_t>(bounded_u64(rng, 256));
  const std::string path = (dir / "img.ppm").string();
  write_ppm(img, path);
  CHECK(read_ppm(path) == img);

  const std::string bytes = testutil::slurp(path);
  CHECK(bytes.rfind("P6\n19 7\n255\n", 0) == 0);
  CHECK(bytes.size() == 12 + 3u * 19 * 7);  // 12-byte header, then the raster

  write_ppm(img, path);  // rewriting is deterministic
  CHECK(testutil::slurp(path) == bytes);
}

TEST_CASE("ppm reader rejects malformed files") {
  const auto dir = testutil::fresh_dir("image_ppm_bad");
  {
    std::ofstream out(dir / "bad_magic.ppm", std::ios::binary);
    out << "P5\n2 2\n255\n0000";
  }
  CHECK_THROWS_AS(read_ppm((dir / "bad_magic.ppm").string()), ParseError);
  {
    std::ofstream out(dir / "short.ppm", std::ios::binary);
    out << "P6\n4 4\n255\nabc";
  }
  CHECK_THROWS_AS(read_ppm((dir / "short.ppm").string()), ParseError);
  CHECK_THROWS(read_ppm((dir / "missing.ppm").string()));
}
