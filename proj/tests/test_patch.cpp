#include <algorithm>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "histo/patch.hpp"
#include "histo/util.hpp"

using namespace histo;

namespace {

RgbImage numbered_image(int w, int h, std::uint64_t seed = 17) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (std::uint8_t& p : img.pixels) p = static_cast<std::uint8_t>(bounded_u64(rng, 256));
  return img;
}

}  // namespace

TEST_CASE("class label names round trip") {
  for (int i = 0; i < kNumClasses; ++i) {
    const ClassLabel label = class_label_from_index(i);
    CHECK(class_label_from_string(to_string(label)) == label);
  }
  CHECK(class_label_from_string("in_situ") == ClassLabel::in_situ);
  CHECK_THROWS(class_label_from_string("malignant"));
  CHECK_THROWS(class_label_from_index(4));
}

TEST_CASE("a 2040x1536 slide tiles into 35 training patches") {
  const RgbImage img(2040, 1536, 200);
  CHECK(grid_starts(2040, 512, 256, true).size() == 7);
  CHECK(grid_starts(1536, 512, 256, true).size() == 5);
  const std::vector<Patch> patches = grid_patches(img, 512, 256, true);
  CHECK(patches.size() == 35);
  for (const Patch& p : patches) {
    CHECK(p.size() == 512);
    CHECK(p.x + 512 <= 2040);
    CHECK(p.y + 512 <= 1536);
    CHECK(!p.label.has_value());
  }
}

TEST_CASE("grid corner cases") {
  const std::vector<Patch> one = grid_patches(RgbImage(512, 512, 10), 512, 256, true);
  REQUIRE(one.size() == 1);
  CHECK(one[0].x == 0);
  CHECK(one[0].y == 0);

  const std::vector<Patch> three = grid_patches(RgbImage(1024, 512, 10), 512, 256, true);
  REQUIRE(three.size() == 3);
  CHECK(three[0].x == 0);
  CHECK(three[1].x == 256);
  CHECK(three[2].x == 512);

  // Without edge clamping the off-lattice tail start disappears.
  CHECK(grid_starts(2040, 512, 512, true) == std::vector<int>{0, 512, 1024, 1528});
  CHECK(grid_starts(2040, 512, 512, false) == std::vector<int>{0, 512, 1024});
  CHECK_THROWS_AS(grid_patches(RgbImage(100, 100, 10), 512, 256, true), std::invalid_argument);
}

TEST_CASE("extract_patch copies the right window") {
  const RgbImage img = numbered_image(40, 30);
  const Patch p = extract_patch(img, 5, 7, 16);
  CHECK(p.x == 5);
  CHECK(p.y == 7);
  CHECK(p.size() == 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) CHECK(p.image.at(x, y)[c] == img.at(5 + x, 7 + y)[c]);
  CHECK_THROWS_AS(extract_patch(img, 30, 0, 16), std::invalid_argument);
}

TEST_CASE("random patches complete the 500-per-slide recipe") {
  const RgbImage img(2040, 1536, 128);
  const std::vector<Patch> grid = grid_patches(img);
  const std::vector<Patch> extra = random_patches(img, 465, 99);
  CHECK(extra.size() == 465);
  CHECK(grid.size() + extra.size() == 500);
  for (const Patch& p : extra) {
    CHECK(p.x >= 0);
    CHECK(p.y >= 0);
    CHECK(p.x + 512 <= 2040);
    CHECK(p.y + 512 <= 1536);
  }
  CHECK(random_patches(img, 0, 99).empty());

  const std::vector<Patch> again = random_patches(img, 465, 99);
  for (std::size_t i = 0; i < extra.size(); ++i) {
    CHECK(extra[i].x == again[i].x);
    CHECK(extra[i].y == again[i].y);
  }
  const std::vector<Patch> other = random_patches(img, 465, 100);
  bool any_moved = false;
  for (std::size_t i = 0; i < extra.size(); ++i)
    any_moved = any_moved || extra[i].x != other[i].x || extra[i].y != other[i].y;
  CHECK(any_moved);
}

TEST_CASE("label inheritance stamps every patch") {
  const RgbImage img(1024, 1024, 90);
  std::vector<Patch> patches = grid_patches(img, 512, 256, true);
  patches[0].label = ClassLabel::normal;  // pre-existing label gets overwritten
  patches = inherit_label(std::move(patches), ClassLabel::invasive);
  for (const Patch& p : patches) {
    REQUIRE(p.label.has_value());
    CHECK(*p.label == ClassLabel::invasive);
  }
  CHECK(inherit_label({}, ClassLabel::benign).empty());
}

TEST_CASE("the 8 dihedral orientations are distinct and compose") {
  Patch base = extract_patch(numbered_image(12, 12), 2, 2, 8);
  base.label = ClassLabel::benign;

  const Patch same = apply_orientation(base, 0);
  CHECK(same.image == base.image);
  CHECK(same.orientation == 0);

  std::vector<Patch> oriented;
  for (int o = 0; o < kNumOrientations; ++o) {
    oriented.push_back(apply_orientation(base, o));
    CHECK(oriented.back().orientation == o);
    CHECK(oriented.back().x == base.x);
    CHECK(oriented.back().label == base.label);
  }
  for (int a = 0; a < kNumOrientations; ++a)
    for (int b = a + 1; b < kNumOrientations; ++b)
      CHECK(oriented[a].image != oriented[b].image);

  const Patch full_turn = apply_orientation(apply_orientation(base, 2), 2);
  CHECK(full_turn.image == base.image);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int inner = static_cast<int>(bounded_u64(rng, 8));
    const int outer = static_cast<int>(bounded_u64(rng, 8));
    const Patch two_step = apply_orientation(apply_orientation(base, inner), outer);
    const Patch one_step = apply_orientation(base, compose_orientations(outer, inner));
    CHECK(two_step.image == one_step.image);
    const int inv = invert_orientation(inner);
    CHECK(apply_orientation(apply_orientation(base, inner), inv).image == base.image);
  }
}

TEST_CASE("zero jitter is the identity") {
  const Patch base = extract_patch(numbered_image(20, 20), 0, 0, 16);
  const Patch out = color_jitter(base, JitterParams{0.0, 0.0, 0.0, 0.0}, 5);
  CHECK(out.image == base.image);
}

TEST_CASE("brightness-only jitter shifts all channels equally before clamping") {
  RgbImage img(16, 16);
  Rng rng(8);
  for (std::uint8_t& p : img.pixels)
    p = static_cast<std::uint8_t>(60 + bounded_u64(rng, 100));  // headroom, no clamping
  const Patch base = extract_patch(img, 0, 0, 16);
  const Patch out = color_jitter(base, JitterParams{20.0 / 255.0, 0.0, 0.0, 0.0}, 77);
  const int shift = static_cast<int>(out.image.pixels[0]) - static_cast<int>(base.image.pixels[0]);
  CHECK(std::abs(shift) <= 20);
  for (std::size_t i = 0; i < base.image.pixels.size(); ++i)
    CHECK(static_cast<int>(out.image.pixels[i]) ==
          static_cast<int>(base.image.pixels[i]) + shift);
}

TEST_CASE("heavy jitter stays within 8-bit range and is deterministic") {
  const Patch base = extract_patch(numbered_image(16, 16), 0, 0, 16);
  const JitterParams heavy{0.5, 0.5, 0.5, 0.25};
  const Patch a = color_jitter(base, heavy, 123);
  const Patch b = color_jitter(base, heavy, 123);
  CHECK(a.image == b.image);
  const Patch c = color_jitter(base, heavy, 124);
  CHECK(a.image != c.image);
}

TEST_CASE("patch manifests round trip") {
  const auto dir = testutil::fresh_dir("patch_manifest");
  const std::vector<PatchRecord> records{
      {"slide_a", 0, 0, 0, 2},
      {"slide_a", 256, 0, 5, 2},
      {"slide_b", 12, 34, 7, -1},
  };
  const std::string path = (dir / "patches.csv").string();
  write_patch_manifest(records, path);
  CHECK(read_patch_manifest(path) == records);

  std::ofstream bad(dir / "bad.csv");
  bad << "slide,x,y,orientation,label\noops,1,2\n";
  bad.close();
  CHECK_THROWS_AS(read_patch_manifest((dir / "bad.csv").string()), ParseError);
}
