#ifndef HISTO_PATCH_HPP
#define HISTO_PATCH_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "histo/image.hpp"

namespace histo {

/// Four-class label. The index order doubles as clinical severity rank, so
/// argmax/vote ties resolve toward the higher index.
enum class ClassLabel : int { normal = 0, benign = 1, in_situ = 2, invasive = 3 };

inline constexpr int kNumClasses = 4;

std::string to_string(ClassLabel label);
ClassLabel class_label_from_index(int index);
ClassLabel class_label_from_string(const std::string& name);

/// Dihedral-group element id in 0..7: bits 0-1 are the quarter-turn count
/// (counterclockwise), bit 2 is a horizontal flip applied after the rotation.
using OrientationId = int;

inline constexpr int kNumOrientations = 8;

/// Composition: the transform of `second_then(o_outer, o_inner)` equals
/// applying o_inner first, then o_outer.
OrientationId compose_orientations(OrientationId outer, OrientationId inner);
OrientationId invert_orientation(OrientationId o);

/// A square tile cut from a source image. `orientation` tracks the dihedral
/// transform applied since extraction (0 = as extracted).
struct Patch {
  RgbImage image;
  int x = 0;
  int y = 0;
  std::optional<ClassLabel> label;
  OrientationId orientation = 0;

  int size() const { return image.width; }
  bool operator==(const Patch& other) const = default;
};

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Start positions 0, stride, ... up to dim - size; with clamp_edges an extra
/// start at exactly dim - size is appended when that offset is off-lattice.
std::vector<int> grid_starts(int dim, int size, int stride, bool clamp_edges);

/// Strided tiling in row-major origin order.
std::vector<Patch> grid_patches(const RgbImage& image, int size = 512, int stride = 256,
                                bool clamp_edges = true);

/// `count` patches with origins uniform over all valid positions.
std::vector<Patch> random_patches(const RgbImage& image, int count, std::uint64_t seed,
                                  int size = 512);

Patch extract_patch(const RgbImage& image, int x, int y, int size);

/// Stamps every patch with the slide's label (overwrites existing labels).
std::vector<Patch> inherit_label(std::vector<Patch> patches, ClassLabel slide_label);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Patch apply_orientation(const Patch& patch, OrientationId o);

/// Color-jitter magnitudes on the [0,1] intensity scale.
struct JitterParams {
  double brightness_delta = 5.0 / 255.0;
  double contrast_delta = 0.05;
  double saturation_delta = 0.05;
  double hue_delta = 0.02;
};

/// Brightness shift, contrast scale about the patch's mean luminance, then
/// saturation scale and hue rotation in HSV. Channels clamp to [0,255];
/// the four perturbations are drawn from `seed` in a fixed order.
Patch color_jitter(const Patch& patch, const JitterParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Patch manifest (CSV: slide,x,y,orientation,label; label -1 when absent)
// ---------------------------------------------------------------------------

struct PatchRecord {
  std::string slide;
  int x = 0;
  int y = 0;
  OrientationId orientation = 0;
  int label = -1;  // ClassLabel index, or -1 for unlabeled

  bool operator==(const PatchRecord& other) const = default;
};

void write_patch_manifest(const std::vector<PatchRecord>& records, const std::string& path);
std::vector<PatchRecord> read_patch_manifest(const std::string& path);

}  // namespace histo

#endif  // HISTO_PATCH_HPP
