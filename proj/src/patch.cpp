#include "histo/patch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "histo/util.hpp"

namespace histo {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

std::string to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::normal: return "normal";
    case ClassLabel::benign: return "benign";
    case ClassLabel::in_situ: return "insitu";
    case ClassLabel::invasive: return "invasive";
  }
  throw std::invalid_argument("bad ClassLabel");
}

ClassLabel class_label_from_index(int index) {
  if (index < 0 || index >= kNumClasses)
    throw std::invalid_argument("class index out of range: " + std::to_string(index));
  return static_cast<ClassLabel>(index);
}

ClassLabel class_label_from_string(const std::string& name) {
  if (name == "normal") return ClassLabel::normal;
  if (name == "benign") return ClassLabel::benign;
  if (name == "insitu" || name == "in_situ") return ClassLabel::in_situ;
  if (name == "invasive") return ClassLabel::invasive;
  throw std::invalid_argument("unknown class label: " + name);
}

// ---------------------------------------------------------------------------
// Orientations
// ---------------------------------------------------------------------------

namespace {

void check_orientation(OrientationId o) {
  if (o < 0 || o >= kNumOrientations)
    throw std::invalid_argument("orientation id out of range: " + std::to_string(o));
}

// Source coordinates for output pixel (r, c) under "rotate by rot quarter
// turns CCW, then flip horizontally if flip".
inline void source_coord(int rot, bool flip, int r, int c, int s, int& sr, int& sc) {
  if (flip) c = s - 1 - c;  // undo the flip to land in the rotated frame
  switch (rot) {
    case 0: sr = r; sc = c; break;
    case 1: sr = c; sc = s - 1 - r; break;
    case 2: sr = s - 1 - r; sc = s - 1 - c; break;
    default: sr = s - 1 - c; sc = r; break;
  }
}

}  // namespace

OrientationId compose_orientations(OrientationId outer, OrientationId inner) {
  check_orientation(outer);
  check_orientation(inner);
  const int flip_outer = outer >> 2, rot_outer = outer & 3;
  const int flip_inner = inner >> 2, rot_inner = inner & 3;
  const int flip = flip_outer ^ flip_inner;
  // F R^b = R^{-b} F lets the inner flip commute out.
  const int rot = flip_inner ? (rot_inner - rot_outer) & 3 : (rot_outer + rot_inner) & 3;
  return (flip << 2) | rot;
}

OrientationId invert_orientation(OrientationId o) {
  check_orientation(o);
  if (o >> 2) return o;  // reflections are involutions
  return (4 - (o & 3)) & 3;
}

Patch apply_orientation(const Patch& patch, OrientationId o) {
  check_orientation(o);
  if (patch.image.width != patch.image.height)
    throw std::invalid_argument("apply_orientation requires a square patch");
  const int s = patch.image.width;
  Patch out = patch;
  out.orientation = compose_orientations(o, patch.orientation);
  if (o == 0) return out;

  const int rot = o & 3;
  const bool flip = (o >> 2) != 0;
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      int sr, sc;
      source_coord(rot, flip, r, c, s, sr, sc);
      const std::uint8_t* src = patch.image.at(sc, sr);
      out.image.set(c, r, src[0], src[1], src[2]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

std::vector<int> grid_starts(int dim, int size, int stride, bool clamp_edges) {
  if (stride < 1) throw std::invalid_argument("grid stride must be >= 1");
  if (size > dim) throw std::invalid_argument("patch size exceeds image dimension");
  std::vector<int> starts;
  for (int s = 0; s + size <= dim; s += stride) starts.push_back(s);
  const int last = dim - size;
  if (clamp_edges && starts.back() != last) starts.push_back(last);
  return starts;
}

Patch extract_patch(const RgbImage& image, int x, int y, int size) {
  if (x < 0 || y < 0 || x + size > image.width || y + size > image.height)
    throw std::invalid_argument("patch does not fit inside the image");
  Patch p;
  p.image = RgbImage(size, size);
  p.x = x;
  p.y = y;
  for (int r = 0; r < size; ++r) {
    const std::uint8_t* src = image.at(x, y + r);
    std::uint8_t* dst = p.image.at(0, r);
    std::copy(src, src + 3 * static_cast<std::size_t>(size), dst);
  }
  return p;
}

std::vector<Patch> grid_patches(const RgbImage& image, int size, int stride, bool clamp_edges) {
  const std::vector<int> xs = grid_starts(image.width, size, stride, clamp_edges);
  const std::vector<int> ys = grid_starts(image.height, size, stride, clamp_edges);
  std::vector<Patch> patches;
  patches.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) patches.push_back(extract_patch(image, x, y, size));
  return patches;
}

std::vector<Patch> random_patches(const RgbImage& image, int count, std::uint64_t seed, int size) {
  if (count < 0) throw std::invalid_argument("random_patches: count must be >= 0");
  if (size > image.width || size > image.height)
    throw std::invalid_argument("patch size exceeds image dimension");
  Rng rng(seed);
  std::vector<Patch> patches;
  patches.reserve(static_cast<std::size_t>(count));
  const std::uint64_t x_range = static_cast<std::uint64_t>(image.width - size) + 1;
  const std::uint64_t y_range = static_cast<std::uint64_t>(image.height - size) + 1;
  for (int i = 0; i < count; ++i) {
    const int x = static_cast<int>(bounded_u64(rng, x_range));
    const int y = static_cast<int>(bounded_u64(rng, y_range));
    patches.push_back(extract_patch(image, x, y, size));
  }
  return patches;
}

std::vector<Patch> inherit_label(std::vector<Patch> patches, ClassLabel slide_label) {
  for (Patch& p : patches) p.label = slide_label;
  return patches;
}

// ---------------------------------------------------------------------------
// Color jitter
// ---------------------------------------------------------------------------

namespace {

struct Hsv {
  double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, 0.0, mx};
  if (mx > 0.0) out.s = d / mx;
  if (d > 0.0) {
    double h;
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = (b - r) / d + 2.0;
    else
      h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
    out.h = h - std::floor(h);
  }
  return out;
}

void hsv_to_rgb(const Hsv& in, double& r, double& g, double& b) {
  const double hh = (in.h - std::floor(in.h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = in.v * (1.0 - in.s);
  const double q = in.v * (1.0 - in.s * f);
  const double t = in.v * (1.0 - in.s * (1.0 - f));
  switch (i) {
    case 0: r = in.v; g = t; b = p; break;
    case 1: r = q; g = in.v; b = p; break;
    case 2: r = p; g = in.v; b = t; break;
    case 3: r = p; g = q; b = in.v; break;
    case 4: r = t; g = p; b = in.v; break;
    default: r = in.v; g = p; b = q; break;
  }
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline double luminance(const double* px) {
  return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
}

}  // namespace

Patch color_jitter(const Patch& patch, const JitterParams& params, std::uint64_t seed) {
  Rng rng(seed);
  // Fixed draw order keeps the stream stable across parameter choices.
  const double b = uniform_real(rng, -params.brightness_delta, params.brightness_delta);
  const double c = uniform_real(rng, 1.0 - params.contrast_delta, 1.0 + params.contrast_delta);
  const double s = uniform_real(rng, 1.0 - params.saturation_delta, 1.0 + params.saturation_delta);
  const double h = uniform_real(rng, -params.hue_delta, params.hue_delta);

  const std::size_t n = patch.image.pixels.size();
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = patch.image.pixels[i] / 255.0;

  if (b != 0.0)
    for (double& v : vals) v += b;

  if (c != 1.0) {
    double mean_luma = 0.0;
    for (std::size_t i = 0; i < n; i += 3) mean_luma += luminance(vals.data() + i);
    mean_luma /= static_cast<double>(n / 3);
    for (double& v : vals) v = mean_luma + c * (v - mean_luma);
  }

  if (s != 1.0 || h != 0.0) {
    for (std::size_t i = 0; i < n; i += 3) {
      Hsv hsv = rgb_to_hsv(clamp01(vals[i]), clamp01(vals[i + 1]), clamp01(vals[i + 2]));
      hsv.s = clamp01(hsv.s * s);
      hsv.h += h;
      hsv_to_rgb(hsv, vals[i], vals[i + 1], vals[i + 2]);
    }
  }

  Patch out = patch;
  for (std::size_t i = 0; i < n; ++i)
    out.image.pixels[i] = static_cast<std::uint8_t>(std::round(clamp01(vals[i]) * 255.0));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

static const char* kManifestHeader = "slide,x,y,orientation,label";

void write_patch_manifest(const std::vector<PatchRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write patch manifest: " + path);
  out << kManifestHeader << "\n";
  for (const PatchRecord& r : records) {
    if (r.slide.find(',') != std::string::npos)
      throw std::invalid_argument("slide id may not contain ',': " + r.slide);
    out << r.slide << "," << r.x << "," << r.y << "," << r.orientation << "," << r.label << "\n";
  }
}

std::vector<PatchRecord> read_patch_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open patch manifest: " + path);
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line) || trim(line) != kManifestHeader)
    throw ParseError("missing patch manifest header '" + std::string(kManifestHeader) + "'", 1);
  ++line_no;

  std::vector<PatchRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 5) throw ParseError("expected 5 fields in patch manifest row", line_no);
    try {
      PatchRecord r;
      r.slide = f[0];
      r.x = static_cast<int>(parse_int(f[1]));
      r.y = static_cast<int>(parse_int(f[2]));
      r.orientation = static_cast<int>(parse_int(f[3]));
      r.label = static_cast<int>(parse_int(f[4]));
      check_orientation(r.orientation);
      if (r.label < -1 || r.label >= kNumClasses)
        throw std::invalid_argument("label index out of range");
      records.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return records;
}

}  // namespace histo
