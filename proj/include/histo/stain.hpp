#ifndef HISTO_STAIN_HPP
#define HISTO_STAIN_HPP

#include <array>
#include <string>
#include <vector>

#include "histo/image.hpp"

namespace histo {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

enum class StainMethod { macenko, vahadane };

std::string to_string(StainMethod m);
StainMethod stain_method_from_string(const std::string& s);

/// Two-stain basis in optical-density space. Column 0 is hematoxylin,
/// column 1 eosin. Columns are unit L2 norm, nonnegative, and separated
/// by at least one degree (validate() enforces all three).
struct StainMatrix {
  Vec3 hematoxylin{};
  Vec3 eosin{};

  const Vec3& column(int i) const { return i == 0 ? hematoxylin : eosin; }
  Vec3& column(int i) { return i == 0 ? hematoxylin : eosin; }

  /// Angle between the two columns, degrees.
  double column_angle_deg() const;

  /// Throws DegenerateStainError / std::invalid_argument on invariant violations.
  void validate() const;

  bool operator==(const StainMatrix& other) const = default;
};

/// Angle between two direction vectors, degrees, in [0, 180].
double angle_between_deg(const Vec3& a, const Vec3& b);

/// Normalization target: stain basis plus the robust-max (99th percentile)
/// concentration per stain and the background intensity used for OD math.
struct StainProfile {
  StainMatrix stain_matrix;
  Vec2 conc_scale{1.0, 1.0};
  double background = 255.0;
  StainMethod method = StainMethod::macenko;

  bool operator==(const StainProfile& other) const = default;
};

// ---------------------------------------------------------------------------
// Optical-density conversions (log10, channel values clamped to >= 1 before
// the log so the result is always finite and nonnegative).
// ---------------------------------------------------------------------------

OdImage rgb_to_od(const RgbImage& image, double background = 255.0);
RgbImage od_to_rgb(const OdImage& od, double background = 255.0);

/// OD L2 norm per pixel; a pixel is "tissue" when this exceeds the threshold.
double od_norm(const double* od3);

// ---------------------------------------------------------------------------
// Stain-matrix estimation
// ---------------------------------------------------------------------------

/// Minimum tissue-pixel count required by both estimators.
inline constexpr int kMinTissuePixels = 100;

/// Macenko estimation: SVD plane of tissue OD pixels, percentile extreme
/// angles, columns orientated nonnegative and ordered by the red-channel rule
/// (hematoxylin = column with larger red OD).
StainMatrix estimate_stains_macenko(const RgbImage& image, double od_threshold = 0.15,
                                    double angle_percentile = 1.0);

struct SnmfOptions {
  double sparsity = 0.1;
  int max_outer_iters = 50;
  double tol = 1e-4;
  // Dictionary fitting uses at most this many tissue pixels, stride-sampled in
  // row-major order so the same image always selects the same subset.
  int max_fit_pixels = 20000;
  double od_threshold = 0.15;
  double angle_percentile = 1.0;  // only the Macenko path reads this
};

/// Vahadane estimation: sparse NMF, 0.5*||OD - W*H||_F^2 + sparsity*||H||_1,
/// alternating per-pixel nonnegative lasso (coordinate descent) with a
/// projected-gradient dictionary step. The best iterate is returned even when
/// the tolerance is not reached.
StainMatrix estimate_stains_vahadane(const RgbImage& image, double sparsity = 0.1,
                                     int max_outer_iters = 50, double tol = 1e-4,
                                     int max_fit_pixels = 20000);

/// Lower-level SNMF entry point operating on a prepared OD pixel list.
/// objective_trace holds the objective after every outer iteration and is
/// non-increasing by construction (each half-step keeps the better iterate).
struct SnmfResult {
  StainMatrix stains;
  std::vector<double> objective_trace;
};
SnmfResult snmf_factorize(const std::vector<Vec3>& od_pixels, double sparsity,
                          int max_outer_iters, double tol);

// ---------------------------------------------------------------------------
// Deconvolution and normalization
// ---------------------------------------------------------------------------

/// Per-pixel nonnegative least squares min ||od - W c||, c >= 0, coordinate
/// descent to a fixed point (max step below 1e-8 or 100 sweeps).
Vec2 nnls2(const Vec3& od, const StainMatrix& stains);

ConcentrationMap compute_concentrations(const RgbImage& image, const StainMatrix& stains);

/// Stain matrix plus per-stain 99th-percentile concentration over tissue pixels.
StainProfile fit_target_profile(const RgbImage& target, StainMethod method,
                                const SnmfOptions& opts = {});

/// Re-renders `source` in the target's stain basis: estimate source stains,
/// deconvolve, match the per-stain 99th percentile to the target's, rebuild.
RgbImage normalize(const RgbImage& source, StainMethod source_method,
                   const StainProfile& target, const SnmfOptions& opts = {});

// Plain-text profile persistence (versioned key-value format).
void save_stain_profile(const StainProfile& profile, const std::string& path);
StainProfile load_stain_profile(const std::string& path);

}  // namespace histo

#endif  // HISTO_STAIN_HPP
