#include "histo/stain.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "histo/util.hpp"

namespace histo {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinColumnAngleDeg = 1.0;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

Vec3 normalized3(const Vec3& a) {
  const double n = norm3(a);
  if (n <= 0.0) throw DegenerateStainError("stain vector has zero norm");
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Orients a direction so its component sum is nonnegative, clamps residual
// negative entries to zero, and renormalizes.
Vec3 to_stain_column(Vec3 v) {
  if (v[0] + v[1] + v[2] < 0.0) {
    v = {-v[0], -v[1], -v[2]};
  }
  for (double& c : v) c = std::max(c, 0.0);
  return normalized3(v);
}

// Hematoxylin absorbs red the most: the column with the larger red-channel OD
// goes first.
StainMatrix order_by_red_rule(const Vec3& a, const Vec3& b) {
  StainMatrix m;
  if (a[0] >= b[0]) {
    m.hematoxylin = a;
    m.eosin = b;
  } else {
    m.hematoxylin = b;
    m.eosin = a;
  }
  return m;
}

std::vector<Vec3> collect_tissue_pixels(const OdImage& od, double od_threshold) {
  std::vector<Vec3> tissue;
  const std::size_t n = static_cast<std::size_t>(od.width) * static_cast<std::size_t>(od.height);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = od.od.data() + 3 * i;
    if (od_norm(p) > od_threshold) tissue.push_back({p[0], p[1], p[2]});
  }
  return tissue;
}

void require_tissue(std::size_t count) {
  if (count < static_cast<std::size_t>(kMinTissuePixels))
    throw NoTissueError("fewer than " + std::to_string(kMinTissuePixels) +
                        " tissue pixels (" + std::to_string(count) + " found)");
}

// Row-major stride subsample so the dictionary fit stays bounded and
// deterministic on large images.
std::vector<Vec3> cap_pixels(std::vector<Vec3> pixels, int max_count) {
  if (max_count <= 0 || pixels.size() <= static_cast<std::size_t>(max_count)) return pixels;
  const std::size_t stride = (pixels.size() + max_count - 1) / max_count;
  std::vector<Vec3> sampled;
  sampled.reserve(pixels.size() / stride + 1);
  for (std::size_t i = 0; i < pixels.size(); i += stride) sampled.push_back(pixels[i]);
  return sampled;
}

// --- nonnegative lasso / NNLS on two coordinates ---------------------------

struct Gram2 {
  double q00, q01, q11;
};

Gram2 gram_of(const StainMatrix& w) {
  return {dot3(w.hematoxylin, w.hematoxylin), dot3(w.hematoxylin, w.eosin),
          dot3(w.eosin, w.eosin)};
}

// Coordinate descent for min 0.5*||od - W h||^2 + lambda*(h0+h1), h >= 0.
// qv = W^T od. Updates h in place; returns when the largest coordinate step
// drops below tol or max_sweeps is reached.
void lasso_cd2(const Gram2& g, double q0, double q1, double lambda, double tol, int max_sweeps,
               double& h0, double& h1) {
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double new0 = std::max(0.0, h0 + (q0 - (g.q00 * h0 + g.q01 * h1) - lambda) / g.q00);
    const double d0 = new0 - h0;
    h0 = new0;
    const double new1 = std::max(0.0, h1 + (q1 - (g.q01 * h0 + g.q11 * h1) - lambda) / g.q11);
    const double d1 = new1 - h1;
    h1 = new1;
    if (std::max(std::abs(d0), std::abs(d1)) < tol) break;
  }
}

// --- SNMF internals ---------------------------------------------------------

struct Snmf {
  // 3x2 dictionary as two columns.
  Vec3 w0, w1;

  double smooth_objective(const std::vector<Vec3>& od, const std::vector<Vec2>& h) const {
    double f = 0.0;
    for (std::size_t i = 0; i < od.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const double r = od[i][c] - w0[c] * h[i][0] - w1[c] * h[i][1];
        f += r * r;
      }
    }
    return 0.5 * f;
  }
};

// Reference H&E optical-density basis (Ruifrok & Johnston); deterministic
// starting point for the alternating minimization.
StainMatrix reference_he_matrix() {
  StainMatrix m;
  m.hematoxylin = normalized3({0.65, 0.70, 0.29});
  m.eosin = normalized3({0.07, 0.99, 0.11});
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// StainMatrix
// ---------------------------------------------------------------------------

double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double c = dot3(a, b) / (norm3(a) * norm3(b));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / kPi;
}

double StainMatrix::column_angle_deg() const { return angle_between_deg(hematoxylin, eosin); }

void StainMatrix::validate() const {
  for (int i = 0; i < 2; ++i) {
    const Vec3& c = column(i);
    for (double v : c) {
      if (!std::isfinite(v) || v < 0.0)
        throw DegenerateStainError("stain matrix entries must be finite and nonnegative");
    }
    if (std::abs(norm3(c) - 1.0) > 1e-9)
      throw DegenerateStainError("stain matrix columns must have unit L2 norm");
  }
  if (column_angle_deg() < kMinColumnAngleDeg)
    throw DegenerateStainError("stain columns separated by less than 1 degree");
}

std::string to_string(StainMethod m) {
  return m == StainMethod::macenko ? "macenko" : "vahadane";
}

StainMethod stain_method_from_string(const std::string& s) {
  if (s == "macenko") return StainMethod::macenko;
  if (s == "vahadane") return StainMethod::vahadane;
  throw std::invalid_argument("unknown stain method: " + s);
}

// ---------------------------------------------------------------------------
// OD conversions
// ---------------------------------------------------------------------------

OdImage rgb_to_od(const RgbImage& image, double background) {
  if (background <= 0.0) throw std::invalid_argument("rgb_to_od: background must be > 0");
  OdImage out(image.width, image.height);
  const std::size_t n = image.pixels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double intensity = std::max<double>(image.pixels[i], 1.0);
    out.od[i] = -std::log10(intensity / background);
  }
  return out;
}

RgbImage od_to_rgb(const OdImage& od, double background) {
  RgbImage out(od.width, od.height);
  const std::size_t n = od.od.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double intensity = std::round(background * std::pow(10.0, -od.od[i]));
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(intensity, 0.0, 255.0));
  }
  return out;
}

double od_norm(const double* od3) {
  return std::sqrt(od3[0] * od3[0] + od3[1] * od3[1] + od3[2] * od3[2]);
}

// ---------------------------------------------------------------------------
// Macenko estimation
// ---------------------------------------------------------------------------

StainMatrix estimate_stains_macenko(const RgbImage& image, double od_threshold,
                                    double angle_percentile) {
  const OdImage od = rgb_to_od(image);
  const std::vector<Vec3> tissue = collect_tissue_pixels(od, od_threshold);
  require_tissue(tissue.size());

  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  for (const Vec3& p : tissue) {
    const Eigen::Vector3d v(p[0], p[1], p[2]);
    gram += v * v.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(gram);
  if (es.info() != Eigen::Success)
    throw DegenerateStainError("eigendecomposition of OD covariance failed");
  // Eigenvalues ascend: columns 2 and 1 span the leading plane.
  Eigen::Vector3d v1 = es.eigenvectors().col(2);
  Eigen::Vector3d v2 = es.eigenvectors().col(1);

  // Point both basis vectors into the data so angles form one contiguous fan.
  double s1 = 0.0, s2 = 0.0;
  for (const Vec3& p : tissue) {
    const Eigen::Vector3d v(p[0], p[1], p[2]);
    s1 += v1.dot(v);
    s2 += v2.dot(v);
  }
  if (s1 < 0.0) v1 = -v1;
  if (s2 < 0.0) v2 = -v2;

  std::vector<double> angles(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    const Eigen::Vector3d v(tissue[i][0], tissue[i][1], tissue[i][2]);
    angles[i] = std::atan2(v2.dot(v), v1.dot(v));
  }
  const double phi_lo = percentile(angles, angle_percentile);
  const double phi_hi = percentile(angles, 100.0 - angle_percentile);

  const auto direction = [&](double phi) -> Vec3 {
    const Eigen::Vector3d u = std::cos(phi) * v1 + std::sin(phi) * v2;
    return {u.x(), u.y(), u.z()};
  };
  const Vec3 dir_lo = direction(phi_lo);
  const Vec3 dir_hi = direction(phi_hi);
  if (angle_between_deg(dir_lo, dir_hi) < kMinColumnAngleDeg)
    throw DegenerateStainError("extreme stain directions within 1 degree of each other");

  StainMatrix result = order_by_red_rule(to_stain_column(dir_lo), to_stain_column(dir_hi));
  result.validate();
  return result;
}

// ---------------------------------------------------------------------------
// Vahadane estimation (sparse NMF)
// ---------------------------------------------------------------------------

SnmfResult snmf_factorize(const std::vector<Vec3>& od_pixels, double sparsity,
                          int max_outer_iters, double tol) {
  if (od_pixels.empty()) throw std::invalid_argument("snmf_factorize: no pixels");
  const std::size_t n = od_pixels.size();

  Snmf state;
  {
    const StainMatrix init = reference_he_matrix();
    state.w0 = init.hematoxylin;
    state.w1 = init.eosin;
  }
  std::vector<Vec2> h(n, Vec2{0.0, 0.0});
  double l1_h = 0.0;

  double objective = state.smooth_objective(od_pixels, h);  // h = 0, no L1 term yet
  SnmfResult result;
  result.objective_trace.reserve(static_cast<std::size_t>(std::max(max_outer_iters, 0)));

  for (int outer = 0; outer < max_outer_iters; ++outer) {
    const double prev_objective = objective;

    // H-step: exact per-pixel nonnegative lasso, warm-started.
    {
      StainMatrix w{state.w0, state.w1};
      const Gram2 g = gram_of(w);
      std::vector<Vec2> h_new = h;
      for (std::size_t i = 0; i < n; ++i) {
        const double q0 = dot3(state.w0, od_pixels[i]);
        const double q1 = dot3(state.w1, od_pixels[i]);
        lasso_cd2(g, q0, q1, sparsity, 1e-10, 200, h_new[i][0], h_new[i][1]);
      }
      double l1_new = 0.0;
      for (const Vec2& c : h_new) l1_new += c[0] + c[1];
      const double f_new = state.smooth_objective(od_pixels, h_new) + sparsity * l1_new;
      // Coordinate descent cannot increase the objective; the guard only
      // shields the trace against recomputation rounding.
      if (f_new <= objective) {
        h = std::move(h_new);
        l1_h = l1_new;
        objective = f_new;
      }
    }

    // W-step: projected gradient (clamp to >= 0, renormalize columns) with a
    // halving line search; the step is skipped when nothing improves.
    {
      Vec3 g0{0, 0, 0}, g1{0, 0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
          const double r = state.w0[c] * h[i][0] + state.w1[c] * h[i][1] - od_pixels[i][c];
          g0[c] += r * h[i][0];
          g1[c] += r * h[i][1];
        }
      }
      const double smooth_old = objective - sparsity * l1_h;
      double eta = 1.0;
      for (int halving = 0; halving < 40; ++halving, eta *= 0.5) {
        Vec3 c0, c1;
        bool ok = true;
        for (int c = 0; c < 3; ++c) {
          c0[c] = std::max(0.0, state.w0[c] - eta * g0[c]);
          c1[c] = std::max(0.0, state.w1[c] - eta * g1[c]);
        }
        if (norm3(c0) <= 0.0 || norm3(c1) <= 0.0) ok = false;
        if (!ok) continue;
        Snmf candidate{normalized3(c0), normalized3(c1)};
        const double smooth_new = candidate.smooth_objective(od_pixels, h);
        if (smooth_new <= smooth_old) {
          state = candidate;
          objective = smooth_new + sparsity * l1_h;
          break;
        }
      }
    }

    result.objective_trace.push_back(objective);
    if (outer > 0) {
      const double denom = std::max(std::abs(prev_objective), 1e-12);
      if ((prev_objective - objective) / denom < tol) break;
    }
  }

  result.stains = order_by_red_rule(to_stain_column(state.w0), to_stain_column(state.w1));
  result.stains.validate();
  return result;
}

StainMatrix estimate_stains_vahadane(const RgbImage& image, double sparsity, int max_outer_iters,
                                     double tol, int max_fit_pixels) {
  const OdImage od = rgb_to_od(image);
  std::vector<Vec3> tissue = collect_tissue_pixels(od, 0.15);
  require_tissue(tissue.size());
  tissue = cap_pixels(std::move(tissue), max_fit_pixels);
  return snmf_factorize(tissue, sparsity, max_outer_iters, tol).stains;
}

// ---------------------------------------------------------------------------
// Deconvolution
// ---------------------------------------------------------------------------

Vec2 nnls2(const Vec3& od, const StainMatrix& stains) {
  const Gram2 g = gram_of(stains);
  double h0 = 0.0, h1 = 0.0;
  lasso_cd2(g, dot3(stains.hematoxylin, od), dot3(stains.eosin, od), 0.0, 1e-8, 100, h0, h1);
  return {h0, h1};
}

ConcentrationMap compute_concentrations(const RgbImage& image, const StainMatrix& stains) {
  stains.validate();
  const OdImage od = rgb_to_od(image);
  ConcentrationMap out(image.width, image.height);
  const Gram2 g = gram_of(stains);
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = od.od.data() + 3 * i;
    const Vec3 v{p[0], p[1], p[2]};
    double h0 = 0.0, h1 = 0.0;
    lasso_cd2(g, dot3(stains.hematoxylin, v), dot3(stains.eosin, v), 0.0, 1e-8, 100, h0, h1);
    out.conc[2 * i] = h0;
    out.conc[2 * i + 1] = h1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Profiles and normalization
// ---------------------------------------------------------------------------

namespace {

StainMatrix estimate_by_method(const RgbImage& image, StainMethod method,
                               const SnmfOptions& opts) {
  if (method == StainMethod::macenko)
    return estimate_stains_macenko(image, opts.od_threshold, opts.angle_percentile);
  return estimate_stains_vahadane(image, opts.sparsity, opts.max_outer_iters, opts.tol,
                                  opts.max_fit_pixels);
}

// 99th-percentile concentration per stain over tissue pixels.
Vec2 robust_concentration_scale(const RgbImage& image, const ConcentrationMap& conc,
                                double od_threshold) {
  const OdImage od = rgb_to_od(image);
  std::vector<double> h_values, e_values;
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    if (od_norm(od.od.data() + 3 * i) > od_threshold) {
      h_values.push_back(conc.conc[2 * i]);
      e_values.push_back(conc.conc[2 * i + 1]);
    }
  }
  require_tissue(h_values.size());
  const Vec2 scale{percentile(h_values, 99.0), percentile(e_values, 99.0)};
  if (scale[0] <= 0.0 || scale[1] <= 0.0)
    throw DegenerateStainError("99th-percentile concentration is zero for one stain");
  return scale;
}

}  // namespace

StainProfile fit_target_profile(const RgbImage& target, StainMethod method,
                                const SnmfOptions& opts) {
  StainProfile profile;
  profile.method = method;
  profile.stain_matrix = estimate_by_method(target, method, opts);
  const ConcentrationMap conc = compute_concentrations(target, profile.stain_matrix);
  profile.conc_scale = robust_concentration_scale(target, conc, opts.od_threshold);
  profile.background = 255.0;
  return profile;
}

RgbImage normalize(const RgbImage& source, StainMethod source_method, const StainProfile& target,
                   const SnmfOptions& opts) {
  const StainMatrix source_stains = estimate_by_method(source, source_method, opts);
  const ConcentrationMap conc = compute_concentrations(source, source_stains);
  const Vec2 source_scale = robust_concentration_scale(source, conc, opts.od_threshold);

  const Vec2 factor{target.conc_scale[0] / source_scale[0],
                    target.conc_scale[1] / source_scale[1]};
  OdImage od(source.width, source.height);
  const Vec3& wh = target.stain_matrix.hematoxylin;
  const Vec3& we = target.stain_matrix.eosin;
  const std::size_t n = static_cast<std::size_t>(source.width) * source.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double ch = conc.conc[2 * i] * factor[0];
    const double ce = conc.conc[2 * i + 1] * factor[1];
    for (int c = 0; c < 3; ++c) od.od[3 * i + c] = wh[c] * ch + we[c] * ce;
  }
  return od_to_rgb(od, target.background);
}

// ---------------------------------------------------------------------------
// Profile persistence
// ---------------------------------------------------------------------------

void save_stain_profile(const StainProfile& profile, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stain profile: " + path);
  out << "histopipe-stain-profile 1\n";
  out << "method " << to_string(profile.method) << "\n";
  out << "background " << format_double(profile.background) << "\n";
  out << "hematoxylin";
  for (double v : profile.stain_matrix.hematoxylin) out << " " << format_double(v);
  out << "\neosin";
  for (double v : profile.stain_matrix.eosin) out << " " << format_double(v);
  out << "\nconc_scale " << format_double(profile.conc_scale[0]) << " "
      << format_double(profile.conc_scale[1]) << "\n";
}

StainProfile load_stain_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stain profile: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "histopipe-stain-profile 1")
    throw FormatVersionError("not a histopipe-stain-profile version 1 file: " + path);

  StainProfile profile;
  long line_no = 1;
  bool saw_matrix_h = false, saw_matrix_e = false, saw_scale = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    std::vector<std::string> rest;
    for (std::string tok; ss >> tok;) rest.push_back(tok);
    try {
      if (key == "method" && rest.size() == 1) {
        profile.method = stain_method_from_string(rest[0]);
      } else if (key == "background" && rest.size() == 1) {
        profile.background = parse_double(rest[0]);
      } else if (key == "hematoxylin" && rest.size() == 3) {
        for (int i = 0; i < 3; ++i) profile.stain_matrix.hematoxylin[i] = parse_double(rest[i]);
        saw_matrix_h = true;
      } else if (key == "eosin" && rest.size() == 3) {
        for (int i = 0; i < 3; ++i) profile.stain_matrix.eosin[i] = parse_double(rest[i]);
        saw_matrix_e = true;
      } else if (key == "conc_scale" && rest.size() == 2) {
        profile.conc_scale[0] = parse_double(rest[0]);
        profile.conc_scale[1] = parse_double(rest[1]);
        saw_scale = true;
      } else {
        throw ParseError("unknown stain profile entry '" + key + "'", line_no);
      }
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!saw_matrix_h || !saw_matrix_e || !saw_scale)
    throw ParseError("incomplete stain profile: " + path);
  profile.stain_matrix.validate();
  if (profile.conc_scale[0] <= 0.0 || profile.conc_scale[1] <= 0.0)
    throw ParseError("stain profile conc_scale must be positive");
  return profile;
}

}  // namespace histo
