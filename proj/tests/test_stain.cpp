#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "histo/stain.hpp"
#include "histo/util.hpp"

using namespace histo;
using testutil::random_mixture;

namespace {

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double residual_norm(const Vec3& od, const StainMatrix& m, const Vec2& c) {
  double r = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = od[i] - c[0] * m.hematoxylin[i] - c[1] * m.eosin[i];
    r += d * d;
  }
  return std::sqrt(r);
}

double half_sq_residual(const Vec3& od, const StainMatrix& m, double c0, double c1) {
  double r = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = od[i] - c0 * m.hematoxylin[i] - c1 * m.eosin[i];
    r += d * d;
  }
  return 0.5 * r;
}

Vec2 clipped_least_squares(const Vec3& od, const StainMatrix& m) {
  const double hh = dot3(m.hematoxylin, m.hematoxylin);
  const double he = dot3(m.hematoxylin, m.eosin);
  const double ee = dot3(m.eosin, m.eosin);
  const double bh = dot3(m.hematoxylin, od);
  const double be = dot3(m.eosin, od);
  const double det = hh * ee - he * he;
  const double c0 = (ee * bh - he * be) / det;
  const double c1 = (hh * be - he * bh) / det;
  return {std::max(0.0, c0), std::max(0.0, c1)};
}

// Exact two-variable nonnegative least squares by KKT case enumeration: the
// minimizer is either the unconstrained solution or lies on one of the axes.
Vec2 kkt_nnls2(const Vec3& od, const StainMatrix& m) {
  const double hh = dot3(m.hematoxylin, m.hematoxylin);
  const double he = dot3(m.hematoxylin, m.eosin);
  const double ee = dot3(m.eosin, m.eosin);
  const double bh = dot3(m.hematoxylin, od);
  const double be = dot3(m.eosin, od);
  const double det = hh * ee - he * he;
  const Vec2 candidates[] = {
      {(ee * bh - he * be) / det, (hh * be - he * bh) / det},
      {std::max(0.0, bh / hh), 0.0},
      {0.0, std::max(0.0, be / ee)},
  };
  Vec2 best{0.0, 0.0};
  double best_r = half_sq_residual(od, m, 0.0, 0.0);
  for (const Vec2& c : candidates) {
    if (c[0] < 0.0 || c[1] < 0.0) continue;
    const double r = half_sq_residual(od, m, c[0], c[1]);
    if (r < best_r) {
      best = c;
      best_r = r;
    }
  }
  return best;
}

double interp_p99(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = (static_cast<double>(v.size()) - 1.0) * 0.99;
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

int max_abs_diff(const RgbImage& a, const RgbImage& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    m = std::max(m, std::abs(static_cast<int>(a.pixels[i]) - static_cast<int>(b.pixels[i])));
  return m;
}

}  // namespace

TEST_CASE("angle_between_deg basics") {
  CHECK(angle_between_deg({1, 0, 0}, {0, 1, 0}) == doctest::Approx(90.0));
  // acos near 1 costs ~sqrt(machine epsilon) of angular resolution.
  CHECK(angle_between_deg({1, 1, 0}, {1, 1, 0}) < 1e-4);
}

TEST_CASE("stain matrix invariants are enforced") {
  StainMatrix ok;
  ok.hematoxylin = testutil::unit3({0.65, 0.70, 0.29});
  ok.eosin = testutil::unit3({0.07, 0.99, 0.11});
  CHECK_NOTHROW(ok.validate());

  StainMatrix not_unit = ok;
  not_unit.hematoxylin[0] *= 2.0;
  CHECK_THROWS_AS(not_unit.validate(), DegenerateStainError);

  StainMatrix collapsed = ok;
  collapsed.eosin = ok.hematoxylin;
  CHECK_THROWS_AS(collapsed.validate(), DegenerateStainError);
}

TEST_CASE("macenko recovers synthetic stain bases within 2 degrees") {
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    const testutil::Mixture mix = random_mixture(rng, 128, 128);
    const StainMatrix est = estimate_stains_macenko(mix.image);
    CHECK(testutil::stain_angle_error_deg(est, mix.stains) < 2.0);
    CHECK(est.hematoxylin[0] > est.eosin[0]);  // red-channel ordering rule
    CHECK(estimate_stains_macenko(mix.image) == est);  // bitwise deterministic
  }
}

TEST_CASE("vahadane recovers synthetic stain bases within 3 degrees") {
  Rng rng(202);
  for (int trial = 0; trial < 3; ++trial) {
    const testutil::Mixture mix = random_mixture(rng, 96, 96);
    const StainMatrix est = estimate_stains_vahadane(mix.image, 0.01);
    CHECK(testutil::stain_angle_error_deg(est, mix.stains) < 3.0);
    CHECK(est.hematoxylin[0] > est.eosin[0]);
    CHECK(estimate_stains_vahadane(mix.image, 0.01) == est);
  }
}

TEST_CASE("white images have no tissue to estimate from") {
  const RgbImage white(64, 64, 255);
  CHECK_THROWS_AS(estimate_stains_macenko(white), NoTissueError);
  CHECK_THROWS_AS(estimate_stains_vahadane(white), NoTissueError);
  CHECK_THROWS_AS(fit_target_profile(white, StainMethod::macenko), NoTissueError);
}

TEST_CASE("single-stain images are rejected as degenerate") {
  Rng rng(303);
  StainMatrix m;
  m.hematoxylin = testutil::unit3({0.65, 0.70, 0.29});
  m.eosin = testutil::unit3({0.07, 0.99, 0.11});
  std::vector<double> conc(2 * 64 * 64, 0.0);
  for (std::size_t i = 0; i < conc.size(); i += 2) conc[i] = uniform_real(rng, 0.4, 1.2);
  const RgbImage image = testutil::render_two_stain(m, conc, 64, 64);
  CHECK_THROWS_AS(estimate_stains_macenko(image), DegenerateStainError);
}

TEST_CASE("snmf objective trace never increases") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> pixels(400);
    const testutil::Mixture basis = random_mixture(rng, 2, 2);
    for (Vec3& p : pixels) {
      const double a = uniform_real(rng, 0.0, 1.5);
      const double b = uniform_real(rng, 0.0, 1.5);
      for (int c = 0; c < 3; ++c)
        p[c] = std::max(0.0, a * basis.stains.hematoxylin[c] + b * basis.stains.eosin[c] +
                                 uniform_real(rng, -0.02, 0.02));
    }
    const SnmfResult res = snmf_factorize(pixels, 0.1, 25, 1e-7);
    REQUIRE(!res.objective_trace.empty());
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
      CHECK(res.objective_trace[i] <= res.objective_trace[i - 1]);
  }
}

TEST_CASE("nnls2 solves exactly representable pixels") {
  StainMatrix m;
  m.hematoxylin = testutil::unit3({0.65, 0.70, 0.29});
  m.eosin = testutil::unit3({0.07, 0.99, 0.11});
  Vec3 od;
  for (int c = 0; c < 3; ++c) od[c] = 1.0 * m.hematoxylin[c] + 0.5 * m.eosin[c];
  const Vec2 sol = nnls2(od, m);
  CHECK(sol[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol[1] == doctest::Approx(0.5).epsilon(1e-6));
  const Vec2 zero = nnls2({0, 0, 0}, m);
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
}

TEST_CASE("nnls2 matches a brute-force grid and beats clipped least squares") {
  Rng rng(505);
  StainMatrix m;
  m.hematoxylin = testutil::unit3({0.65, 0.70, 0.29});
  m.eosin = testutil::unit3({0.07, 0.99, 0.11});
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 od{uniform_real(rng, 0.0, 2.0), uniform_real(rng, 0.0, 2.0),
            uniform_real(rng, 0.0, 2.0)};
    const Vec2 sol = nnls2(od, m);
    CHECK(sol[0] >= 0.0);
    CHECK(sol[1] >= 0.0);

    double best = half_sq_residual(od, m, 0.0, 0.0);
    for (int i = 0; i <= 250; ++i)
      for (int j = 0; j <= 250; ++j)
        best = std::min(best, half_sq_residual(od, m, i * 0.02, j * 0.02));
    CHECK(std::abs(half_sq_residual(od, m, sol[0], sol[1]) - best) < 1e-3);

    const Vec2 clipped = clipped_least_squares(od, m);
    CHECK(residual_norm(od, m, sol) <= residual_norm(od, m, clipped) + 1e-9);
  }
}

TEST_CASE("compute_concentrations is nonnegative everywhere") {
  Rng rng(606);
  const testutil::Mixture mix = random_mixture(rng, 48, 48);
  const ConcentrationMap cm = compute_concentrations(mix.image, mix.stains);
  CHECK(cm.width == 48);
  CHECK(cm.height == 48);
  for (double v : cm.conc) CHECK(v >= 0.0);
}

TEST_CASE("profile concentration scale tracks the independent 99th percentile") {
  Rng rng(707);
  const int side = 96;
  StainMatrix m;
  m.hematoxylin = testutil::unit3({0.65, 0.70, 0.29});
  m.eosin = testutil::unit3({0.07, 0.99, 0.11});
  std::vector<double> conc(2 * side * side);
  for (std::size_t i = 0; i < conc.size(); i += 2) {
    const double u = uniform01(rng);
    conc[i] = u < 0.12 ? uniform_real(rng, 0.0, 2.0) : 0.0;
    conc[i + 1] = (u >= 0.12 && u < 0.24) ? uniform_real(rng, 0.0, 2.0) : 0.0;
    if (u >= 0.24) {
      conc[i] = uniform_real(rng, 0.0, 2.0);
      conc[i + 1] = uniform_real(rng, 0.0, 2.0);
    }
  }
  const RgbImage image = testutil::render_two_stain(m, conc, side, side);

  // Oracle prep: optical density straight from the definition, plus the true
  // generating concentrations of every tissue pixel for a coarse tether.
  std::vector<Vec3> od(static_cast<std::size_t>(side) * side);
  std::vector<bool> tissue(od.size());
  std::vector<double> h_true, e_true;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * side + x;
      const std::uint8_t* px = image.at(x, y);
      double norm_sq = 0.0;
      for (int c = 0; c < 3; ++c) {
        od[i][c] = -std::log10(std::max<double>(px[c], 1.0) / 255.0);
        norm_sq += od[i][c] * od[i][c];
      }
      tissue[i] = std::sqrt(norm_sq) > 0.15;
      if (tissue[i]) {
        h_true.push_back(conc[2 * i]);
        e_true.push_back(conc[2 * i + 1]);
      }
    }
  const double h99_true = interp_p99(h_true);
  const double e99_true = interp_p99(e_true);

  for (StainMethod method : {StainMethod::macenko, StainMethod::vahadane}) {
    const StainProfile profile = fit_target_profile(image, method);

    // Oracle: deconvolve tissue pixels against the fitted basis with an exact
    // closed-form solver and take the interpolated 99th percentile.
    std::vector<double> h_est, e_est;
    for (std::size_t i = 0; i < od.size(); ++i) {
      if (!tissue[i]) continue;
      const Vec2 c = kkt_nnls2(od[i], profile.stain_matrix);
      h_est.push_back(c[0]);
      e_est.push_back(c[1]);
    }
    CHECK(profile.conc_scale[0] == doctest::Approx(interp_p99(h_est)).epsilon(1e-4));
    CHECK(profile.conc_scale[1] == doctest::Approx(interp_p99(e_est)).epsilon(1e-4));

    // The estimated basis sits within a few degrees of the true one, so the
    // scale may drift from the generating percentile but not far.
    CHECK(std::abs(profile.conc_scale[0] - h99_true) / h99_true < 0.15);
    CHECK(std::abs(profile.conc_scale[1] - e99_true) / e99_true < 0.15);
    CHECK(fit_target_profile(image, method) == profile);  // deterministic refit
    CHECK(profile.method == method);
  }
}

TEST_CASE("an image generated exactly from a profile round-trips within two levels") {
  Rng rng(811);
  // The dictionary sparsity penalty tilts fitted columns into the data cone,
  // clipping pure-stain pixels on reconstruction; a small weight keeps the
  // tilt below quantization.
  SnmfOptions precise;
  precise.sparsity = 0.002;
  precise.max_outer_iters = 200;
  precise.tol = 1e-7;
  for (int trial = 0; trial < 3; ++trial) {
    const testutil::Mixture mix = random_mixture(rng, 128, 128);

    StainProfile profile;
    profile.stain_matrix = mix.stains;
    profile.background = 255.0;
    std::vector<double> h, e;
    for (int y = 0; y < mix.image.height; ++y)
      for (int x = 0; x < mix.image.width; ++x) {
        const std::uint8_t* px = mix.image.at(x, y);
        Vec3 od;
        for (int c = 0; c < 3; ++c) od[c] = -std::log10(std::max<double>(px[c], 1.0) / 255.0);
        if (std::sqrt(dot3(od, od)) <= 0.15) continue;
        const Vec2 conc = kkt_nnls2(od, profile.stain_matrix);
        h.push_back(conc[0]);
        e.push_back(conc[1]);
      }
    profile.conc_scale = {interp_p99(h), interp_p99(e)};

    profile.method = StainMethod::macenko;
    CHECK(max_abs_diff(normalize(mix.image, StainMethod::macenko, profile, {}), mix.image) <= 2);
    profile.method = StainMethod::vahadane;
    CHECK(max_abs_diff(normalize(mix.image, StainMethod::vahadane, profile, precise),
                       mix.image) <= 2);
  }
}

TEST_CASE("normalizing an image to its own fitted profile is near-identity on tissue") {
  Rng rng(808);
  SnmfOptions precise;
  precise.sparsity = 0.002;
  precise.max_outer_iters = 200;
  precise.tol = 1e-7;
  for (StainMethod method : {StainMethod::macenko, StainMethod::vahadane}) {
    testutil::Mixture mix = random_mixture(rng, 96, 96);
    // Stamp a white block so background pixels are exercised explicitly.
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) mix.image.set(x, y, 255, 255, 255);
    const StainProfile profile = fit_target_profile(mix.image, method, precise);
    const RgbImage out = normalize(mix.image, method, profile, precise);
    REQUIRE(out.width == mix.image.width);
    REQUIRE(out.height == mix.image.height);

    const OdImage od = rgb_to_od(mix.image);
    int tissue_diff = 0;
    const std::size_t n = static_cast<std::size_t>(mix.image.width) * mix.image.height;
    for (std::size_t i = 0; i < n; ++i) {
      if (od_norm(od.od.data() + 3 * i) <= 0.15) continue;
      for (int c = 0; c < 3; ++c)
        tissue_diff = std::max(tissue_diff, std::abs(static_cast<int>(out.pixels[3 * i + c]) -
                                                     static_cast<int>(mix.image.pixels[3 * i + c])));
    }
    CHECK(tissue_diff <= 3);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) CHECK(out.at(x, y)[c] >= 253);
  }
}

TEST_CASE("profiles persist and reload exactly") {
  Rng rng(909);
  const testutil::Mixture mix = random_mixture(rng, 64, 64);
  const StainProfile profile = fit_target_profile(mix.image, StainMethod::vahadane);
  const auto dir = testutil::fresh_dir("stain_profile");
  const std::string path = (dir / "p.profile").string();
  save_stain_profile(profile, path);
  CHECK(load_stain_profile(path) == profile);

  std::ofstream bad(dir / "bad.profile");
  bad << "who knows 1\n";
  bad.close();
  CHECK_THROWS_AS(load_stain_profile((dir / "bad.profile").string()), FormatVersionError);
}
