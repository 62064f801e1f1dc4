#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "helpers.hpp"
#include "sino/error.hpp"

using namespace sino;
using namespace sino::testing;

namespace {

// O(N^2) DFT straight from the definition, with the stored mode ordering.
std::vector<cplx> naive_dft(const RealField& f) {
  const GridSpec& g = f.grid;
  const FreqGrid freq(g);
  std::vector<cplx> out(g.size());
  for (std::size_t m = 0; m < g.size(); ++m) {
    cplx acc = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) {
      double phase = 0.0;
      std::size_t rest = p;
      for (int a = g.dim - 1; a >= 0; --a) {
        const std::size_t i = rest % g.points[a];
        rest /= g.points[a];
        phase += kTwoPi * freq.index(m, a) * static_cast<double>(i) / g.points[a];
      }
      acc += f.data[p] * std::polar(1.0, -phase);
    }
    out[m] = acc;
  }
  return out;
}

std::size_t mode_of(const FreqGrid& freq, std::vector<int> k) {
  for (std::size_t m = 0; m < freq.modes(); ++m) {
    bool ok = true;
    for (int a = 0; a < freq.dim(); ++a) ok = ok && freq.index(m, a) == k[a];
    if (ok) return m;
  }
  return freq.modes();
}

}  // namespace

TEST(Grid, RejectsOddOrTinyCounts) {
  EXPECT_THROW(GridSpec::cube(2, 7, 1.0).validate(), ValidationError);
  EXPECT_THROW(GridSpec::cube(2, 2, 1.0).validate(), ValidationError);
  EXPECT_THROW(GridSpec::cube(2, 8, 0.0).validate(), ValidationError);
  EXPECT_NO_THROW(GridSpec::cube(3, 4, 1.0).validate());
}

TEST(FreqGrid, OrderingAndWavenumbers) {
  const FreqGrid freq(GridSpec::cube(2, 8, 12.0 * std::numbers::pi));
  EXPECT_EQ(freq.index(0, 0), 0);
  EXPECT_EQ(freq.wavenumber(0, 1), 0.0);
  // Row-major: the last axis is fastest, order 0..N/2-1, -N/2..-1.
  EXPECT_EQ(freq.index(1, 1), 1);
  EXPECT_EQ(freq.index(4, 1), -4);
  EXPECT_EQ(freq.index(7, 1), -1);
  EXPECT_EQ(freq.index(8, 0), 1);
  EXPECT_NEAR(freq.wavenumber(1, 1), 1.0 / 6.0, 1e-15);
  for (std::size_t m = 0; m < freq.modes(); ++m) EXPECT_EQ(freq.negated(freq.negated(m)), m);
}

TEST(Transform, ConstantFieldHasOnlyTheMeanMode) {
  const GridSpec g = GridSpec::cube(2, 8, 1.0);
  RealField f(g, 1);
  std::fill(f.data.begin(), f.data.end(), 2.5);
  const SpectralField s = forward_transform(f);
  EXPECT_NEAR(s.coeffs[0].real(), 2.5 * 64, 1e-12);
  for (std::size_t m = 1; m < s.coeffs.size(); ++m) EXPECT_LT(std::abs(s.coeffs[m]), 1e-12);
}

TEST(Transform, SineHasTwoModes) {
  const GridSpec g = GridSpec::cube(2, 8, kTwoPi);
  const RealField f = sample(g, [](const double* x) { return std::sin(x[0]); });
  const SpectralField s = forward_transform(f);
  const FreqGrid freq(g);
  const std::size_t plus = mode_of(freq, {1, 0}), minus = mode_of(freq, {-1, 0});
  EXPECT_NEAR(std::abs(s.coeffs[plus] - cplx(0.0, -32.0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(s.coeffs[minus] - cplx(0.0, 32.0)), 0.0, 1e-12);
  for (std::size_t m = 0; m < s.coeffs.size(); ++m)
    if (m != plus && m != minus) EXPECT_LT(std::abs(s.coeffs[m]), 1e-12);
}

TEST(Transform, MatchesDefinitionInTwoAndThreeDimensions) {
  for (const GridSpec& g : {GridSpec{2, {8, 6}, {1.0, 2.0}}, GridSpec::cube(3, 4, 1.0)}) {
    const RealField f = random_field(g, 1, 3);
    const auto ref = naive_dft(f);
    const SpectralField s = forward_transform(f);
    for (std::size_t m = 0; m < ref.size(); ++m) EXPECT_LT(std::abs(s.coeffs[m] - ref[m]), 1e-12);
  }
}

TEST(Transform, RoundTripAndParseval) {
  const GridSpec g = GridSpec::cube(2, 32, 1.0);
  RealField f = random_field(g, 2, 9);
  const SpectralField s = forward_transform(f);
  EXPECT_LT(max_abs_diff(inverse_transform(s), f) / max_abs(f), 1e-13);
  for (int c = 0; c < 2; ++c) {
    double phys = 0.0, spec = 0.0;
    for (double v : f.channel(c)) phys += v * v;
    for (cplx z : s.channel(c)) spec += std::norm(z);
    EXPECT_NEAR(phys, spec / g.size(), 1e-10 * phys);
  }
  const FreqGrid freq(g);
  for (std::size_t m = 0; m < s.modes(); ++m)
    EXPECT_LT(std::abs(s.coeffs[m] - std::conj(s.coeffs[freq.negated(m)])), 1e-10);
}

TEST(Transform, InverseEdgeCasesAndHermitianViolation) {
  const GridSpec g = GridSpec::cube(2, 8, 1.0);
  SpectralField s(g, 1);
  EXPECT_EQ(max_abs(inverse_transform(s)), 0.0);
  s.coeffs[0] = 64.0;
  const RealField one = inverse_transform(s);
  for (double v : one.data) EXPECT_NEAR(v, 1.0, 1e-15);
  s.coeffs[1] = cplx(0.0, 10.0);  // no conjugate partner
  EXPECT_THROW(inverse_transform(s), HermitianViolation);
}

TEST(Derivative, FirstDerivativeOfSine) {
  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  const RealField u = sample(g, [](const double* x) { return std::sin(x[0]); });
  const int orders[] = {1, 0};
  const RealField du = inverse_transform(spectral_derivative(forward_transform(u), orders));
  EXPECT_LT(max_abs_diff(du, sample(g, [](const double* x) { return std::cos(x[0]); })), 1e-12);
}

TEST(Derivative, SecondDerivativeOnLongDomain) {
  const GridSpec g = GridSpec::cube(2, 32, 12.0 * std::numbers::pi);
  const RealField u = sample(g, [](const double* x) { return std::sin(x[0] / 6.0); });
  const int orders[] = {2, 0};
  const RealField d2 = inverse_transform(spectral_derivative(forward_transform(u), orders));
  const RealField want = sample(g, [](const double* x) { return -std::sin(x[0] / 6.0) / 36.0; });
  EXPECT_LT(max_abs_diff(d2, want), 1e-12);
}

TEST(Derivative, TrigonometricPolynomialsAreExact) {
  // Mixed partials of a bandlimited 3D field against analytic values.
  const GridSpec g{3, {8, 12, 16}, {kTwoPi, 2.0 * kTwoPi, kTwoPi}};
  auto f = [](const double* x) { return std::sin(2 * x[0]) * std::cos(1.5 * x[1]) + std::cos(3 * x[2] - x[0]); };
  auto fxy = [](const double* x) { return -3.0 * std::cos(2 * x[0]) * std::sin(1.5 * x[1]); };
  auto fzz = [](const double* x) { return -9.0 * std::cos(3 * x[2] - x[0]); };
  const SpectralField s = forward_transform(sample(g, f));
  const int oxy[] = {1, 1, 0}, ozz[] = {0, 0, 2};
  EXPECT_LT(max_abs_diff(inverse_transform(spectral_derivative(s, oxy)), sample(g, fxy)), 1e-12);
  EXPECT_LT(max_abs_diff(inverse_transform(spectral_derivative(s, ozz)), sample(g, fzz)), 1e-12);
}

TEST(Derivative, IsLinear) {
  const GridSpec g = GridSpec::cube(2, 16, 3.0);
  const RealField f = random_field(g, 1, 1), h = random_field(g, 1, 2);
  RealField comb(g, 1);
  for (std::size_t i = 0; i < comb.data.size(); ++i) comb.data[i] = 1.5 * f.data[i] - 0.25 * h.data[i];
  const int o[] = {1, 2};
  const RealField df = inverse_transform(spectral_derivative(forward_transform(f), o));
  const RealField dh = inverse_transform(spectral_derivative(forward_transform(h), o));
  const RealField dc = inverse_transform(spectral_derivative(forward_transform(comb), o));
  RealField want(g, 1);
  for (std::size_t i = 0; i < want.data.size(); ++i) want.data[i] = 1.5 * df.data[i] - 0.25 * dh.data[i];
  EXPECT_LT(max_abs_diff(dc, want), 1e-12 * std::max(1.0, max_abs(want)));
}

TEST(Derivative, OddOrderZeroesNyquist) {
  const GridSpec g = GridSpec::cube(2, 8, kTwoPi);
  const RealField u = sample(g, [](const double* x) { return std::cos(4 * x[0]); });  // pure Nyquist mode
  const int o1[] = {1, 0}, o2[] = {2, 0};
  EXPECT_LT(max_abs(inverse_transform(spectral_derivative(forward_transform(u), o1))), 1e-14);
  const RealField d2 = inverse_transform(spectral_derivative(forward_transform(u), o2));
  EXPECT_LT(max_abs_diff(d2, sample(g, [](const double* x) { return -16 * std::cos(4 * x[0]); })), 1e-12);
}

TEST(Multiplier, LaplacianTableMatchesDerivativePath) {
  const GridSpec g = GridSpec::cube(2, 32, 5.0);
  const FreqGrid freq(g);
  const SpectralField s = forward_transform(random_field(g, 1, 4));
  std::vector<cplx> lap(freq.modes());
  for (std::size_t m = 0; m < freq.modes(); ++m) lap[m] = -freq.wavenumber_sq(m);
  const SpectralField a = apply_spectral_multiplier(s, lap);
  const int ox[] = {2, 0}, oy[] = {0, 2};
  const SpectralField bx = spectral_derivative(s, ox), by = spectral_derivative(s, oy);
  double scale = 0.0;
  for (std::size_t m = 0; m < freq.modes(); ++m) scale = std::max(scale, std::abs(a.coeffs[m]));
  for (std::size_t m = 0; m < freq.modes(); ++m)
    EXPECT_LE(std::abs(a.coeffs[m] - (bx.coeffs[m] + by.coeffs[m])), 1e-13 * scale);
  std::vector<cplx> ones(freq.modes(), 1.0);
  EXPECT_EQ(apply_spectral_multiplier(s, ones).coeffs, s.coeffs);
}

TEST(Mask, CutoffRule) {
  EXPECT_EQ(two_thirds_cutoff(GridSpec::cube(2, 64, 1.0)), 21);
  EXPECT_EQ(two_thirds_cutoff(GridSpec::cube(2, 6, 1.0)), 2);
  EXPECT_EQ(two_thirds_cutoff(GridSpec{2, {64, 32}, {1.0, 1.0}}), 10);
  const FreqGrid freq(GridSpec::cube(2, 64, 1.0));
  const auto mask = two_thirds_mask(freq);
  EXPECT_EQ(mask[mode_of(freq, {21, 0})], 1.0);
  EXPECT_EQ(mask[mode_of(freq, {22, 0})], 0.0);
  EXPECT_EQ(mask[mode_of(freq, {-21, 21})], 1.0);
  EXPECT_EQ(mask[mode_of(freq, {-22, 3})], 0.0);
  for (std::size_t m = 0; m < freq.modes(); ++m) EXPECT_EQ(mask[m] * mask[m], mask[m]);
}

TEST(Mask, ProductOfBandlimitedFieldsHasNoEnergyAboveCutoff) {
  const GridSpec g = GridSpec::cube(2, 32, kTwoPi);
  const FreqGrid freq(g);
  const int cutoff = two_thirds_cutoff(g);
  const RealField a = bandlimit(random_field(g, 1, 5, {1.1, 1.0, 1.0}), cutoff);
  const RealField b = bandlimit(random_field(g, 1, 6, {1.1, 1.0, 1.0}), cutoff);
  RealField prod(g, 1);
  for (std::size_t i = 0; i < prod.data.size(); ++i) prod.data[i] = a.data[i] * b.data[i];
  const auto mask = two_thirds_mask(freq);
  const SpectralField raw = forward_transform(prod);
  double above_raw = 0.0;
  for (std::size_t m = 0; m < freq.modes(); ++m)
    if (freq.linf(m) > cutoff) above_raw += std::norm(raw.coeffs[m]);
  EXPECT_GT(above_raw, 0.0);  // the product does spill over the cutoff
  const SpectralField filtered = forward_transform(low_pass(prod, mask));
  double above = 0.0;
  for (std::size_t m = 0; m < freq.modes(); ++m)
    if (freq.linf(m) > cutoff) above += std::norm(filtered.coeffs[m]);
  EXPECT_LT(above, 1e-24 * above_raw);
}

TEST(Resample, ConstantsSinesAndRoundTrip) {
  const GridSpec fine = GridSpec::cube(2, 64, kTwoPi), coarse = GridSpec::cube(2, 32, kTwoPi);
  RealField c(fine, 1);
  std::fill(c.data.begin(), c.data.end(), -1.25);
  for (double v : spectral_resample(c, coarse).data) EXPECT_NEAR(v, -1.25, 1e-14);
  for (double v : spectral_resample(c, GridSpec::cube(2, 128, kTwoPi)).data) EXPECT_NEAR(v, -1.25, 1e-14);

  auto s = [](const double* x) { return std::sin(x[0]); };
  EXPECT_LT(max_abs_diff(spectral_resample(sample(fine, s), coarse), sample(coarse, s)), 1e-13);

  const RealField band = bandlimit(random_field(fine, 2, 7), 15);
  const RealField back = spectral_resample(spectral_resample(band, coarse), fine);
  EXPECT_LT(max_abs_diff(back, band), 1e-13 * max_abs(band));
  EXPECT_THROW(spectral_resample(band, GridSpec::cube(2, 32, 1.0)), IncompatibleDomain);
}

TEST(Grf, DeterministicZeroMean) {
  const GridSpec g = GridSpec::cube(2, 32, 1.0);
  const RealField a = grf_sample(g, 42, {2.5, 7.0, -1.0});
  const RealField b = grf_sample(g, 42, {2.5, 7.0, -1.0});
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.data, grf_sample(g, 43, {2.5, 7.0, -1.0}).data);
  double mean = 0.0;
  for (double v : a.data) mean += v;
  EXPECT_LT(std::abs(mean / g.size()), 1e-12);
  EXPECT_THROW(grf_sample(g, 1, {1.0, 7.0, -1.0}), ValidationError);
}

TEST(Grf, SpectralSlopeMatchesAlpha) {
  // Shell-averaged power over 100 draws; for |k| >> tau/(2 pi) the amplitude
  // spectrum decays like |k|^-alpha, so log power has slope -2 alpha.
  const GridSpec g = GridSpec::cube(2, 64, 1.0);
  const FreqGrid freq(g);
  const double alpha = 2.5, tau = 7.0;
  std::vector<double> power(33, 0.0), count(33, 0.0);
  for (int seed = 0; seed < 100; ++seed) {
    const SpectralField s = forward_transform(grf_sample(g, seed, {alpha, tau, -1.0}));
    for (std::size_t m = 1; m < freq.modes(); ++m) {
      const int shell = static_cast<int>(std::lround(std::sqrt(freq.wavenumber_sq(m)) / kTwoPi));
      if (shell < 33) power[shell] += std::norm(s.coeffs[m]), count[shell] += 1;
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int k = 8; k <= 28; ++k) {
    const double x = std::log(k), y = std::log(power[k] / count[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(-slope / 2.0, alpha, 0.1 * alpha);
}

TEST(Shift, CyclicShiftMovesSamples) {
  const GridSpec g = GridSpec::cube(2, 8, 1.0);
  const RealField f = random_field(g, 1, 8);
  const int sh[] = {1, 3};
  const RealField s = cyclic_shift(f, sh);
  EXPECT_EQ(s.data[1 * 8 + 3], f.data[0]);
}
