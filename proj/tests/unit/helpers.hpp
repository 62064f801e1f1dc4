#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "sino/spectral.hpp"

namespace sino::testing {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double max_abs_diff(const RealField& a, const RealField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline double max_abs(const RealField& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

// Physical coordinate of flat point `p` along `axis` (last axis fastest).
inline double coord(const GridSpec& g, std::size_t p, int axis) {
  std::size_t stride = 1;
  for (int a = g.dim - 1; a > axis; --a) stride *= g.points[a];
  const std::size_t i = (p / stride) % g.points[axis];
  return g.length[axis] * static_cast<double>(i) / g.points[axis];
}

// Samples f(x) for every channel-0 point; x has grid.dim entries.
inline RealField sample(const GridSpec& g, const std::function<double(const double*)>& f, int channels = 1) {
  RealField out(g, channels);
  double x[3] = {0, 0, 0};
  for (std::size_t p = 0; p < g.size(); ++p) {
    for (int a = 0; a < g.dim; ++a) x[a] = coord(g, p, a);
    for (int c = 0; c < channels; ++c) out.channel(c)[p] = f(x);
  }
  return out;
}

// Independent GRF per channel.
inline RealField random_field(const GridSpec& g, int channels, std::uint64_t seed, GrfParams p = {2.0, 3.0, -1.0}) {
  RealField u(g, channels);
  for (int c = 0; c < channels; ++c) {
    const RealField r = grf_sample(g, seed * 7919 + c, p);
    std::copy(r.data.begin(), r.data.end(), u.channel(c).begin());
  }
  return u;
}

// Keeps only modes with |k|_inf <= cutoff.
inline RealField bandlimit(const RealField& f, int cutoff) {
  SpectralField s = forward_transform(f);
  const FreqGrid freq(f.grid);
  for (int c = 0; c < f.channels; ++c)
    for (std::size_t m = 0; m < freq.modes(); ++m)
      if (freq.linf(m) > cutoff) s.channel(c)[m] = 0.0;
  return inverse_transform(s);
}

}  // namespace sino::testing
