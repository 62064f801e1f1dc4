#pragma once

#include <cstdint>

#include "sino/error.hpp"
#include "sino/spectral.hpp"

namespace sino {

// y += a * x
inline void axpy(RealField& y, double a, const RealField& x) {
  const std::size_t n = y.data.size();
  double* yd = y.data.data();
  const double* xd = x.data.data();
  for (std::size_t i = 0; i < n; ++i) yd[i] += a * xd[i];
}

// x + a * y as a new field
inline RealField add_scaled(const RealField& x, double a, const RealField& y) {
  RealField out = x;
  axpy(out, a, y);
  return out;
}

inline void require_same_shape(const RealField& a, const RealField& b, const char* what) {
  if (!(a.grid == b.grid) || a.channels != b.channels) throw ValidationError(std::string(what) + ": field shapes differ");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace sino
