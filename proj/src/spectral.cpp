#include "sino/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <string>

#include "sino/error.hpp"

namespace sino {

GridSpec GridSpec::cube(int dim, int n, double length) {
  GridSpec g;
  g.dim = dim;
  g.points.assign(dim, n);
  g.length.assign(dim, length);
  return g;
}

void GridSpec::validate() const {
  if (dim != 2 && dim != 3) throw ValidationError("grid dim must be 2 or 3, got " + std::to_string(dim));
  if (static_cast<int>(points.size()) != dim || static_cast<int>(length.size()) != dim)
    throw ValidationError("grid points/length arity does not match dim");
  for (int i = 0; i < dim; ++i) {
    if (points[i] < 4 || points[i] % 2 != 0)
      throw ValidationError("grid points must be even and >= 4, got " + std::to_string(points[i]));
    if (!(length[i] > 0.0) || !std::isfinite(length[i])) throw ValidationError("grid length must be positive");
  }
}

std::size_t GridSpec::size() const {
  std::size_t n = 1;
  for (int p : points) n *= static_cast<std::size_t>(p);
  return n;
}

bool GridSpec::commensurate(const GridSpec& other) const {
  if (dim != other.dim || length.size() != other.length.size()) return false;
  for (std::size_t i = 0; i < length.size(); ++i) {
    if (std::abs(length[i] - other.length[i]) > 1e-12 * std::max(std::abs(length[i]), 1.0)) return false;
  }
  return true;
}

RealField::RealField(GridSpec g, int c) : grid(std::move(g)), channels(c), data(grid.size() * c, 0.0) {}

bool RealField::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void RealField::validate() const {
  grid.validate();
  if (channels < 1) throw ValidationError("field needs at least one channel");
  if (data.size() != grid.size() * static_cast<std::size_t>(channels))
    throw ValidationError("field element count does not match grid and channels");
  if (!all_finite()) throw NonFinite("field contains non-finite values");
}

SpectralField::SpectralField(GridSpec g, int c) : grid(std::move(g)), channels(c), coeffs(grid.size() * c) {}

FreqGrid::FreqGrid(GridSpec grid) : grid_(std::move(grid)), modes_(grid_.size()) {
  const int d = grid_.dim;
  index_.resize(modes_ * d);
  wave_.resize(modes_ * d);
  neg_.resize(modes_);
  std::vector<int> idx(d, 0);
  for (std::size_t m = 0; m < modes_; ++m) {
    std::size_t neg = 0;
    for (int a = 0; a < d; ++a) {
      const int n = grid_.points[a];
      const int k = idx[a] < n / 2 ? idx[a] : idx[a] - n;
      index_[m * d + a] = k;
      wave_[m * d + a] = 2.0 * std::numbers::pi * k / grid_.length[a];
      neg = neg * n + static_cast<std::size_t>((n - idx[a]) % n);
    }
    neg_[m] = neg;
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[a] < grid_.points[a]) break;
      idx[a] = 0;
    }
  }
}

double FreqGrid::wavenumber_sq(std::size_t mode) const {
  double s = 0.0;
  for (int a = 0; a < grid_.dim; ++a) s += wavenumber(mode, a) * wavenumber(mode, a);
  return s;
}

int FreqGrid::linf(std::size_t mode) const {
  int m = 0;
  for (int a = 0; a < grid_.dim; ++a) m = std::max(m, std::abs(index(mode, a)));
  return m;
}

bool FreqGrid::nyquist(std::size_t mode, int axis) const { return index(mode, axis) == -grid_.points[axis] / 2; }

namespace fft {
namespace {

struct Plans {
  fftw_plan forward;
  fftw_plan backward;
};

// FFTW planning is not thread safe; execution with new arrays is.
const Plans& plans_for(const GridSpec& grid) {
  static std::mutex mu;
  static std::map<std::vector<int>, Plans> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(grid.points);
  if (it != cache.end()) return it->second;
  const std::size_t n = grid.size();
  fftw_complex* a = fftw_alloc_complex(n);
  fftw_complex* b = fftw_alloc_complex(n);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  Plans p{fftw_plan_dft(grid.dim, grid.points.data(), a, b, FFTW_FORWARD, flags),
          fftw_plan_dft(grid.dim, grid.points.data(), a, b, FFTW_BACKWARD, flags)};
  fftw_free(a);
  fftw_free(b);
  return cache.emplace(grid.points, p).first->second;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }
fftw_complex* as_fftw(const cplx* p) { return reinterpret_cast<fftw_complex*>(const_cast<cplx*>(p)); }

}  // namespace

void forward(const GridSpec& grid, const cplx* in, cplx* out) {
  fftw_execute_dft(plans_for(grid).forward, as_fftw(in), as_fftw(out));
}

void forward(const GridSpec& grid, const double* in, cplx* out) {
  const std::size_t n = grid.size();
  std::vector<cplx> tmp(in, in + n);
  forward(grid, tmp.data(), out);
}

void inverse(const GridSpec& grid, const cplx* in, cplx* out) {
  fftw_execute_dft(plans_for(grid).backward, as_fftw(in), as_fftw(out));
  const std::size_t n = grid.size();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

void inverse_real(const GridSpec& grid, const cplx* in, double* out, cplx* scratch) {
  inverse(grid, in, scratch);
  const std::size_t n = grid.size();
  // Compared in squares to avoid a hypot per point.
  double max_im2 = 0.0;
  double max_abs2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double re = scratch[i].real(), im = scratch[i].imag();
    out[i] = re;
    max_im2 = std::max(max_im2, im * im);
    max_abs2 = std::max(max_abs2, re * re + im * im);
  }
  if (!(max_im2 <= 1e-16 * max_abs2)) {
    throw HermitianViolation("imaginary residue " + std::to_string(std::sqrt(max_im2)) + " vs magnitude " +
                             std::to_string(std::sqrt(max_abs2)));
  }
}

}  // namespace fft

SpectralField forward_transform(const RealField& f) {
  SpectralField s(f.grid, f.channels);
  const std::size_t n = f.points();
  std::vector<cplx> tmp(n);
  for (int c = 0; c < f.channels; ++c) {
    auto src = f.channel(c);
    std::copy(src.begin(), src.end(), tmp.begin());
    fft::forward(f.grid, tmp.data(), s.channel(c).data());
  }
  return s;
}

RealField inverse_transform(const SpectralField& s) {
  RealField f(s.grid, s.channels);
  std::vector<cplx> scratch(s.modes());
  for (int c = 0; c < s.channels; ++c) fft::inverse_real(s.grid, s.channel(c).data(), f.channel(c).data(), scratch.data());
  return f;
}

SpectralField spectral_derivative(const SpectralField& s, std::span<const int> orders) {
  if (static_cast<int>(orders.size()) != s.grid.dim) throw ValidationError("derivative orders must match grid dim");
  for (int o : orders)
    if (o < 0) throw ValidationError("derivative orders must be nonnegative");
  const FreqGrid freq(s.grid);
  std::vector<cplx> mult(freq.modes());
  for (std::size_t m = 0; m < freq.modes(); ++m) {
    cplx v = 1.0;
    for (int a = 0; a < s.grid.dim; ++a) {
      if (orders[a] == 0) continue;
      if (orders[a] % 2 == 1 && freq.nyquist(m, a)) {
        v = 0.0;
        break;
      }
      v *= std::pow(cplx(0.0, freq.wavenumber(m, a)), orders[a]);
    }
    mult[m] = v;
  }
  return apply_spectral_multiplier(s, mult);
}

int two_thirds_cutoff(const GridSpec& grid) {
  int kmax = grid.points[0] / 2;
  for (int p : grid.points) kmax = std::min(kmax, p / 2);
  return (2 * kmax) / 3;
}

std::vector<double> two_thirds_mask(const FreqGrid& freq) {
  const int cut = two_thirds_cutoff(freq.grid());
  std::vector<double> mask(freq.modes());
  for (std::size_t m = 0; m < freq.modes(); ++m) mask[m] = freq.linf(m) <= cut ? 1.0 : 0.0;
  return mask;
}

RealField low_pass(const RealField& f, std::span<const double> mask) {
  RealField out(f.grid, f.channels);
  const std::size_t n = f.points();
  std::vector<cplx> spec(n), scratch(n);
  for (int c = 0; c < f.channels; ++c) {
    fft::forward(f.grid, f.channel(c).data(), spec.data());
    for (std::size_t m = 0; m < n; ++m) spec[m] *= mask[m];
    fft::inverse_real(f.grid, spec.data(), out.channel(c).data(), scratch.data());
  }
  return out;
}

SpectralField apply_spectral_multiplier(const SpectralField& s, std::span<const cplx> m) {
  const std::size_t n = s.modes();
  const bool shared = m.size() == n;
  if (!shared && m.size() != n * s.channels) throw ValidationError("multiplier shape does not match spectrum");
  SpectralField out(s.grid, s.channels);
  for (int c = 0; c < s.channels; ++c) {
    const cplx* mc = shared ? m.data() : m.data() + c * n;
    auto src = s.channel(c);
    auto dst = out.channel(c);
    for (std::size_t k = 0; k < n; ++k) dst[k] = mc[k] * src[k];
  }
  return out;
}

namespace {

// Flat offset of integer index vector k on a grid (k already in range).
std::size_t flat_of(const GridSpec& g, const std::vector<int>& k) {
  std::size_t off = 0;
  for (int a = 0; a < g.dim; ++a) {
    const int n = g.points[a];
    off = off * n + static_cast<std::size_t>((k[a] + n) % n);
  }
  return off;
}

}  // namespace

RealField spectral_resample(const RealField& f, const GridSpec& target) {
  target.validate();
  if (!f.grid.commensurate(target)) throw IncompatibleDomain("resample requires identical domain lengths");
  if (f.grid == target) return f;
  const SpectralField src = forward_transform(f);
  const FreqGrid sf(f.grid);
  SpectralField dst(target, f.channels);
  const double ratio = static_cast<double>(target.size()) / static_cast<double>(f.grid.size());
  std::vector<int> k(f.grid.dim);
  for (std::size_t m = 0; m < sf.modes(); ++m) {
    // Every source mode contributes to one or more target modes with a weight.
    // Axes that shrink drop |k| >= M/2; axes that grow split the source Nyquist.
    std::vector<std::pair<std::vector<int>, double>> targets{{{}, 1.0}};
    bool dropped = false;
    for (int a = 0; a < f.grid.dim && !dropped; ++a) {
      const int ki = sf.index(m, a);
      const int ns = f.grid.points[a];
      const int nt = target.points[a];
      std::vector<std::pair<std::vector<int>, double>> next;
      if (nt < ns) {
        if (std::abs(ki) >= nt / 2) {
          dropped = true;
          break;
        }
        for (auto& [v, w] : targets) {
          v.push_back(ki);
          next.emplace_back(v, w);
        }
      } else if (nt > ns && ki == -ns / 2) {
        for (auto& [v, w] : targets) {
          auto lo = v, hi = v;
          lo.push_back(ki);
          hi.push_back(-ki);
          next.emplace_back(lo, 0.5 * w);
          next.emplace_back(hi, 0.5 * w);
        }
      } else {
        for (auto& [v, w] : targets) {
          v.push_back(ki);
          next.emplace_back(v, w);
        }
      }
      targets = std::move(next);
    }
    if (dropped) continue;
    for (const auto& [kv, w] : targets) {
      const std::size_t t = flat_of(target, kv);
      for (int c = 0; c < f.channels; ++c) dst.channel(c)[t] += w * ratio * src.channel(c)[m];
    }
  }
  return inverse_transform(dst);
}

RealField grf_sample(const GridSpec& grid, std::uint64_t seed, const GrfParams& params) {
  grid.validate();
  if (!(params.alpha > grid.dim / 2.0)) throw ValidationError("GRF alpha must exceed dim/2");
  const double scale = params.scale < 0.0 ? std::pow(params.tau, params.alpha - grid.dim / 2.0) : params.scale;
  const FreqGrid freq(grid);
  const std::size_t n = freq.modes();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<cplx> xi(n);
  for (auto& z : xi) {
    const double re = normal(rng);
    const double im = normal(rng);
    z = cplx(re, im) / std::numbers::sqrt2;
  }

  SpectralField s(grid, 1);
  const double total = static_cast<double>(n);
  const double four_pi_sq = 4.0 * std::numbers::pi * std::numbers::pi;
  for (std::size_t m = 1; m < n; ++m) {
    double ksq = 0.0;
    for (int a = 0; a < grid.dim; ++a) ksq += static_cast<double>(freq.index(m, a)) * freq.index(m, a);
    const double sigma = scale * std::pow(four_pi_sq * ksq + params.tau * params.tau, -params.alpha / 2.0);
    const cplx eta = (xi[m] + std::conj(xi[freq.negated(m)])) / std::numbers::sqrt2;
    s.coeffs[m] = total * sigma * eta;
  }
  s.coeffs[0] = 0.0;
  RealField f = inverse_transform(s);
  // Remove the residual mean left by rounding so the DC is exactly zero.
  double mean = 0.0;
  for (double v : f.data) mean += v;
  mean /= total;
  for (double& v : f.data) v -= mean;
  return f;
}

RealField cyclic_shift(const RealField& f, std::span<const int> shift) {
  if (static_cast<int>(shift.size()) != f.grid.dim) throw ValidationError("shift arity must match grid dim");
  RealField out(f.grid, f.channels);
  const std::size_t n = f.points();
  const int d = f.grid.dim;
  std::vector<int> idx(d, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t dst = 0;
    for (int a = 0; a < d; ++a) {
      const int p = f.grid.points[a];
      dst = dst * p + static_cast<std::size_t>(((idx[a] + shift[a]) % p + p) % p);
    }
    for (int c = 0; c < f.channels; ++c) out.channel(c)[dst] = f.channel(c)[i];
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[a] < f.grid.points[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

}  // namespace sino
