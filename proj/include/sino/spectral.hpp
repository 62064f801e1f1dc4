#pragma once

// Periodic grids, Fourier transforms and spectral operators.
//
// Conventions used throughout the library:
//   * the forward transform is unnormalised, the inverse divides by the number
//     of grid points;
//   * the full complex spectrum is stored, mode ordering per axis is
//     [0, 1, ..., N/2-1, -N/2, ..., -1] (the usual FFT order);
//   * fields are channel-major, then row-major over the grid (last axis
//     fastest).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sino {

using cplx = std::complex<double>;

struct GridSpec {
  int dim = 2;
  std::vector<int> points;
  std::vector<double> length;

  static GridSpec cube(int dim, int n, double length);

  /// Throws ValidationError unless every axis has an even count >= 4 and a
  /// positive length.
  void validate() const;
  std::size_t size() const;
  bool operator==(const GridSpec&) const = default;

  /// Same dimension and domain lengths (to 1e-12 relative).
  bool commensurate(const GridSpec& other) const;
};

struct RealField {
  GridSpec grid;
  int channels = 0;
  std::vector<double> data;

  RealField() = default;
  RealField(GridSpec grid, int channels);

  std::size_t points() const { return grid.size(); }
  std::span<double> channel(int c) { return {data.data() + c * points(), points()}; }
  std::span<const double> channel(int c) const { return {data.data() + c * points(), points()}; }

  bool all_finite() const;
  /// Shape check plus finiteness; throws ValidationError / NonFinite.
  void validate() const;
};

struct SpectralField {
  GridSpec grid;
  int channels = 0;
  std::vector<cplx> coeffs;

  SpectralField() = default;
  SpectralField(GridSpec grid, int channels);

  std::size_t modes() const { return grid.size(); }
  std::span<cplx> channel(int c) { return {coeffs.data() + c * modes(), modes()}; }
  std::span<const cplx> channel(int c) const { return {coeffs.data() + c * modes(), modes()}; }
};

/// Integer frequency indices and angular wavenumbers 2*pi*k/L for every mode.
class FreqGrid {
 public:
  explicit FreqGrid(GridSpec grid);

  const GridSpec& grid() const { return grid_; }
  int dim() const { return grid_.dim; }
  std::size_t modes() const { return modes_; }
  int index(std::size_t mode, int axis) const { return index_[mode * grid_.dim + axis]; }
  double wavenumber(std::size_t mode, int axis) const { return wave_[mode * grid_.dim + axis]; }
  double wavenumber_sq(std::size_t mode) const;
  /// max_i |k_i| over integer indices.
  int linf(std::size_t mode) const;
  /// Flat position of the mode -k.
  std::size_t negated(std::size_t mode) const { return neg_[mode]; }
  /// True when some axis sits on its Nyquist index -N/2.
  bool nyquist(std::size_t mode, int axis) const;

 private:
  GridSpec grid_;
  std::size_t modes_;
  std::vector<int> index_;
  std::vector<double> wave_;
  std::vector<std::size_t> neg_;
};

// Raw per-channel transforms over contiguous buffers of grid.size() entries.
namespace fft {
void forward(const GridSpec& grid, const double* in, cplx* out);
void forward(const GridSpec& grid, const cplx* in, cplx* out);
/// Normalised inverse, complex result.
void inverse(const GridSpec& grid, const cplx* in, cplx* out);
/// Normalised inverse keeping the real part. Throws HermitianViolation when
/// max|Im| exceeds 1e-8 times the largest output magnitude. `scratch` must
/// hold grid.size() entries.
void inverse_real(const GridSpec& grid, const cplx* in, double* out, cplx* scratch);
}  // namespace fft

SpectralField forward_transform(const RealField& f);
RealField inverse_transform(const SpectralField& s);

/// Multiplies by prod_i (i k_i)^orders[i]. Odd orders zero the Nyquist mode of
/// that axis so real fields stay real.
SpectralField spectral_derivative(const SpectralField& s, std::span<const int> orders);

/// floor(2 * min_i(N_i/2) / 3).
int two_thirds_cutoff(const GridSpec& grid);
/// 1 where ||k||_inf <= two_thirds_cutoff, else 0.
std::vector<double> two_thirds_mask(const FreqGrid& freq);
/// Forward transform, mask, inverse, per channel.
RealField low_pass(const RealField& f, std::span<const double> mask);

/// Elementwise product. `m` has either one entry per mode (shared by all
/// channels) or one per (channel, mode).
SpectralField apply_spectral_multiplier(const SpectralField& s, std::span<const cplx> m);

/// Fourier truncation (strict, target Nyquist zeroed) or zero padding (source
/// Nyquist split evenly between +-N/2). Lengths must agree.
RealField spectral_resample(const RealField& f, const GridSpec& target);

struct GrfParams {
  double alpha = 2.5;
  double tau = 7.0;
  /// Negative selects tau^(alpha - dim/2).
  double scale = -1.0;
};

/// Zero-mean periodic Gaussian field whose Fourier amplitude at integer index
/// k has standard deviation scale * (4 pi^2 |k|^2 + tau^2)^(-alpha/2).
RealField grf_sample(const GridSpec& grid, std::uint64_t seed, const GrfParams& params);

/// Cyclic shift by `shift[i]` cells along each axis (test and diagnostics helper).
RealField cyclic_shift(const RealField& f, std::span<const int> shift);

}  // namespace sino
