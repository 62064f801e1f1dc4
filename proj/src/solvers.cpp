#include "sino/solvers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <thread>

#include "sino/error.hpp"
#include "sino/field_ops.hpp"

namespace sino::solver {

std::string to_string(PdeKind k) {
  switch (k) {
    case PdeKind::kse: return "kse";
    case PdeKind::nse: return "nse";
    case PdeKind::burgers: return "burgers";
    case PdeKind::heat: return "heat";
  }
  return "?";
}

std::string to_string(Forcing f) {
  switch (f) {
    case Forcing::none: return "none";
    case Forcing::f1: return "f1";
    case Forcing::f2: return "f2";
  }
  return "?";
}

PdeKind pde_kind_from_string(const std::string& s) {
  for (auto k : {PdeKind::kse, PdeKind::nse, PdeKind::burgers, PdeKind::heat})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown PDE kind '" + s + "' (kse, nse, burgers, heat)");
}

Forcing forcing_from_string(const std::string& s) {
  for (auto f : {Forcing::none, Forcing::f1, Forcing::f2})
    if (s == to_string(f)) return f;
  throw ValidationError("unknown forcing '" + s + "' (none, f1, f2)");
}

void PDESpec::validate() const {
  if (kind != PdeKind::nse && forcing != Forcing::none) throw ValidationError("forcing is only defined for NSE");
  if (kind != PdeKind::burgers && kind != PdeKind::heat && dim != 2)
    throw ValidationError("only Burgers and heat support dim 3");
  if (dim != 2 && dim != 3) throw ValidationError("PDE dim must be 2 or 3");
  if (kind != PdeKind::kse && !(nu > 0.0)) throw ValidationError("viscosity must be positive");
}

void SolverConfig::validate() const {
  if (!(dt > 0.0)) throw ValidationError("solver dt must be positive");
  if (!(save_dt >= dt)) throw ValidationError("save_dt must be >= dt");
  if (!(t_end >= 0.0)) throw ValidationError("t_end must be nonnegative");
  if (t_end > 0.0 && t_end < save_dt) throw ValidationError("t_end must be >= save_dt");
  steps_per_save();
}

long SolverConfig::steps_per_save() const {
  const double ratio = save_dt / dt;
  const long r = std::lround(ratio);
  if (r < 1 || std::abs(ratio - r) > 1e-9 * ratio) throw ValidationError("save_dt must be an integer multiple of dt");
  return r;
}

long SolverConfig::snapshot_count() const { return static_cast<long>(std::floor(t_end / save_dt + 1e-9)) + 1; }

namespace {

// Per-grid wavenumber tables, reused across RHS evaluations on one thread.
struct Ops {
  explicit Ops(const GridSpec& g) : freq(g), mask(two_thirds_mask(freq)), ksq(freq.modes()) {
    const int d = g.dim;
    ik.assign(d, std::vector<cplx>(freq.modes()));
    for (std::size_t m = 0; m < freq.modes(); ++m) {
      ksq[m] = freq.wavenumber_sq(m);
      for (int a = 0; a < d; ++a) ik[a][m] = freq.nyquist(m, a) ? cplx(0.0) : cplx(0.0, freq.wavenumber(m, a));
    }
  }
  FreqGrid freq;
  std::vector<double> mask;
  std::vector<double> ksq;
  std::vector<std::vector<cplx>> ik;  // first-derivative multipliers per axis
};

const Ops& ops_for(const GridSpec& g) {
  thread_local std::vector<std::unique_ptr<Ops>> cache;
  for (const auto& op : cache)
    if (op->freq.grid() == g) return *op;
  cache.push_back(std::make_unique<Ops>(g));
  return *cache.back();
}

void inverse_into(const GridSpec& g, const std::vector<cplx>& spec, double* out, std::vector<cplx>& scratch) {
  fft::inverse_real(g, spec.data(), out, scratch.data());
}

// Physical-space derivative of a spectrum along `axis`.
void derivative(const Ops& ops, const std::vector<cplx>& hat, int axis, std::vector<cplx>& work, double* out,
                std::vector<cplx>& scratch) {
  const std::size_t n = hat.size();
  for (std::size_t m = 0; m < n; ++m) work[m] = ops.ik[axis][m] * hat[m];
  inverse_into(ops.freq.grid(), work, out, scratch);
}

void require_channels(const RealField& u, int channels, const char* what) {
  if (u.channels != channels) throw ValidationError(std::string(what) + ": unexpected channel count");
}

}  // namespace

RealField kse_rhs(const RealField& u, bool dealias) {
  require_channels(u, 1, "kse_rhs");
  const GridSpec& g = u.grid;
  const Ops& ops = ops_for(g);
  const std::size_t n = g.size();
  std::vector<cplx> hat(n), work(n), scratch(n);
  fft::forward(g, u.data.data(), hat.data());

  std::vector<double> grad_sq(n, 0.0), d(n);
  for (int a = 0; a < g.dim; ++a) {
    derivative(ops, hat, a, work, d.data(), scratch);
    for (std::size_t i = 0; i < n; ++i) grad_sq[i] += d[i] * d[i];
  }
  std::vector<cplx> nl(n);
  fft::forward(g, grad_sq.data(), nl.data());
  for (std::size_t m = 0; m < n; ++m) {
    const double k2 = ops.ksq[m];
    const double keep = dealias ? ops.mask[m] : 1.0;
    // -lap u - lap^2 u -> (k^2 - k^4) u_hat
    work[m] = (k2 - k2 * k2) * hat[m] - 0.5 * keep * nl[m];
  }
  RealField out(g, 1);
  inverse_into(g, work, out.data.data(), scratch);
  return out;
}

Velocity biot_savart(const SpectralField& omega) {
  if (omega.grid.dim != 2 || omega.channels != 1) throw ValidationError("biot_savart needs a single-channel 2D field");
  const FreqGrid freq(omega.grid);
  Velocity v{SpectralField(omega.grid, 1), SpectralField(omega.grid, 1)};
  for (std::size_t m = 0; m < freq.modes(); ++m) {
    const double k2 = freq.wavenumber_sq(m);
    if (k2 == 0.0) continue;
    const double kx = freq.wavenumber(m, 0);
    const double ky = freq.wavenumber(m, 1);
    const cplx w = omega.coeffs[m];
    // u = (psi_y, -psi_x) with lap psi = -omega, so curl u = omega under the
    // e^{+ikx} synthesis convention. Odd multipliers vanish on Nyquist lines.
    if (!freq.nyquist(m, 1)) v.ux.coeffs[m] = cplx(0.0, ky / k2) * w;
    if (!freq.nyquist(m, 0)) v.uy.coeffs[m] = cplx(0.0, -kx / k2) * w;
  }
  return v;
}

RealField forcing_field(const GridSpec& grid, Forcing forcing) {
  RealField f(grid, 1);
  if (forcing == Forcing::none) return f;
  if (grid.dim != 2) throw ValidationError("forcing is defined on 2D grids");
  const int nx = grid.points[0];
  const int ny = grid.points[1];
  const double pi = std::numbers::pi;
  for (int i = 0; i < nx; ++i) {
    const double x1 = grid.length[0] * i / nx;
    for (int j = 0; j < ny; ++j) {
      const double x2 = grid.length[1] * j / ny;
      double v = 0.0;
      if (forcing == Forcing::f1) v = 0.1 * std::cos(8.0 * pi * x1);
      else v = 0.1 * std::numbers::sqrt2 * std::sin(2.0 * pi * (x1 + x2) + pi / 4.0);
      f.data[static_cast<std::size_t>(i) * ny + j] = v;
    }
  }
  return f;
}

RealField nse_rhs(const RealField& omega, const PDESpec& spec, bool dealias) {
  if (spec.kind != PdeKind::nse) throw ValidationError("nse_rhs called with non-NSE spec");
  require_channels(omega, 1, "nse_rhs");
  const GridSpec& g = omega.grid;
  if (g.dim != 2) throw ValidationError("NSE is two dimensional");
  const Ops& ops = ops_for(g);
  const std::size_t n = g.size();
  std::vector<cplx> hat(n), work(n), scratch(n);
  fft::forward(g, omega.data.data(), hat.data());

  std::vector<double> ux(n), uy(n), wx(n), wy(n);
  // Same multipliers as biot_savart: (psi_y, -psi_x) with lap psi = -omega.
  for (std::size_t m = 0; m < n; ++m) {
    const double k2 = ops.ksq[m];
    work[m] = k2 == 0.0 ? cplx(0.0) : ops.ik[1][m] / k2 * hat[m];
  }
  inverse_into(g, work, ux.data(), scratch);
  for (std::size_t m = 0; m < n; ++m) {
    const double k2 = ops.ksq[m];
    work[m] = k2 == 0.0 ? cplx(0.0) : -ops.ik[0][m] / k2 * hat[m];
  }
  inverse_into(g, work, uy.data(), scratch);
  derivative(ops, hat, 0, work, wx.data(), scratch);
  derivative(ops, hat, 1, work, wy.data(), scratch);

  std::vector<double> conv(n);
  for (std::size_t i = 0; i < n; ++i) conv[i] = ux[i] * wx[i] + uy[i] * wy[i];
  std::vector<cplx> conv_hat(n);
  fft::forward(g, conv.data(), conv_hat.data());
  for (std::size_t m = 0; m < n; ++m) {
    const double keep = dealias ? ops.mask[m] : 1.0;
    work[m] = -spec.nu * ops.ksq[m] * hat[m] - keep * conv_hat[m];
  }
  RealField out(g, 1);
  inverse_into(g, work, out.data.data(), scratch);
  if (spec.forcing != Forcing::none) axpy(out, 1.0, forcing_field(g, spec.forcing));
  return out;
}

RealField burgers_rhs(const RealField& u, const PDESpec& spec, bool dealias) {
  const int d = u.grid.dim;
  require_channels(u, d, "burgers_rhs");
  const GridSpec& g = u.grid;
  const Ops& ops = ops_for(g);
  const std::size_t n = g.size();
  std::vector<std::vector<cplx>> hat(d, std::vector<cplx>(n));
  for (int c = 0; c < d; ++c) fft::forward(g, u.channel(c).data(), hat[c].data());

  std::vector<cplx> work(n), scratch(n), conv_hat(n);
  std::vector<double> conv(n), du(n);
  RealField out(g, d);
  for (int c = 0; c < d; ++c) {
    std::fill(conv.begin(), conv.end(), 0.0);
    for (int j = 0; j < d; ++j) {
      derivative(ops, hat[c], j, work, du.data(), scratch);
      auto uj = u.channel(j);
      for (std::size_t i = 0; i < n; ++i) conv[i] += uj[i] * du[i];
    }
    fft::forward(g, conv.data(), conv_hat.data());
    for (std::size_t m = 0; m < n; ++m) {
      const double keep = dealias ? ops.mask[m] : 1.0;
      work[m] = -spec.nu * ops.ksq[m] * hat[c][m] - keep * conv_hat[m];
    }
    inverse_into(g, work, out.channel(c).data(), scratch);
  }
  return out;
}

RealField heat_rhs(const RealField& u, const PDESpec& spec) {
  require_channels(u, 1, "heat_rhs");
  const GridSpec& g = u.grid;
  const Ops& ops = ops_for(g);
  const std::size_t n = g.size();
  std::vector<cplx> hat(n), scratch(n);
  fft::forward(g, u.data.data(), hat.data());
  for (std::size_t m = 0; m < n; ++m) hat[m] *= -spec.nu * ops.ksq[m];
  RealField out(g, 1);
  inverse_into(g, hat, out.data.data(), scratch);
  return out;
}

RealField pde_rhs(const RealField& u, const PDESpec& spec, bool dealias) {
  switch (spec.kind) {
    case PdeKind::kse: return kse_rhs(u, dealias);
    case PdeKind::nse: return nse_rhs(u, spec, dealias);
    case PdeKind::burgers: return burgers_rhs(u, spec, dealias);
    case PdeKind::heat: return heat_rhs(u, spec);
  }
  throw ValidationError("unknown PDE kind");
}

RealField rk4_step(const Rhs& rhs, const RealField& u, double dt) {
  if (!(dt > 0.0)) throw ValidationError("rk4_step needs dt > 0");
  auto checked = [](RealField k, int stage) {
    if (!k.all_finite()) throw NonFinite("RK4 stage " + std::to_string(stage));
    return k;
  };
  const RealField k1 = checked(rhs(u), 1);
  const RealField k2 = checked(rhs(add_scaled(u, 0.5 * dt, k1)), 2);
  const RealField k3 = checked(rhs(add_scaled(u, 0.5 * dt, k2)), 3);
  const RealField k4 = checked(rhs(add_scaled(u, dt, k3)), 4);
  RealField out = u;
  const std::size_t n = out.data.size();
  for (std::size_t i = 0; i < n; ++i)
    out.data[i] += dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
  if (!out.all_finite()) throw NonFinite("RK4 update");
  return out;
}

namespace {

// Lawson RK4 for u_t = L u + N(u) with L = k^2 - k^4 handled exactly.
RealField kse_if_rk4_step(const RealField& u, double dt, bool dealias) {
  const GridSpec& g = u.grid;
  const Ops& ops = ops_for(g);
  const std::size_t n = g.size();
  std::vector<double> e_half(n), e_full(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double k2 = ops.ksq[m];
    const double l = k2 - k2 * k2;
    e_half[m] = std::exp(0.5 * dt * l);
    e_full[m] = std::exp(dt * l);
  }
  // Nonlinear part only: -0.5 |grad u|^2, computed via kse_rhs minus its linear part.
  auto nonlinear_hat = [&](const std::vector<cplx>& vhat) {
    SpectralField s(g, 1);
    s.coeffs = vhat;
    const RealField v = inverse_transform(s);
    const RealField full = kse_rhs(v, dealias);
    std::vector<cplx> out(n);
    fft::forward(g, full.data.data(), out.data());
    for (std::size_t m = 0; m < n; ++m) {
      const double k2 = ops.ksq[m];
      out[m] -= (k2 - k2 * k2) * vhat[m];
    }
    return out;
  };
  std::vector<cplx> uh(n);
  fft::forward(g, u.data.data(), uh.data());
  const auto a = nonlinear_hat(uh);
  std::vector<cplx> s2(n), s3(n), s4(n), next(n);
  for (std::size_t m = 0; m < n; ++m) s2[m] = e_half[m] * (uh[m] + 0.5 * dt * a[m]);
  const auto b = nonlinear_hat(s2);
  for (std::size_t m = 0; m < n; ++m) s3[m] = e_half[m] * uh[m] + 0.5 * dt * b[m];
  const auto c = nonlinear_hat(s3);
  for (std::size_t m = 0; m < n; ++m) s4[m] = e_full[m] * uh[m] + dt * e_half[m] * c[m];
  const auto d = nonlinear_hat(s4);
  for (std::size_t m = 0; m < n; ++m)
    next[m] = e_full[m] * uh[m] + dt / 6.0 * (e_full[m] * a[m] + 2.0 * e_half[m] * (b[m] + c[m]) + d[m]);
  SpectralField s(g, 1);
  s.coeffs = std::move(next);
  RealField out = inverse_transform(s);
  if (!out.all_finite()) throw NonFinite("integrating-factor RK4 update");
  return out;
}

}  // namespace

std::vector<RealField> integrate(const PDESpec& spec, const SolverConfig& cfg, const RealField& ic) {
  spec.validate();
  cfg.validate();
  ic.validate();
  if (ic.channels != spec.channels() || ic.grid.dim != spec.dim)
    throw ValidationError("initial condition does not match PDE channels/dim");
  const long per_save = cfg.steps_per_save();
  const long n_snap = cfg.snapshot_count();
  const bool use_if = cfg.integrating_factor && spec.kind == PdeKind::kse;
  const Rhs rhs = [&](const RealField& u) { return pde_rhs(u, spec, cfg.dealias); };

  std::vector<RealField> snaps;
  snaps.reserve(n_snap);
  snaps.push_back(ic);
  RealField u = ic;
  long step = 0;
  for (long s = 1; s < n_snap; ++s) {
    for (long i = 0; i < per_save; ++i, ++step) {
      try {
        u = use_if ? kse_if_rk4_step(u, cfg.dt, cfg.dealias) : rk4_step(rhs, u, cfg.dt);
      } catch (const NonFinite& e) {
        throw NonFinite(std::string(e.what()) + " at t=" + std::to_string(step * cfg.dt), step * cfg.dt, step);
      }
    }
    snaps.push_back(u);
  }
  return snaps;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::synthetic: return "synthetic";
  }
  return "unknown";
}

Split split_from_string(const std::string& s) {
  for (auto v : {Split::train, Split::val, Split::test, Split::synthetic})
    if (s == to_string(v)) return v;
  throw ValidationError("unknown split '" + s + "'");
}

std::uint64_t split_seed(Split s) {
  switch (s) {
    case Split::train: return 0;
    case Split::val: return 1;
    case Split::test: return 2;
    case Split::synthetic: return 1000;
  }
  return 0;
}

std::uint64_t trajectory_seed(std::uint64_t split, std::uint64_t index) {
  return splitmix64(splitmix64(split) ^ (index + 1));
}

RealField random_initial_condition(const PDESpec& spec, const GridSpec& grid, std::uint64_t seed,
                                   const GrfParams& grf) {
  const int c = spec.channels();
  RealField ic(grid, c);
  for (int ch = 0; ch < c; ++ch) {
    const RealField f = grf_sample(grid, splitmix64(seed + static_cast<std::uint64_t>(ch)), grf);
    std::copy(f.data.begin(), f.data.end(), ic.channel(ch).begin());
  }
  return ic;
}

int thread_budget() {
  if (const char* env = std::getenv("SINO_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

TrajectoryDataset generate_dataset(const GenerateRequest& req) {
  req.pde.validate();
  req.solver.validate();
  req.generation_grid.validate();
  req.training_grid.validate();
  if (!req.generation_grid.commensurate(req.training_grid))
    throw IncompatibleDomain("generation and training grids must share domain lengths");

  TrajectoryDataset ds;
  ds.grid = req.training_grid;
  ds.channels = req.pde.channels();
  ds.save_dt = req.solver.save_dt;
  ds.meta = DatasetMeta{req.pde, req.solver, req.generation_grid, {}, req.split};
  ds.trajectories.resize(req.n_traj);
  for (std::size_t i = 0; i < req.n_traj; ++i) ds.meta.seeds.push_back(trajectory_seed(req.split_seed, i));

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(req.n_traj);
  auto worker = [&] {
    for (std::size_t i = next++; i < req.n_traj; i = next++) {
      try {
        const RealField ic = random_initial_condition(req.pde, req.generation_grid, ds.meta.seeds[i], req.grf);
        auto snaps = integrate(req.pde, req.solver, ic);
        for (auto& s : snaps) s = spectral_resample(s, req.training_grid);
        ds.trajectories[i] = std::move(snaps);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(req.threads > 0 ? req.threads : thread_budget(),
                                                static_cast<int>(std::max<std::size_t>(req.n_traj, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < req.n_traj; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (trajectory " + std::to_string(i) + ", seed " +
                                std::to_string(ds.meta.seeds[i]) + ")");
    }
  }
  return ds;
}

}  // namespace sino::solver
