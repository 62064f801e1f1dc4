#pragma once

// Pseudo-spectral right-hand sides for the benchmark PDEs, classical RK4
// stepping, and trajectory dataset generation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sino/spectral.hpp"

namespace sino::solver {

enum class PdeKind { kse, nse, burgers, heat };
enum class Forcing { none, f1, f2 };

std::string to_string(PdeKind k);
std::string to_string(Forcing f);
PdeKind pde_kind_from_string(const std::string& s);
Forcing forcing_from_string(const std::string& s);

struct PDESpec {
  PdeKind kind = PdeKind::burgers;
  double nu = 0.01;
  Forcing forcing = Forcing::none;
  int dim = 2;

  int channels() const { return kind == PdeKind::burgers ? dim : 1; }
  void validate() const;
};

struct SolverConfig {
  double dt = 1e-3;
  double t_end = 1.0;
  double save_dt = 1e-2;
  bool dealias = true;
  /// Exact exponential treatment of the linear KSE terms (Lawson RK4).
  bool integrating_factor = false;

  void validate() const;
  /// Solver steps between snapshots; throws unless save_dt/dt is an integer.
  long steps_per_save() const;
  long snapshot_count() const;
};

using Rhs = std::function<RealField(const RealField&)>;

RealField kse_rhs(const RealField& u, bool dealias = true);

struct Velocity {
  SpectralField ux;
  SpectralField uy;
};

/// Velocity (psi_y, -psi_x) with lap psi = -omega, so curl u = omega:
/// u_hat = i (k_y, -k_x) / |k|^2 omega_hat. The mean mode and the odd
/// multipliers on Nyquist lines are zero.
Velocity biot_savart(const SpectralField& omega);

/// Time-independent NSE forcing sampled on the grid (zero field for none).
RealField forcing_field(const GridSpec& grid, Forcing forcing);

RealField nse_rhs(const RealField& omega, const PDESpec& spec, bool dealias = true);
RealField burgers_rhs(const RealField& u, const PDESpec& spec, bool dealias = true);
/// nu lap(u); a linear sanity case for operator recovery.
RealField heat_rhs(const RealField& u, const PDESpec& spec);

/// Dispatches on spec.kind.
RealField pde_rhs(const RealField& u, const PDESpec& spec, bool dealias = true);

/// Classical RK4; throws NonFinite if a stage goes non-finite.
RealField rk4_step(const Rhs& rhs, const RealField& u, double dt);

/// Snapshots at t = 0, save_dt, 2 save_dt, ... up to t_end.
std::vector<RealField> integrate(const PDESpec& spec, const SolverConfig& cfg, const RealField& ic);

enum class Split { train, val, test, synthetic };
std::string to_string(Split s);
Split split_from_string(const std::string& s);
/// Split seeds: train 0, val 1, test 2.
std::uint64_t split_seed(Split s);
/// Per-trajectory initial-condition seed derived from (split seed, index).
std::uint64_t trajectory_seed(std::uint64_t split_seed, std::uint64_t index);

struct DatasetMeta {
  PDESpec pde;
  SolverConfig solver;
  GridSpec generation_grid;
  std::vector<std::uint64_t> seeds;
  Split split = Split::train;
};

struct TrajectoryDataset {
  GridSpec grid;
  int channels = 0;
  double save_dt = 0.0;
  std::vector<std::vector<RealField>> trajectories;
  DatasetMeta meta;

  std::size_t snapshots_per_trajectory() const { return trajectories.empty() ? 0 : trajectories.front().size(); }
};

/// Initial condition: one independent GRF per channel.
RealField random_initial_condition(const PDESpec& spec, const GridSpec& grid, std::uint64_t seed, const GrfParams& grf);

struct GenerateRequest {
  PDESpec pde;
  SolverConfig solver;
  GridSpec generation_grid;
  GridSpec training_grid;
  GrfParams grf;
  std::size_t n_traj = 1;
  std::uint64_t split_seed = 0;
  Split split = Split::train;
  /// Worker threads for independent trajectories (<= 0 means SINO_THREADS or 1).
  int threads = 0;
};

TrajectoryDataset generate_dataset(const GenerateRequest& req);

/// Worker count from SINO_THREADS, defaulting to 1.
int thread_budget();

}  // namespace sino::solver
