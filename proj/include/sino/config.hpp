#pragma once

// Experiment configuration: JSON with comments, strict keys, canonical
// sorted-key serialisation (which also defines the config hash), and the
// E1-E7 presets at full and desk scale.

#include <filesystem>
#include <string>
#include <vector>

#include "sino/model.hpp"
#include "sino/solvers.hpp"
#include "sino/training.hpp"

namespace sino::config {

struct ExperimentConfig {
  std::string case_id = "custom";
  std::string scale = "custom";  // full, desk or custom
  solver::PDESpec pde;
  GridSpec generation_grid;
  GridSpec training_grid;
  /// Generation settings; t_end is the train/val horizon.
  solver::SolverConfig solver;
  /// Test trajectories run to this time (<= 0: solver.t_end).
  double test_t_end = 0.0;
  GrfParams grf;
  std::size_t n_train = 2;
  std::size_t n_val = 2;
  std::size_t n_test = 5;
  /// grid and c_in are derived from training_grid and pde on load.
  model::ModelConfig model;
  train::TrainConfig train;
  /// Evaluation horizon in seconds (<= 0: whole test trajectory).
  double eval_horizon = 0.0;
  /// Extra zero-shot evaluation on a grid this many times finer (0: off).
  int superres_factor = 0;
  std::string out_dir = "runs/custom";

  void validate() const;
  double test_horizon() const { return test_t_end > 0.0 ? test_t_end : solver.t_end; }
  /// Solver settings for one split.
  solver::SolverConfig solver_for(solver::Split s) const;
};

std::vector<std::string> preset_names();
/// Throws ValidationError for an unknown id.
ExperimentConfig preset(const std::string& id, bool desk);

/// Parses JSON (comments allowed) over `base`: keys present in the text
/// replace those in base, unknown keys are errors.
ExperimentConfig parse(const std::string& text, const ExperimentConfig& base = {}, const std::string& what = "config");
ExperimentConfig load(const std::filesystem::path& path, const ExperimentConfig& base = {});

/// Sorted keys, no insignificant whitespace, without the output directory.
std::string canonical(const ExperimentConfig& cfg);
/// Indented, for writing to disk.
std::string pretty(const ExperimentConfig& cfg);
/// FNV-1a 64 of the canonical text, 16 hex digits.
std::string hash(const ExperimentConfig& cfg);

}  // namespace sino::config
