#pragma once

// SINO forward pass and its reverse-mode adjoint.
//
//   u --FFT--> u_hat --psi_j(k)--> IFFT --> d (c_in*K channels)      spectral learning block
//   d --1x1--> linear branch (C channels)
//   d --P x 1x1--> elementwise product --2/3 low-pass--> nonlinear branch (C channels)
//   [linear | nonlinear] --1x1--> du/dt (c_in channels), advanced with RK4 (or Euler)
//
// psi(k) comes from a shared MLP over the normalised frequency index (or from
// a free table when the freq2vec ablation is active) and is Hermitian
// symmetrised so real inputs give real features.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sino/spectral.hpp"

namespace sino::model {

enum class Activation { tanh, gelu, relu };
enum class Combine { concat, sum };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Ablation {
  bool no_pi = false;
  bool no_filter = false;
  bool no_freq2vec = false;
  bool no_linear = false;
  bool euler_time = false;

  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  int c_in = 1;
  int K = 8;
  int C = 32;
  int P = 2;
  std::vector<int> mlp_hidden{64, 64};
  Activation activation = Activation::gelu;
  double dt_model = 5e-3;
  /// Native (training) grid. Freq2Vec inputs are integer indices divided by
  /// native N_i/2, so the same physical mode sees the same input on any
  /// commensurate grid.
  GridSpec grid;
  Ablation ablation;
  Combine combine = Combine::concat;

  void validate() const;
  int dim() const { return grid.dim; }
  int slb_channels() const { return c_in * K; }
  int pi_factors() const { return ablation.no_pi ? 1 : P; }
  int out_inputs() const { return (ablation.no_linear || combine == Combine::sum) ? C : 2 * C; }
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

/// y = W x + b over channels; weight is [out, in].
struct Affine {
  Tensor weight;
  Tensor bias;

  Affine() = default;
  Affine(std::size_t out, std::size_t in) : weight({out, in}), bias({out}) {}
  std::size_t out() const { return weight.shape.empty() ? 0 : weight.shape[0]; }
  std::size_t in() const { return weight.shape.size() < 2 ? 0 : weight.shape[1]; }
};

struct SinoParams {
  std::vector<Affine> freq2vec;  // MLP layers (empty with no_freq2vec)
  Tensor table;                  // [K, modes, 2] raw multipliers with no_freq2vec
  std::vector<Affine> pi;        // P factor maps (one with no_pi)
  Affine linear;                 // empty with no_linear
  Affine out;
};

/// Visits every non-empty tensor with a stable name, e.g. "pi.1.weight".
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  auto visit_affine = [&](const std::string& prefix, auto& a) {
    if (!a.weight.empty()) fn(prefix + ".weight", a.weight);
    if (!a.bias.empty()) fn(prefix + ".bias", a.bias);
  };
  for (std::size_t i = 0; i < p.freq2vec.size(); ++i) visit_affine("freq2vec." + std::to_string(i), p.freq2vec[i]);
  if (!p.table.empty()) fn(std::string("freq2vec.table"), p.table);
  for (std::size_t i = 0; i < p.pi.size(); ++i) visit_affine("pi." + std::to_string(i), p.pi[i]);
  visit_affine("linear", p.linear);
  visit_affine("out", p.out);
}

/// Correctly shaped, all-zero parameters.
SinoParams zero_params(const ModelConfig& cfg);
SinoParams zeros_like(const SinoParams& p);
/// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero; deterministic per seed.
SinoParams init_params(const ModelConfig& cfg, std::uint64_t seed);
std::size_t count_params(const ModelConfig& cfg);
std::size_t count_params(const SinoParams& p);
/// Throws ValidationError unless the tensor shapes match the config.
void check_shapes(const SinoParams& p, const ModelConfig& cfg);

/// psi evaluated on one grid: K complex values per mode, Hermitian symmetrised.
struct MultiplierTable {
  GridSpec grid;
  int K = 0;
  std::vector<cplx> values;  // [K, modes]

  std::size_t modes() const { return grid.size(); }
  std::span<const cplx> row(int j) const { return {values.data() + j * modes(), modes()}; }
};

/// psi~(k) = (psi(k) + conj(psi(-k))) / 2, applied row-wise. Self-adjoint.
void hermitian_symmetrize(const FreqGrid& freq, int K, std::span<cplx> values);

/// Cached activations of the Freq2Vec MLP for the backward pass.
struct Freq2VecTape {
  std::vector<std::vector<double>> inputs;  // input to each layer, [modes, width]
  std::vector<std::vector<double>> pre;     // pre-activation of each hidden layer
};

/// Normalised MLP input for every mode: index_i / (native N_i / 2).
std::vector<double> freq2vec_inputs(const ModelConfig& cfg, const FreqGrid& freq);

MultiplierTable freq2vec_eval(const SinoParams& params, const ModelConfig& cfg, const FreqGrid& freq,
                              Freq2VecTape* tape = nullptr);

/// Accumulates parameter gradients from the cotangent of the symmetrised table.
void freq2vec_backward(const SinoParams& params, const ModelConfig& cfg, const FreqGrid& freq,
                       const Freq2VecTape& tape, std::span<const cplx> table_bar, SinoParams& grads);

RealField slb_apply(const RealField& u, const MultiplierTable& table);

/// Product of affine factors followed by the 2/3 low-pass (unless no_filter).
RealField pi_block(const RealField& d, const SinoParams& params, const ModelConfig& cfg);

struct RhsTape {
  std::vector<cplx> u_hat;         // [c_in, modes]
  std::vector<double> d;           // [c_in*K, points]
  std::vector<std::vector<double>> factors;  // P x [C, points]
  std::vector<double> z;           // input of the output map
};

struct StepTape {
  std::vector<RhsTape> stages;
};

/// Evaluation context: caches the frequency grid, low-pass mask and the
/// multiplier table for one (params, grid) pair. Not shared across threads
/// while a backward pass accumulates into it.
class Evaluator {
 public:
  Evaluator(const SinoParams& params, const ModelConfig& cfg, const GridSpec& grid, bool keep_tape = false);

  const MultiplierTable& table() const { return table_; }
  const GridSpec& grid() const { return freq_.grid(); }

  RealField rhs(const RealField& u, RhsTape* tape = nullptr) const;
  RealField step(const RealField& u, StepTape* tape = nullptr) const;

  /// Reverse pass of rhs: returns dL/du and accumulates into grads/table_bar.
  RealField rhs_backward(const RhsTape& tape, const RealField& out_bar, SinoParams& grads,
                         std::vector<cplx>& table_bar) const;
  RealField step_backward(const StepTape& tape, const RealField& next_bar, SinoParams& grads,
                          std::vector<cplx>& table_bar) const;
  /// Pushes the accumulated table cotangent into the Freq2Vec parameters.
  void table_backward(std::span<const cplx> table_bar, SinoParams& grads) const;

  std::map<std::string, RealField> features(const RealField& u) const;

 private:
  const SinoParams* params_;
  const ModelConfig* cfg_;
  FreqGrid freq_;
  std::vector<double> mask_;
  MultiplierTable table_;
  Freq2VecTape f2v_tape_;
};

RealField rhs_eval(const RealField& u, const SinoParams& params, const ModelConfig& cfg);
RealField model_step(const RealField& u, const SinoParams& params, const ModelConfig& cfg);

/// Iterates model_step; snapshots every `record_every` steps (and u0). Throws
/// NonFinite carrying the failing step index.
std::vector<RealField> rollout(const RealField& u0, const SinoParams& params, const ModelConfig& cfg, long n_steps,
                               long record_every = 1);

/// SLB channels, pre-filter product channels and linear-branch channels.
std::map<std::string, RealField> dump_features(const RealField& u, const SinoParams& params, const ModelConfig& cfg);

/// A model whose right-hand side is exactly nu*lap(u) - (u.grad)u on bandlimited
/// fields: multipliers {1, i k_a, -|k|^2} realised by a one-hidden-layer ReLU
/// MLP that interpolates |k|^2 exactly at every integer index up to
/// `coverage` times the native Nyquist index.
struct ConstructedModel {
  ModelConfig cfg;
  SinoParams params;
};
ConstructedModel burgers_exact_model(const GridSpec& grid, double nu, double dt_model, int coverage = 2);

}  // namespace sino::model
