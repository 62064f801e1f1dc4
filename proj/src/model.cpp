#include "sino/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sino/error.hpp"
#include "sino/field_ops.hpp"

namespace sino::model {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
  }
  return "gelu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  throw ValidationError("unknown activation '" + s + "'");
}

void ModelConfig::validate() const {
  grid.validate();
  if (c_in < 1) throw ValidationError("model c_in must be >= 1");
  if (K < 1) throw ValidationError("model K must be >= 1");
  if (C < 1) throw ValidationError("model C must be >= 1");
  if (!ablation.no_pi && P < 2) throw ValidationError("model P must be >= 2 unless no_pi");
  if (!(dt_model > 0.0)) throw ValidationError("model dt must be positive");
  for (int h : mlp_hidden)
    if (h < 1) throw ValidationError("MLP hidden widths must be positive");
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto v : shape) n *= v;
  data.assign(n, 0.0);
}

SinoParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  SinoParams p;
  const std::size_t dk = static_cast<std::size_t>(cfg.slb_channels());
  const std::size_t C = static_cast<std::size_t>(cfg.C);
  if (cfg.ablation.no_freq2vec) {
    p.table = Tensor({static_cast<std::size_t>(cfg.K), cfg.grid.size(), 2});
  } else {
    std::size_t in = static_cast<std::size_t>(cfg.dim());
    for (int h : cfg.mlp_hidden) {
      p.freq2vec.emplace_back(static_cast<std::size_t>(h), in);
      in = static_cast<std::size_t>(h);
    }
    p.freq2vec.emplace_back(2 * static_cast<std::size_t>(cfg.K), in);
  }
  for (int i = 0; i < cfg.pi_factors(); ++i) p.pi.emplace_back(C, dk);
  if (!cfg.ablation.no_linear) p.linear = Affine(C, dk);
  p.out = Affine(static_cast<std::size_t>(cfg.c_in), static_cast<std::size_t>(cfg.out_inputs()));
  return p;
}

SinoParams zeros_like(const SinoParams& p) {
  SinoParams z = p;
  for_each_tensor(z, [](const std::string&, Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
  return z;
}

SinoParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  SinoParams p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& t, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data) v = dist(rng);
  };
  for (auto& layer : p.freq2vec) fill(layer.weight, layer.in(), layer.out());
  if (!p.table.empty()) fill(p.table, cfg.dim(), 2.0 * cfg.K);
  for (auto& f : p.pi) fill(f.weight, f.in(), f.out());
  if (!p.linear.weight.empty()) fill(p.linear.weight, p.linear.in(), p.linear.out());
  fill(p.out.weight, p.out.in(), p.out.out());
  return p;
}

std::size_t count_params(const SinoParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&n](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  auto affine = [](std::size_t out, std::size_t in) { return out * in + out; };
  std::size_t n = 0;
  const std::size_t dk = cfg.slb_channels();
  if (cfg.ablation.no_freq2vec) {
    n += static_cast<std::size_t>(cfg.K) * cfg.grid.size() * 2;
  } else {
    std::size_t in = cfg.dim();
    for (int h : cfg.mlp_hidden) {
      n += affine(h, in);
      in = h;
    }
    n += affine(2 * cfg.K, in);
  }
  n += cfg.pi_factors() * affine(cfg.C, dk);
  if (!cfg.ablation.no_linear) n += affine(cfg.C, dk);
  n += affine(cfg.c_in, cfg.out_inputs());
  return n;
}

void check_shapes(const SinoParams& p, const ModelConfig& cfg) {
  std::map<std::string, std::vector<std::size_t>> want;
  const SinoParams ref = zero_params(cfg);
  for_each_tensor(ref, [&want](const std::string& name, const Tensor& t) { want[name] = t.shape; });
  std::map<std::string, std::vector<std::size_t>> have;
  for_each_tensor(p, [&have](const std::string& name, const Tensor& t) { have[name] = t.shape; });
  if (want != have) throw ValidationError("parameter tensors do not match the model config");
  for_each_tensor(p, [](const std::string& name, const Tensor& t) {
    for (double v : t.data)
      if (!std::isfinite(v)) throw NonFinite("parameter " + name);
  });
}

void hermitian_symmetrize(const FreqGrid& freq, int K, std::span<cplx> values) {
  const std::size_t n = freq.modes();
  std::vector<cplx> row(n);
  for (int j = 0; j < K; ++j) {
    cplx* r = values.data() + j * n;
    for (std::size_t m = 0; m < n; ++m) row[m] = 0.5 * (r[m] + std::conj(r[freq.negated(m)]));
    std::copy(row.begin(), row.end(), r);
  }
}

namespace {

double act(Activation a, double x) {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

double act_grad(Activation a, double x) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * pdf;
    }
  }
  return 1.0;
}

// Y[rows, out] = X[rows, in] W^T + b
std::vector<double> dense_rows(const Affine& layer, const std::vector<double>& x, std::size_t rows) {
  const std::size_t in = layer.in(), out = layer.out();
  std::vector<double> wt(in * out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = layer.weight.data[o * in + i];
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out;
    std::copy(layer.bias.data.begin(), layer.bias.data.end(), yr);
    const double* xr = x.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wi = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += wi[o] * xi;
    }
  }
  return y;
}

// Accumulates dW, db and returns dX for dense_rows.
std::vector<double> dense_rows_backward(const Affine& layer, const std::vector<double>& x, const std::vector<double>& gy,
                                        std::size_t rows, Affine& grad) {
  const std::size_t in = layer.in(), out = layer.out();
  std::vector<double> gx(rows * in, 0.0);
  std::vector<double> gw(out * in, 0.0);  // [out, in]
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = gy.data() + r * out;
    const double* xr = x.data() + r * in;
    double* gxr = gx.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double go = g[o];
      grad.bias.data[o] += go;
      if (go == 0.0) continue;
      double* gwo = gw.data() + o * in;
      const double* wo = layer.weight.data.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gwo[i] += go * xr[i];
        gxr[i] += go * wo[i];
      }
    }
  }
  for (std::size_t k = 0; k < gw.size(); ++k) grad.weight.data[k] += gw[k];
  return gx;
}

// y[out, n] = W d[in, n] + b, per grid point.
void channel_map(const Affine& a, const double* x, std::size_t n, double* y) {
  const std::size_t in = a.in(), out = a.out();
  for (std::size_t o = 0; o < out; ++o) {
    double* yo = y + o * n;
    const double b = a.bias.data[o];
    for (std::size_t p = 0; p < n; ++p) yo[p] = b;
    for (std::size_t i = 0; i < in; ++i) {
      const double w = a.weight.data[o * in + i];
      if (w == 0.0) continue;
      const double* xi = x + i * n;
      for (std::size_t p = 0; p < n; ++p) yo[p] += w * xi[p];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Adjoint of channel_map: accumulates dW, db into grad and dx into x_bar.
void channel_map_backward(const Affine& a, const double* x, const double* y_bar, std::size_t n, Affine& grad,
                          double* x_bar) {
  const std::size_t in = a.in(), out = a.out();
  for (std::size_t o = 0; o < out; ++o) {
    const double* go = y_bar + o * n;
    double sb = 0.0;
    for (std::size_t p = 0; p < n; ++p) sb += go[p];
    grad.bias.data[o] += sb;
    for (std::size_t i = 0; i < in; ++i) {
      grad.weight.data[o * in + i] += dot(go, x + i * n, n);
      const double w = a.weight.data[o * in + i];
      if (w == 0.0) continue;
      double* xb = x_bar + i * n;
      for (std::size_t p = 0; p < n; ++p) xb[p] += w * go[p];
    }
  }
}

void check_input(const RealField& u, const ModelConfig& cfg, const GridSpec& grid) {
  if (u.channels != cfg.c_in) throw ValidationError("model input has wrong channel count");
  if (!(u.grid == grid)) throw ValidationError("model input grid differs from the evaluation grid");
}

}  // namespace

std::vector<double> freq2vec_inputs(const ModelConfig& cfg, const FreqGrid& freq) {
  const int d = freq.dim();
  std::vector<double> x(freq.modes() * d);
  for (std::size_t m = 0; m < freq.modes(); ++m)
    for (int a = 0; a < d; ++a) x[m * d + a] = freq.index(m, a) / (0.5 * cfg.grid.points[a]);
  return x;
}

MultiplierTable freq2vec_eval(const SinoParams& params, const ModelConfig& cfg, const FreqGrid& freq,
                              Freq2VecTape* tape) {
  if (!freq.grid().commensurate(cfg.grid)) throw IncompatibleDomain("evaluation grid is not commensurate with the model grid");
  MultiplierTable table;
  table.grid = freq.grid();
  table.K = cfg.K;
  const std::size_t n = freq.modes();
  table.values.assign(static_cast<std::size_t>(cfg.K) * n, cplx(0.0));

  if (cfg.ablation.no_freq2vec) {
    if (!(freq.grid() == cfg.grid)) throw IncompatibleDomain("a free multiplier table is bound to its native grid");
    for (int j = 0; j < cfg.K; ++j)
      for (std::size_t m = 0; m < n; ++m) {
        const std::size_t at = (j * n + m) * 2;
        table.values[j * n + m] = cplx(params.table.data[at], params.table.data[at + 1]);
      }
  } else {
    std::vector<double> x = freq2vec_inputs(cfg, freq);
    if (tape) {
      tape->inputs.clear();
      tape->pre.clear();
    }
    const std::size_t layers = params.freq2vec.size();
    for (std::size_t l = 0; l < layers; ++l) {
      if (tape) tape->inputs.push_back(x);
      std::vector<double> y = dense_rows(params.freq2vec[l], x, n);
      if (l + 1 < layers) {
        if (tape) tape->pre.push_back(y);
        for (double& v : y) v = act(cfg.activation, v);
      }
      x = std::move(y);
    }
    for (int j = 0; j < cfg.K; ++j)
      for (std::size_t m = 0; m < n; ++m) table.values[j * n + m] = cplx(x[m * 2 * cfg.K + 2 * j], x[m * 2 * cfg.K + 2 * j + 1]);
  }
  hermitian_symmetrize(freq, cfg.K, table.values);
  return table;
}

void freq2vec_backward(const SinoParams& params, const ModelConfig& cfg, const FreqGrid& freq,
                       const Freq2VecTape& tape, std::span<const cplx> table_bar, SinoParams& grads) {
  const std::size_t n = freq.modes();
  std::vector<cplx> raw(table_bar.begin(), table_bar.end());
  hermitian_symmetrize(freq, cfg.K, raw);

  if (cfg.ablation.no_freq2vec) {
    for (int j = 0; j < cfg.K; ++j)
      for (std::size_t m = 0; m < n; ++m) {
        const std::size_t at = (j * n + m) * 2;
        grads.table.data[at] += raw[j * n + m].real();
        grads.table.data[at + 1] += raw[j * n + m].imag();
      }
    return;
  }
  std::vector<double> g(n * 2 * cfg.K);
  for (int j = 0; j < cfg.K; ++j)
    for (std::size_t m = 0; m < n; ++m) {
      g[m * 2 * cfg.K + 2 * j] = raw[j * n + m].real();
      g[m * 2 * cfg.K + 2 * j + 1] = raw[j * n + m].imag();
    }
  for (std::size_t l = params.freq2vec.size(); l-- > 0;) {
    std::vector<double> gx = dense_rows_backward(params.freq2vec[l], tape.inputs[l], g, n, grads.freq2vec[l]);
    if (l == 0) break;
    const std::vector<double>& pre = tape.pre[l - 1];
    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] *= act_grad(cfg.activation, pre[k]);
    g = std::move(gx);
  }
}

RealField slb_apply(const RealField& u, const MultiplierTable& table) {
  if (!(u.grid == table.grid)) throw ValidationError("slb_apply: table grid differs from field grid");
  const std::size_t n = u.points();
  RealField d(u.grid, u.channels * table.K);
  std::vector<cplx> hat(n), work(n), scratch(n);
  for (int c = 0; c < u.channels; ++c) {
    fft::forward(u.grid, u.channel(c).data(), hat.data());
    for (int j = 0; j < table.K; ++j) {
      auto psi = table.row(j);
      for (std::size_t m = 0; m < n; ++m) work[m] = psi[m] * hat[m];
      fft::inverse_real(u.grid, work.data(), d.channel(c * table.K + j).data(), scratch.data());
    }
  }
  return d;
}

RealField pi_block(const RealField& d, const SinoParams& params, const ModelConfig& cfg) {
  if (d.channels != cfg.slb_channels()) throw ValidationError("pi_block: wrong feature channel count");
  const std::size_t n = d.points();
  RealField v(d.grid, cfg.C);
  std::vector<double> factor(cfg.C * n);
  for (int p = 0; p < cfg.pi_factors(); ++p) {
    channel_map(params.pi[p], d.data.data(), n, p == 0 ? v.data.data() : factor.data());
    if (p > 0)
      for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] *= factor[i];
  }
  if (cfg.ablation.no_filter) return v;
  return low_pass(v, two_thirds_mask(FreqGrid(d.grid)));
}

Evaluator::Evaluator(const SinoParams& params, const ModelConfig& cfg, const GridSpec& grid, bool keep_tape)
    : params_(&params), cfg_(&cfg), freq_(grid), mask_(two_thirds_mask(freq_)) {
  cfg.validate();
  grid.validate();
  table_ = freq2vec_eval(params, cfg, freq_, keep_tape ? &f2v_tape_ : nullptr);
}

RealField Evaluator::rhs(const RealField& u, RhsTape* tape) const {
  const ModelConfig& cfg = *cfg_;
  const SinoParams& P = *params_;
  const GridSpec& g = freq_.grid();
  check_input(u, cfg, g);
  const std::size_t n = g.size();
  const int cin = cfg.c_in, K = cfg.K, C = cfg.C;

  std::vector<cplx> u_hat(cin * n), work(n), scratch(n);
  for (int c = 0; c < cin; ++c) fft::forward(g, u.channel(c).data(), u_hat.data() + c * n);

  std::vector<double> d(static_cast<std::size_t>(cin) * K * n);
  for (int c = 0; c < cin; ++c)
    for (int j = 0; j < K; ++j) {
      auto psi = table_.row(j);
      const cplx* uh = u_hat.data() + c * n;
      for (std::size_t m = 0; m < n; ++m) work[m] = psi[m] * uh[m];
      fft::inverse_real(g, work.data(), d.data() + (c * K + j) * n, scratch.data());
    }

  const int F = cfg.pi_factors();
  std::vector<std::vector<double>> factors(F, std::vector<double>(C * n));
  for (int p = 0; p < F; ++p) channel_map(P.pi[p], d.data(), n, factors[p].data());
  std::vector<double> nl = factors[0];
  for (int p = 1; p < F; ++p)
    for (std::size_t i = 0; i < nl.size(); ++i) nl[i] *= factors[p][i];
  if (!cfg.ablation.no_filter) {
    for (int c = 0; c < C; ++c) {
      fft::forward(g, nl.data() + c * n, work.data());
      for (std::size_t m = 0; m < n; ++m) work[m] *= mask_[m];
      fft::inverse_real(g, work.data(), nl.data() + c * n, scratch.data());
    }
  }

  std::vector<double> z;
  if (cfg.ablation.no_linear) {
    z = std::move(nl);
  } else {
    std::vector<double> lin(C * n);
    channel_map(P.linear, d.data(), n, lin.data());
    if (cfg.combine == Combine::sum) {
      for (std::size_t i = 0; i < lin.size(); ++i) lin[i] += nl[i];
      z = std::move(lin);
    } else {
      z = std::move(lin);
      z.insert(z.end(), nl.begin(), nl.end());
    }
  }

  RealField out(g, cin);
  channel_map(P.out, z.data(), n, out.data.data());
  if (tape) {
    tape->u_hat = std::move(u_hat);
    tape->d = std::move(d);
    tape->factors = std::move(factors);
    tape->z = std::move(z);
  }
  return out;
}

RealField Evaluator::rhs_backward(const RhsTape& tape, const RealField& out_bar, SinoParams& grads,
                                  std::vector<cplx>& table_bar) const {
  const ModelConfig& cfg = *cfg_;
  const SinoParams& P = *params_;
  const GridSpec& g = freq_.grid();
  const std::size_t n = g.size();
  const int cin = cfg.c_in, K = cfg.K, C = cfg.C;
  std::vector<cplx> work(n), scratch(n);

  std::vector<double> z_bar(static_cast<std::size_t>(cfg.out_inputs()) * n, 0.0);
  channel_map_backward(P.out, tape.z.data(), out_bar.data.data(), n, grads.out, z_bar.data());

  std::vector<double> d_bar(tape.d.size(), 0.0);
  std::vector<double> nl_bar;
  if (cfg.ablation.no_linear) {
    nl_bar = std::move(z_bar);
  } else {
    const double* lin_bar = z_bar.data();
    if (cfg.combine == Combine::sum) nl_bar.assign(z_bar.begin(), z_bar.end());
    else nl_bar.assign(z_bar.begin() + C * n, z_bar.end());
    // Linear branch input is d; the branch output itself is not needed.
    channel_map_backward(P.linear, tape.d.data(), lin_bar, n, grads.linear, d_bar.data());
  }

  if (!cfg.ablation.no_filter) {
    // The low-pass projection is self-adjoint.
    for (int c = 0; c < C; ++c) {
      fft::forward(g, nl_bar.data() + c * n, work.data());
      for (std::size_t m = 0; m < n; ++m) work[m] *= mask_[m];
      fft::inverse_real(g, work.data(), nl_bar.data() + c * n, scratch.data());
    }
  }

  const int F = cfg.pi_factors();
  std::vector<double> a_bar(C * n);
  for (int p = 0; p < F; ++p) {
    a_bar = nl_bar;
    for (int q = 0; q < F; ++q) {
      if (q == p) continue;
      const std::vector<double>& fq = tape.factors[q];
      for (std::size_t i = 0; i < a_bar.size(); ++i) a_bar[i] *= fq[i];
    }
    channel_map_backward(P.pi[p], tape.d.data(), a_bar.data(), n, grads.pi[p], d_bar.data());
  }

  RealField u_bar(g, cin);
  std::vector<cplx> uh_bar(n), dh_bar(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int c = 0; c < cin; ++c) {
    std::fill(uh_bar.begin(), uh_bar.end(), cplx(0.0));
    const cplx* uh = tape.u_hat.data() + c * n;
    for (int j = 0; j < K; ++j) {
      fft::forward(g, d_bar.data() + (c * K + j) * n, dh_bar.data());
      auto psi = table_.row(j);
      cplx* tb = table_bar.data() + j * n;
      for (std::size_t m = 0; m < n; ++m) {
        const cplx db = dh_bar[m] * inv_n;
        tb[m] += std::conj(uh[m]) * db;
        uh_bar[m] += std::conj(psi[m]) * db;
      }
    }
    fft::inverse_real(g, uh_bar.data(), u_bar.channel(c).data(), scratch.data());
    for (double& v : u_bar.channel(c)) v *= static_cast<double>(n);
  }
  return u_bar;
}

RealField Evaluator::step(const RealField& u, StepTape* tape) const {
  const double dt = cfg_->dt_model;
  auto stage = [&](const RealField& s, int idx) {
    RhsTape* t = nullptr;
    if (tape) t = &tape->stages[idx];
    RealField k = rhs(s, t);
    if (!k.all_finite()) throw NonFinite("model stage " + std::to_string(idx + 1));
    return k;
  };
  if (cfg_->ablation.euler_time) {
    if (tape) tape->stages.assign(1, RhsTape{});
    RealField next = add_scaled(u, dt, stage(u, 0));
    if (!next.all_finite()) throw NonFinite("model step");
    return next;
  }
  if (tape) tape->stages.assign(4, RhsTape{});
  const RealField k1 = stage(u, 0);
  const RealField k2 = stage(add_scaled(u, 0.5 * dt, k1), 1);
  const RealField k3 = stage(add_scaled(u, 0.5 * dt, k2), 2);
  const RealField k4 = stage(add_scaled(u, dt, k3), 3);
  RealField next = u;
  for (std::size_t i = 0; i < next.data.size(); ++i)
    next.data[i] += dt / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
  if (!next.all_finite()) throw NonFinite("model step");
  return next;
}

RealField Evaluator::step_backward(const StepTape& tape, const RealField& next_bar, SinoParams& grads,
                                   std::vector<cplx>& table_bar) const {
  const double dt = cfg_->dt_model;
  RealField u_bar = next_bar;
  if (cfg_->ablation.euler_time) {
    RealField k_bar = next_bar;
    for (double& v : k_bar.data) v *= dt;
    axpy(u_bar, 1.0, rhs_backward(tape.stages[0], k_bar, grads, table_bar));
    return u_bar;
  }
  auto scaled = [](const RealField& f, double a) {
    RealField out = f;
    for (double& v : out.data) v *= a;
    return out;
  };
  RealField k1_bar = scaled(next_bar, dt / 6.0);
  RealField k2_bar = scaled(next_bar, dt / 3.0);
  RealField k3_bar = scaled(next_bar, dt / 3.0);
  const RealField k4_bar = scaled(next_bar, dt / 6.0);

  const RealField s4_bar = rhs_backward(tape.stages[3], k4_bar, grads, table_bar);
  axpy(u_bar, 1.0, s4_bar);
  axpy(k3_bar, dt, s4_bar);
  const RealField s3_bar = rhs_backward(tape.stages[2], k3_bar, grads, table_bar);
  axpy(u_bar, 1.0, s3_bar);
  axpy(k2_bar, 0.5 * dt, s3_bar);
  const RealField s2_bar = rhs_backward(tape.stages[1], k2_bar, grads, table_bar);
  axpy(u_bar, 1.0, s2_bar);
  axpy(k1_bar, 0.5 * dt, s2_bar);
  axpy(u_bar, 1.0, rhs_backward(tape.stages[0], k1_bar, grads, table_bar));
  return u_bar;
}

void Evaluator::table_backward(std::span<const cplx> table_bar, SinoParams& grads) const {
  if (!cfg_->ablation.no_freq2vec && f2v_tape_.inputs.empty())
    throw ValidationError("Evaluator was built without a Freq2Vec tape");
  freq2vec_backward(*params_, *cfg_, freq_, f2v_tape_, table_bar, grads);
}

std::map<std::string, RealField> Evaluator::features(const RealField& u) const {
  RhsTape tape;
  rhs(u, &tape);
  const ModelConfig& cfg = *cfg_;
  const GridSpec& g = freq_.grid();
  const std::size_t n = g.size();
  std::map<std::string, RealField> out;
  auto single = [&](const double* src) {
    RealField f(g, 1);
    std::copy(src, src + n, f.data.begin());
    return f;
  };
  for (int c = 0; c < cfg.c_in; ++c)
    for (int j = 0; j < cfg.K; ++j)
      out.emplace("slb/c" + std::to_string(c) + "/k" + std::to_string(j), single(tape.d.data() + (c * cfg.K + j) * n));
  std::vector<double> product = tape.factors[0];
  for (std::size_t p = 1; p < tape.factors.size(); ++p)
    for (std::size_t i = 0; i < product.size(); ++i) product[i] *= tape.factors[p][i];
  for (int c = 0; c < cfg.C; ++c) out.emplace("pi/" + std::to_string(c), single(product.data() + c * n));
  if (!cfg.ablation.no_linear) {
    std::vector<double> lin(cfg.C * n);
    channel_map(params_->linear, tape.d.data(), n, lin.data());
    for (int c = 0; c < cfg.C; ++c) out.emplace("linear/" + std::to_string(c), single(lin.data() + c * n));
  }
  return out;
}

RealField rhs_eval(const RealField& u, const SinoParams& params, const ModelConfig& cfg) {
  return Evaluator(params, cfg, u.grid).rhs(u);
}

RealField model_step(const RealField& u, const SinoParams& params, const ModelConfig& cfg) {
  return Evaluator(params, cfg, u.grid).step(u);
}

std::vector<RealField> rollout(const RealField& u0, const SinoParams& params, const ModelConfig& cfg, long n_steps,
                               long record_every) {
  if (n_steps < 0) throw ValidationError("rollout needs n_steps >= 0");
  if (record_every < 1) throw ValidationError("rollout needs record_every >= 1");
  const Evaluator ev(params, cfg, u0.grid);
  std::vector<RealField> out{u0};
  RealField u = u0;
  for (long s = 1; s <= n_steps; ++s) {
    try {
      u = ev.step(u);
    } catch (const NonFinite& e) {
      throw NonFinite(std::string(e.what()) + " at rollout step " + std::to_string(s), s * cfg.dt_model, s);
    }
    if (s % record_every == 0) out.push_back(u);
  }
  return out;
}

std::map<std::string, RealField> dump_features(const RealField& u, const SinoParams& params, const ModelConfig& cfg) {
  return Evaluator(params, cfg, u.grid).features(u);
}

ConstructedModel burgers_exact_model(const GridSpec& grid, double nu, double dt_model, int coverage) {
  grid.validate();
  const int d = grid.dim;
  int max_half = 0;
  for (int p : grid.points) max_half = std::max(max_half, p / 2);
  const int M = coverage * max_half;  // largest |index| interpolated exactly

  ModelConfig cfg;
  cfg.grid = grid;
  cfg.c_in = d;
  cfg.K = d + 2;  // {1, i k_1..i k_d, -|k|^2}
  cfg.C = d * d;  // one product u_a * d_a u_c per (c, a)
  cfg.P = 2;
  cfg.activation = Activation::relu;
  cfg.dt_model = dt_model;
  const int hidden = d * 2 * (M + 1);
  cfg.mlp_hidden = {hidden};
  cfg.combine = Combine::concat;

  SinoParams p = zero_params(cfg);
  Affine& h = p.freq2vec[0];
  Affine& o = p.freq2vec[1];
  const std::size_t out_w = o.in();
  auto unit = [&](int axis, int m, bool negative) { return static_cast<std::size_t>((axis * (M + 1) + m) * 2 + (negative ? 1 : 0)); };
  for (int a = 0; a < d; ++a) {
    const double half = 0.5 * grid.points[a];
    for (int m = 0; m <= M; ++m) {
      // ReLU(+-x_a - m/half)
      h.weight.data[unit(a, m, false) * d + a] = 1.0;
      h.bias.data[unit(a, m, false)] = -m / half;
      h.weight.data[unit(a, m, true) * d + a] = -1.0;
      h.bias.data[unit(a, m, true)] = -m / half;
    }
  }
  o.bias.data[0] = 1.0;  // psi_0 = 1
  for (int a = 0; a < d; ++a) {
    const double half = 0.5 * grid.points[a];
    const double s = 2.0 * std::numbers::pi / grid.length[a] * half;  // physical k_a = s * x_a
    // Im psi_{1+a} = s * (ReLU(x) - ReLU(-x)) = k_a
    const std::size_t im_row = 2 * (1 + a) + 1;
    o.weight.data[im_row * out_w + unit(a, 0, false)] = s;
    o.weight.data[im_row * out_w + unit(a, 0, true)] = -s;
    // Re psi_{d+1} = -s^2 * g(x_a), g the piecewise-linear interpolant of x^2 on knots m/half.
    const std::size_t lap_row = 2 * (d + 1);
    for (int m = 0; m <= M; ++m) {
      const double slope = (m == 0 ? 1.0 : 2.0) / half;
      o.weight.data[lap_row * out_w + unit(a, m, false)] = -s * s * slope;
      o.weight.data[lap_row * out_w + unit(a, m, true)] = -s * s * slope;
    }
  }

  const std::size_t K = cfg.K;
  const std::size_t dk = cfg.slb_channels();
  for (int c = 0; c < d; ++c) {
    for (int a = 0; a < d; ++a) {
      const std::size_t q = static_cast<std::size_t>(c * d + a);
      p.pi[0].weight.data[q * dk + a * K + 0] = 1.0;                           // u_a
      p.pi[1].weight.data[q * dk + c * K + 1 + static_cast<std::size_t>(a)] = 1.0;  // d_a u_c
      p.out.weight.data[static_cast<std::size_t>(c) * p.out.in() + cfg.C + q] = -1.0;
    }
    p.linear.weight.data[static_cast<std::size_t>(c) * dk + c * K + d + 1] = 1.0;  // lap u_c
    p.out.weight.data[static_cast<std::size_t>(c) * p.out.in() + c] = nu;
  }
  return {cfg, p};
}

}  // namespace sino::model
