#include "sino/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sino/error.hpp"
#include "sino/field_ops.hpp"

namespace sino::train {

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (!(max_lr > 0.0)) throw ValidationError("max_lr must be positive");
  if (n1 < 0) throw ValidationError("n1 must be >= 0");
  if (n2 < 1) throw ValidationError("n2 must be >= 1");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (!(grad_clip > 0.0)) throw ValidationError("grad_clip must be positive");
  if (val_every < 1) throw ValidationError("val_every must be >= 1");
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw ValidationError("pct_start must lie in (0, 1)");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw ValidationError("schedule factors must be positive");
  if (max_nonfinite < 0) throw ValidationError("max_nonfinite must be >= 0");
}

AdamState make_adam(const SinoParams& params) {
  AdamState s;
  s.m = model::zeros_like(params);
  s.v = model::zeros_like(params);
  return s;
}

long substeps_per_frame(double save_dt, double dt_model) {
  const double ratio = save_dt / dt_model;
  const long n = std::lround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio)
    throw ValidationError("snapshot cadence must be an integer multiple of the model step");
  return n;
}

namespace {

void check_segment(const std::vector<RealField>& segment, long substeps) {
  if (segment.size() < 2) throw ValidationError("a training segment needs at least two frames");
  if (substeps < 1) throw ValidationError("substeps must be >= 1");
  for (const auto& f : segment) require_same_shape(f, segment.front(), "training segment");
}

std::vector<model::Tensor*> tensors(SinoParams& p) {
  std::vector<model::Tensor*> out;
  model::for_each_tensor(p, [&out](const std::string&, model::Tensor& t) { out.push_back(&t); });
  return out;
}

double sum_sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double frame_loss(const RealField& pred, const RealField& truth, Loss loss) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double e = pred.data[i] - truth.data[i];
    err += e * e;
    ref += truth.data[i] * truth.data[i];
  }
  if (loss == Loss::mse) return err / static_cast<double>(pred.data.size());
  if (ref == 0.0) throw DegenerateTruth("relative loss against an all-zero frame");
  return std::sqrt(err / ref);
}

}  // namespace

double loss_rollout(const SinoParams& params, const ModelConfig& cfg, const std::vector<RealField>& segment,
                    Loss loss, long substeps) {
  check_segment(segment, substeps);
  const model::Evaluator ev(params, cfg, segment.front().grid);
  RealField u = segment.front();
  double total = 0.0;
  for (std::size_t f = 1; f < segment.size(); ++f) {
    for (long s = 0; s < substeps; ++s) u = ev.step(u);
    total += frame_loss(u, segment[f], loss);
  }
  return total / static_cast<double>(segment.size() - 1);
}

LossAndGrad backward(const SinoParams& params, const ModelConfig& cfg, const std::vector<RealField>& segment,
                     Loss loss, long substeps, double scale) {
  check_segment(segment, substeps);
  const model::Evaluator ev(params, cfg, segment.front().grid, true);
  const std::size_t frames = segment.size() - 1;
  const double inv_frames = 1.0 / static_cast<double>(frames);

  std::vector<model::StepTape> tapes(frames * substeps);
  std::vector<RealField> preds;
  RealField u = segment.front();
  for (std::size_t f = 0; f < frames; ++f) {
    for (long s = 0; s < substeps; ++s) u = ev.step(u, &tapes[f * substeps + s]);
    preds.push_back(u);
  }

  LossAndGrad out;
  out.grads = model::zeros_like(params);
  std::vector<RealField> pred_bar;
  for (std::size_t f = 0; f < frames; ++f) {
    const RealField& p = preds[f];
    const RealField& y = segment[f + 1];
    RealField g(p.grid, p.channels);
    const double n = static_cast<double>(p.data.size());
    if (loss == Loss::mse) {
      out.loss += frame_loss(p, y, loss);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = scale * inv_frames * 2.0 / n * (p.data[i] - y.data[i]);
    } else {
      const double ref = std::sqrt(sum_sq(y.data));
      if (ref == 0.0) throw DegenerateTruth("relative loss against an all-zero frame");
      double err = 0.0;
      for (std::size_t i = 0; i < g.data.size(); ++i) err += (p.data[i] - y.data[i]) * (p.data[i] - y.data[i]);
      err = std::sqrt(err);
      out.loss += err / ref;
      if (err > 0.0)
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = scale * inv_frames * (p.data[i] - y.data[i]) / (err * ref);
    }
    pred_bar.push_back(std::move(g));
  }
  out.loss *= inv_frames * scale;
  if (!std::isfinite(out.loss)) throw NonFinite("training loss");

  std::vector<cplx> table_bar(static_cast<std::size_t>(cfg.K) * segment.front().grid.size(), cplx(0.0));
  RealField u_bar(segment.front().grid, segment.front().channels);
  for (std::size_t f = frames; f-- > 0;) {
    axpy(u_bar, 1.0, pred_bar[f]);
    for (long s = substeps; s-- > 0;) u_bar = ev.step_backward(tapes[f * substeps + s], u_bar, out.grads, table_bar);
  }
  ev.table_backward(table_bar, out.grads);
  return out;
}

double global_norm(const GradientBundle& g) {
  double s = 0.0;
  model::for_each_tensor(g, [&s](const std::string&, const model::Tensor& t) { s += sum_sq(t.data); });
  return std::sqrt(s);
}

double clip_global_norm(GradientBundle& g, double bound) {
  const double norm = global_norm(g);
  if (!(norm > bound)) return norm;
  double factor = bound / norm;
  const GradientBundle original = g;
  for (;;) {
    g = original;
    model::for_each_tensor(g, [factor](const std::string&, model::Tensor& t) {
      for (double& v : t.data) v *= factor;
    });
    if (global_norm(g) <= bound) break;
    factor = std::nextafter(factor, 0.0) * (1.0 - 1e-15);
  }
  return norm;
}

void adam_step(AdamState& st, SinoParams& params, const GradientBundle& grads, double lr) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const auto p = tensors(params);
  const auto g = tensors(const_cast<GradientBundle&>(grads));
  const auto m = tensors(st.m);
  const auto v = tensors(st.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ValidationError("optimizer state does not mirror the parameters");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k]->size() != p[k]->size() || m[k]->size() != p[k]->size() || v[k]->size() != p[k]->size())
      throw ValidationError("optimizer state does not mirror the parameters");
    for (std::size_t i = 0; i < p[k]->size(); ++i) {
      const double gi = g[k]->data[i];
      double& mi = m[k]->data[i];
      double& vi = v[k]->data[i];
      mi = st.beta1 * mi + (1.0 - st.beta1) * gi;
      vi = st.beta2 * vi + (1.0 - st.beta2) * gi * gi;
      p[k]->data[i] -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + st.eps);
    }
  }
}

double onecycle_lr(long step, long total, double max_lr, double pct_start, double div_factor,
                   double final_div_factor) {
  if (total < 1 || step < 0 || step >= total) throw ValidationError("onecycle_lr: step outside [0, total)");
  const double initial = max_lr / div_factor;
  const double final_lr = max_lr / final_div_factor;
  const double peak = pct_start * static_cast<double>(total);
  const double s = static_cast<double>(step);
  auto anneal = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (s <= peak) return anneal(initial, max_lr, s / peak);
  const double tail = static_cast<double>(total - 1) - peak;
  if (tail <= 0.0) return max_lr;
  return anneal(max_lr, final_lr, std::min(1.0, (s - peak) / tail));
}

CurriculumSample sample_curriculum(const TrajectoryDataset& data, int n1, int n2, std::mt19937_64& rng) {
  if (data.trajectories.empty()) throw InsufficientLength("dataset has no trajectories");
  if (n1 < 0 || n2 < 1) throw ValidationError("curriculum needs n1 >= 0 and n2 >= 1");
  const std::size_t need = static_cast<std::size_t>(n1 + n2 + 1);
  for (const auto& t : data.trajectories)
    if (t.size() < need)
      throw InsufficientLength("trajectory has " + std::to_string(t.size()) + " frames, warm-up plus supervision need " +
                               std::to_string(need));
  CurriculumSample s;
  s.trajectory = std::uniform_int_distribution<std::size_t>(0, data.trajectories.size() - 1)(rng);
  s.warmup = std::uniform_int_distribution<int>(0, n1)(rng);
  const auto& traj = data.trajectories[s.trajectory];
  const std::size_t last_start = traj.size() - static_cast<std::size_t>(s.warmup + n2) - 1;
  s.start = std::uniform_int_distribution<std::size_t>(0, last_start)(rng);
  s.state = traj[s.start];
  const std::size_t first = s.start + s.warmup;
  s.segment.assign(traj.begin() + first, traj.begin() + first + n2 + 1);
  return s;
}

TrainState initial_state(const ModelConfig& cfg, const TrainConfig& tc) {
  TrainState st;
  st.params = model::init_params(cfg, tc.seed);
  st.opt = make_adam(st.params);
  st.best = st.params;
  return st;
}

double validation_error(const SinoParams& params, const ModelConfig& cfg, const TrajectoryDataset& val, long frames) {
  const long sub = substeps_per_frame(val.save_dt, cfg.dt_model);
  const model::Evaluator ev(params, cfg, val.grid);
  double err = 0.0, ref = 0.0;
  for (const auto& traj : val.trajectories) {
    const long n = frames > 0 ? std::min<long>(frames, static_cast<long>(traj.size()) - 1) : static_cast<long>(traj.size()) - 1;
    RealField u = traj.front();
    for (long f = 1; f <= n; ++f) {
      for (long s = 0; s < sub; ++s) u = ev.step(u);
      const RealField& y = traj[f];
      for (std::size_t i = 0; i < u.data.size(); ++i) {
        const double e = u.data[i] - y.data[i];
        err += e * e;
        ref += y.data[i] * y.data[i];
      }
    }
  }
  if (ref == 0.0) throw DegenerateTruth("validation trajectories are identically zero");
  return std::sqrt(err / ref);
}

namespace {

std::uint64_t iteration_seed(std::uint64_t seed, long iteration) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(iteration));
}

void validate_inputs(const TrajectoryDataset& d, const ModelConfig& cfg, const char* what) {
  if (d.trajectories.empty()) return;
  if (!(d.grid == cfg.grid)) throw IncompatibleDomain(std::string(what) + " grid differs from the model grid");
  if (d.channels != cfg.c_in) throw ValidationError(std::string(what) + " channel count differs from the model");
}

}  // namespace

TrainState train(const TrajectoryDataset& train_set, const TrajectoryDataset& val_set, const ModelConfig& cfg,
                 const TrainConfig& tc, TrainState st, const TrainHooks& hooks) {
  cfg.validate();
  tc.validate();
  if (train_set.trajectories.empty()) throw ValidationError("training set is empty");
  validate_inputs(train_set, cfg, "training set");
  validate_inputs(val_set, cfg, "validation set");
  model::check_shapes(st.params, cfg);
  const long sub = substeps_per_frame(train_set.save_dt, cfg.dt_model);
  const bool have_val = !val_set.trajectories.empty();

  while (st.iteration < tc.iterations) {
    if (hooks.stop_after >= 0 && st.iteration >= hooks.stop_after) break;
    const long it = st.iteration;
    std::mt19937_64 rng(iteration_seed(tc.seed, it));
    const double lr = onecycle_lr(it, tc.iterations, tc.max_lr, tc.pct_start, tc.div_factor, tc.final_div_factor);

    HistoryRow row;
    row.iteration = it + 1;
    row.lr = lr;
    try {
      GradientBundle grads = model::zeros_like(st.params);
      double loss = 0.0;
      const model::Evaluator warm(st.params, cfg, cfg.grid);
      for (int b = 0; b < tc.batch; ++b) {
        CurriculumSample s = sample_curriculum(train_set, tc.n1, tc.n2, rng);
        RealField u = s.state;
        for (long w = 0; w < static_cast<long>(s.warmup) * sub; ++w) u = warm.step(u);
        s.segment.front() = std::move(u);
        LossAndGrad lg = backward(st.params, cfg, s.segment, tc.loss, sub, 1.0 / tc.batch);
        loss += lg.loss;
        const auto dst = tensors(grads);
        const auto src = tensors(lg.grads);
        for (std::size_t k = 0; k < dst.size(); ++k)
          for (std::size_t i = 0; i < dst[k]->size(); ++i) dst[k]->data[i] += src[k]->data[i];
      }
      if (!std::isfinite(global_norm(grads))) throw NonFinite("gradient");
      clip_global_norm(grads, tc.grad_clip);
      adam_step(st.opt, st.params, grads, lr);
      st.consecutive_failures = 0;
      row.train_loss = loss;
    } catch (const NonFinite& e) {
      row.train_loss = std::numeric_limits<double>::quiet_NaN();
      if (++st.consecutive_failures > tc.max_nonfinite)
        throw NonFinite("training diverged at iteration " + std::to_string(it + 1) + " after " +
                            std::to_string(st.consecutive_failures) + " consecutive failures (" + e.what() + ")",
                        0.0, it + 1);
    }
    st.iteration = it + 1;

    if (st.iteration % tc.val_every == 0 || st.iteration == tc.iterations) {
      if (have_val) {
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
          v = validation_error(st.params, cfg, val_set, tc.val_frames);
        } catch (const NonFinite&) {
        }
        row.val_rel_l2 = v;
        if (std::isfinite(v) && v < st.best_val) {
          st.best_val = v;
          st.best = st.params;
          st.best_iteration = st.iteration;
        }
      } else {
        st.best = st.params;
        st.best_iteration = st.iteration;
      }
      st.history.push_back(row);
      if (hooks.on_validation) hooks.on_validation(st);
    } else {
      st.history.push_back(row);
    }
  }
  return st;
}

}  // namespace sino::train
