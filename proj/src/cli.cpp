#include "sino/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "sino/error.hpp"

namespace sino::cli {

using solver::Split;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_text(const fs::path& path, const std::string& text) {
  io::write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string grid_text(const GridSpec& g) {
  std::string s;
  for (std::size_t a = 0; a < g.points.size(); ++a) s += (a ? "x" : "") + std::to_string(g.points[a]);
  return s;
}

// Free text inside a CSV cell.
std::string cell(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
  return s;
}

solver::GenerateRequest request_for(const ExperimentConfig& cfg, Split split, std::size_t n, const GridSpec& target) {
  solver::GenerateRequest req;
  req.pde = cfg.pde;
  req.solver = cfg.solver_for(split);
  req.generation_grid = cfg.generation_grid;
  req.training_grid = target;
  req.grf = cfg.grf;
  req.n_traj = n;
  req.split_seed = solver::split_seed(split);
  req.split = split;
  return req;
}

std::size_t split_count(const ExperimentConfig& cfg, Split s) {
  switch (s) {
    case Split::train: return cfg.n_train;
    case Split::val: return cfg.n_val;
    case Split::test: return cfg.n_test;
    case Split::synthetic: break;
  }
  return 0;
}

fs::path data_dir(const fs::path& out) { return out / "data"; }

void put_scalar(io::Checkpoint& c, const std::string& name, std::vector<double> values) {
  model::Tensor t({values.size()});
  t.data = std::move(values);
  c.tensors[name] = std::move(t);
}

const model::Tensor& tensor(const io::Checkpoint& c, const std::string& name) {
  const auto it = c.tensors.find(name);
  if (it == c.tensors.end()) throw ValidationError("checkpoint is missing tensor " + name);
  return it->second;
}

struct Splits {
  solver::TrajectoryDataset train, val, test;
};

// Generates the datasets unless <out>/data already holds them.
Splits ensure_data(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  if (!fs::exists(io::dataset_paths(data_dir(out), "train").container)) cmd_generate(cfg, out, log);
  return {load_split(cfg, out, Split::train), load_split(cfg, out, Split::val), load_split(cfg, out, Split::test)};
}

}  // namespace

void write_manifest(const fs::path& path, const std::string& config_hash, const fs::path& root,
                    const std::vector<fs::path>& files) {
  std::ostringstream os;
  os << "config_hash " << config_hash << '\n';
  for (const auto& f : files) {
    const auto bytes = io::read_file(f);
    // A CRC over data followed by its own CRC is a constant residue, so for
    // containers the trailing checksum is left out.
    std::span<const unsigned char> covered(bytes);
    if (bytes.size() >= 12 && std::equal(bytes.begin(), bytes.begin() + 4, "SINO")) covered = covered.first(bytes.size() - 4);
    os << fs::relative(f, root).generic_string() << ' ' << io::crc_hex(io::crc32(covered)) << ' ' << bytes.size()
       << '\n';
  }
  write_text(path, os.str());
}

std::vector<fs::path> cmd_generate(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  std::vector<fs::path> files;
  const fs::path config_path = out / "config.json";
  write_text(config_path, config::pretty(cfg));
  files.push_back(config_path);
  for (Split s : {Split::train, Split::val, Split::test}) {
    const std::size_t n = split_count(cfg, s);
    log << "generating " << solver::to_string(s) << ": " << n << " trajectories on " << grid_text(cfg.generation_grid)
        << " -> " << grid_text(cfg.training_grid) << std::endl;
    const auto ds = solver::generate_dataset(request_for(cfg, s, n, cfg.training_grid));
    for (auto& f : io::write_dataset(data_dir(out), solver::to_string(s), ds)) files.push_back(f);
  }
  write_manifest(out / "manifest.txt", config::hash(cfg), out, files);
  return files;
}

solver::TrajectoryDataset load_split(const ExperimentConfig& cfg, const fs::path& out, Split split) {
  const std::string name = solver::to_string(split);
  if (!fs::exists(io::dataset_paths(data_dir(out), name).container))
    throw IoError("no " + name + " split in " + data_dir(out).string() + " (run generate first)");
  auto ds = io::read_dataset(data_dir(out), name);
  if (!(ds.grid == cfg.training_grid))
    throw IncompatibleDomain(name + " split is on " + grid_text(ds.grid) + ", config expects " +
                             grid_text(cfg.training_grid));
  if (ds.channels != cfg.pde.channels()) throw IncompatibleDomain(name + " split has the wrong channel count");
  if (std::abs(ds.save_dt - cfg.solver.save_dt) > 1e-12 * cfg.solver.save_dt)
    throw IncompatibleDomain(name + " split cadence differs from the config save_dt");
  return ds;
}

io::Checkpoint params_checkpoint(const ExperimentConfig& cfg, const model::SinoParams& params) {
  io::Checkpoint c;
  c.config = config::canonical(cfg);
  io::put_params(c, params);
  return c;
}

io::Checkpoint state_checkpoint(const ExperimentConfig& cfg, const train::TrainState& st) {
  io::Checkpoint c;
  c.config = config::canonical(cfg);
  io::put_params(c, st.params, "params.");
  io::put_params(c, st.best, "best.");
  io::put_params(c, st.opt.m, "adam.m.");
  io::put_params(c, st.opt.v, "adam.v.");
  put_scalar(c, "state.scalars",
             {static_cast<double>(st.iteration), static_cast<double>(st.opt.step), st.best_val,
              static_cast<double>(st.best_iteration), static_cast<double>(st.consecutive_failures), st.opt.beta1,
              st.opt.beta2, st.opt.eps});
  model::Tensor h({st.history.size(), 4});
  for (std::size_t r = 0; r < st.history.size(); ++r) {
    const auto& row = st.history[r];
    h.data[4 * r] = static_cast<double>(row.iteration);
    h.data[4 * r + 1] = row.lr;
    h.data[4 * r + 2] = row.train_loss;
    h.data[4 * r + 3] = row.val_rel_l2;
  }
  c.tensors["state.history"] = std::move(h);
  return c;
}

train::TrainState state_from_checkpoint(const io::Checkpoint& ck, const model::ModelConfig& cfg) {
  train::TrainState st;
  st.params = io::get_params(ck, cfg, "params.");
  st.best = io::get_params(ck, cfg, "best.");
  st.opt.m = io::get_params(ck, cfg, "adam.m.");
  st.opt.v = io::get_params(ck, cfg, "adam.v.");
  const auto& s = tensor(ck, "state.scalars");
  if (s.data.size() != 8) throw ValidationError("state.scalars has the wrong length");
  st.iteration = static_cast<long>(s.data[0]);
  st.opt.step = static_cast<long>(s.data[1]);
  st.best_val = s.data[2];
  st.best_iteration = static_cast<long>(s.data[3]);
  st.consecutive_failures = static_cast<int>(s.data[4]);
  st.opt.beta1 = s.data[5];
  st.opt.beta2 = s.data[6];
  st.opt.eps = s.data[7];
  const auto& h = tensor(ck, "state.history");
  if (h.shape.size() != 2 || h.shape[1] != 4) throw ValidationError("state.history has the wrong shape");
  for (std::size_t r = 0; r < h.shape[0]; ++r)
    st.history.push_back({static_cast<long>(h.data[4 * r]), h.data[4 * r + 1], h.data[4 * r + 2], h.data[4 * r + 3]});
  return st;
}

LoadedModel load_model(const fs::path& checkpoint) {
  const auto ck = io::read_checkpoint(checkpoint);
  LoadedModel m;
  m.cfg = config::parse(ck.config, {}, checkpoint.string() + " config echo");
  m.params = io::get_params(ck, m.cfg.model);
  return m;
}

void write_history_csv(const std::vector<train::HistoryRow>& history, const fs::path& path) {
  std::ostringstream os;
  os << "iteration,lr,train_loss,val_rel_l2\n";
  for (const auto& r : history)
    os << r.iteration << ',' << eval::format_double(r.lr) << ',' << eval::format_double(r.train_loss) << ','
       << eval::format_double(r.val_rel_l2) << '\n';
  write_text(path, os.str());
}

TrainOutcome train_into(const ExperimentConfig& cfg, const solver::TrajectoryDataset& train_set,
                        const solver::TrajectoryDataset& val_set, const fs::path& dir, const TrainOptions& opts,
                        std::ostream& log) {
  cfg.validate();
  const fs::path state_path = dir / "state.sinockpt";
  train::TrainState st;
  if (opts.resume && fs::exists(state_path)) {
    const auto ck = io::read_checkpoint(state_path);
    if (ck.config != config::canonical(cfg))
      throw ValidationError(state_path.string() + " was written for a different config");
    st = state_from_checkpoint(ck, cfg.model);
    log << "resuming at iteration " << st.iteration << std::endl;
  } else {
    st = train::initial_state(cfg.model, cfg.train);
  }
  train::TrainHooks hooks;
  hooks.stop_after = opts.stop_after;
  hooks.on_validation = [&](const train::TrainState& s) {
    io::write_checkpoint(state_path, state_checkpoint(cfg, s));
    const auto& row = s.history.back();
    log << "iteration " << s.iteration << "/" << cfg.train.iterations << "  lr " << eval::format_double(row.lr)
        << "  loss " << eval::format_double(row.train_loss) << "  val " << eval::format_double(row.val_rel_l2)
        << "  best " << eval::format_double(s.best_val) << std::endl;
  };
  st = train::train(train_set, val_set, cfg.model, cfg.train, std::move(st), hooks);
  io::write_checkpoint(state_path, state_checkpoint(cfg, st));
  io::write_checkpoint(dir / "best.sinockpt", params_checkpoint(cfg, st.best));
  write_history_csv(st.history, dir / "history.csv");
  TrainOutcome out;
  out.completed = st.iteration >= cfg.train.iterations;
  out.state = std::move(st);
  return out;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const fs::path& out, const TrainOptions& opts, std::ostream& log) {
  cfg.validate();
  const auto train_set = load_split(cfg, out, Split::train);
  const auto val_set = load_split(cfg, out, Split::val);
  return train_into(cfg, train_set, val_set, out / "train", opts, log);
}

EvalOutcome cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out, const EvalOptions& opts, std::ostream& log) {
  cfg.validate();
  const fs::path dir = out / "eval";
  fs::create_directories(dir);
  LoadedModel m;
  if (opts.constructed) {
    if (cfg.pde.kind != solver::PdeKind::burgers)
      throw ValidationError("the constructed parameters exist only for Burgers");
    auto cm = model::burgers_exact_model(cfg.training_grid, cfg.pde.nu, cfg.model.dt_model);
    m.cfg = cfg;
    m.cfg.model = cm.cfg;
    m.params = std::move(cm.params);
    io::write_checkpoint(dir / "constructed.sinockpt", params_checkpoint(m.cfg, m.params));
  } else {
    m = load_model(opts.checkpoint.empty() ? out / "train" / "best.sinockpt" : opts.checkpoint);
  }
  const auto& mcfg = m.cfg.model;

  auto test = io::read_dataset(data_dir(out), "test");
  if (!(test.grid == mcfg.grid))
    throw IncompatibleDomain("checkpoint model is on " + grid_text(mcfg.grid) + ", test data on " +
                             grid_text(test.grid));
  if (test.channels != mcfg.c_in) throw IncompatibleDomain("checkpoint model and test data differ in channels");

  EvalOutcome res;
  res.report = eval::evaluate_rollout(m.params, mcfg, test, cfg.eval_horizon, cfg.solver.t_end);
  eval::export_csv(res.report, dir / "rollout.csv");
  eval::export_summary_csv(res.report, dir / "summary.csv");
  log << "test rel_l2 " << eval::format_double(res.report.rel_l2) << " over " << eval::format_double(res.report.horizon)
      << " s (" << res.report.failures << " failed)" << std::endl;

  if (cfg.superres_factor > 1) {
    GridSpec fine = cfg.training_grid;
    for (auto& p : fine.points) p *= cfg.superres_factor;
    const auto fine_test = solver::generate_dataset(request_for(cfg, Split::test, cfg.n_test, fine));
    res.superres = eval::superres_eval(m.params, mcfg, fine_test, cfg.eval_horizon);
    std::ostringstream os;
    os << "grid,points,rel_l2,failed\n";
    os << "native," << grid_text(mcfg.grid) << ',' << eval::format_double(res.superres->native.rel_l2) << ','
       << res.superres->native.failures << '\n';
    os << "fine," << grid_text(fine) << ',' << eval::format_double(res.superres->fine.rel_l2) << ','
       << res.superres->fine.failures << '\n';
    write_text(dir / "superres.csv", os.str());
    log << "super-resolution rel_l2 native " << eval::format_double(res.superres->native.rel_l2) << ", fine "
        << eval::format_double(res.superres->fine.rel_l2) << std::endl;
  }

  if (!opts.pattern.empty()) {
    eval::PatternIC p;
    if (opts.pattern == "star" || opts.pattern == "smiley" || opts.pattern == "ai")
      p.raster = eval::builtin_raster(eval::pattern_from_string(opts.pattern), 256);
    else
      p.raster = eval::read_pgm(opts.pattern);
    p.grid = cfg.generation_grid;
    p.channels = cfg.pde.channels();
    p.grf = cfg.grf;
    p.grf_seed = solver::trajectory_seed(solver::split_seed(Split::test), 0);
    const RealField ic = eval::pattern_ic(p);
    solver::TrajectoryDataset ood;
    ood.grid = cfg.training_grid;
    ood.channels = p.channels;
    ood.save_dt = cfg.solver.save_dt;
    auto snaps = solver::integrate(cfg.pde, cfg.solver_for(Split::test), ic);
    for (auto& s : snaps) s = spectral_resample(s, cfg.training_grid);
    ood.trajectories.push_back(std::move(snaps));
    res.ood = eval::evaluate_rollout(m.params, mcfg, ood, cfg.eval_horizon, cfg.solver.t_end);
    eval::export_csv(*res.ood, dir / "ood.csv");
    eval::export_summary_csv(*res.ood, dir / "ood_summary.csv");
    log << "OOD (" << opts.pattern << ") rel_l2 " << eval::format_double(res.ood->rel_l2) << std::endl;
  }

  if (opts.dump_fields) {
    const auto& truth = test.trajectories.front();
    const long sub = train::substeps_per_frame(test.save_dt, mcfg.dt_model);
    const long frames = std::lround(res.report.horizon / test.save_dt);
    try {
      io::FieldFile f{test.grid, test.channels, test.save_dt, model::rollout(truth.front(), m.params, mcfg, frames * sub, sub)};
      io::write_fields(dir / "prediction_0.sinodata", f);
    } catch (const NonFinite& e) {
      log << "prediction dump skipped: " << e.what() << std::endl;
    }
    // All feature maps stacked as channels of one field container; the
    // index file names them in channel order.
    const auto feats = model::dump_features(truth.front(), m.params, mcfg);
    int total = 0;
    for (const auto& [name, field] : feats) total += field.channels;
    RealField stacked(test.grid, total);
    std::ostringstream index;
    int at = 0;
    for (const auto& [name, field] : feats) {
      std::copy(field.data.begin(), field.data.end(), stacked.channel(at).begin());
      for (int c = 0; c < field.channels; ++c) index << at + c << ' ' << name << '\n';
      at += field.channels;
    }
    io::write_fields(dir / "features_0.sinodata", {test.grid, total, 0.0, {stacked}});
    write_text(dir / "features_0.txt", index.str());
  }
  return res;
}

std::vector<std::pair<std::string, model::Ablation>> ablation_variants(const model::Ablation& base) {
  std::vector<std::pair<std::string, model::Ablation>> v;
  v.emplace_back("full", base);
  auto with = [&](const std::string& name, bool model::Ablation::*flag) {
    model::Ablation a = base;
    a.*flag = true;
    v.emplace_back(name, a);
  };
  with("no_pi", &model::Ablation::no_pi);
  with("no_filter", &model::Ablation::no_filter);
  with("no_freq2vec", &model::Ablation::no_freq2vec);
  with("no_linear", &model::Ablation::no_linear);
  with("euler", &model::Ablation::euler_time);
  return v;
}

AblationRow run_variant(const ExperimentConfig& cfg, const std::string& name, const solver::TrajectoryDataset& train_set,
                        const solver::TrajectoryDataset& val_set, const solver::TrajectoryDataset& test_set,
                        const fs::path& dir, std::ostream& log) {
  AblationRow row;
  row.variant = name;
  row.rel_l2 = row.rel_l2_train_window = row.rel_l2_extrapolation = row.best_val = kNaN;
  log << "== variant " << name << std::endl;
  try {
    const auto o = train_into(cfg, train_set, val_set, dir, {}, log);
    row.best_val = std::isfinite(o.state.best_val) ? o.state.best_val : kNaN;
    if (!val_set.trajectories.empty() && !std::isfinite(o.state.best_val))
      throw NonFinite("validation rollout never finite");
    const auto rep = eval::evaluate_rollout(o.state.best, cfg.model, test_set, cfg.eval_horizon, cfg.solver.t_end);
    eval::export_summary_csv(rep, dir / "summary.csv");
    if (rep.failures > 0) throw NonFinite(std::to_string(rep.failures) + " test rollouts");
    row.rel_l2 = rep.rel_l2;
    row.rel_l2_train_window = rep.rel_l2_train_window;
    row.rel_l2_extrapolation = rep.rel_l2_extrapolation;
    row.status = "ok";
  } catch (const Error& e) {
    row.rel_l2 = row.rel_l2_train_window = row.rel_l2_extrapolation = kNaN;
    row.status = e.what();
  }
  log << "   " << name << " rel_l2 " << eval::format_double(row.rel_l2) << " (" << row.status << ")" << std::endl;
  return row;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ostringstream os;
  os << "variant,rel_l2,rel_l2_train_window,rel_l2_extrapolation,best_val_rel_l2,status\n";
  for (const auto& r : rows)
    os << r.variant << ',' << eval::format_double(r.rel_l2) << ',' << eval::format_double(r.rel_l2_train_window) << ','
       << eval::format_double(r.rel_l2_extrapolation) << ',' << eval::format_double(r.best_val) << ',' << cell(r.status)
       << '\n';
  write_text(path, os.str());
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const auto data = ensure_data(cfg, out, log);
  std::vector<AblationRow> rows;
  for (const auto& [name, ablation] : ablation_variants(cfg.model.ablation)) {
    ExperimentConfig v = cfg;
    v.model.ablation = ablation;
    rows.push_back(run_variant(v, name, data.train, data.val, data.test, out / "ablate" / name, log));
  }
  write_ablation_csv(rows, out / "ablate" / "ablation.csv");
  return rows;
}

solver::TrajectoryDataset distill_dataset(const ExperimentConfig& cfg, const DistillOptions& opts, std::ostream& log) {
  const LoadedModel teacher = load_model(opts.teacher);
  const auto& mcfg = teacher.cfg.model;
  if (mcfg.c_in != cfg.pde.channels()) throw ValidationError("teacher channel count differs from the config PDE");
  const double cadence = opts.cadence > 0.0 ? opts.cadence : cfg.solver.save_dt;
  const double horizon = opts.horizon > 0.0 ? opts.horizon : cfg.solver.t_end;
  const long sub = train::substeps_per_frame(cadence, mcfg.dt_model);
  const long frames = std::lround(horizon / cadence);
  if (frames < 1 || std::abs(static_cast<double>(frames) * cadence - horizon) > 1e-9 * horizon)
    throw ValidationError("distillation horizon must be a positive multiple of the cadence");

  solver::TrajectoryDataset ds;
  ds.grid = mcfg.grid;
  ds.channels = mcfg.c_in;
  ds.save_dt = cadence;
  ds.meta.pde = cfg.pde;
  ds.meta.solver.dt = mcfg.dt_model;
  ds.meta.solver.t_end = horizon;
  ds.meta.solver.save_dt = cadence;
  ds.meta.generation_grid = mcfg.grid;
  ds.meta.split = Split::synthetic;
  for (std::size_t i = 0; i < opts.n_traj; ++i) {
    const auto seed = solver::trajectory_seed(solver::split_seed(Split::synthetic), i);
    const RealField ic = solver::random_initial_condition(cfg.pde, mcfg.grid, seed, cfg.grf);
    try {
      ds.trajectories.push_back(model::rollout(ic, teacher.params, mcfg, frames * sub, sub));
      ds.meta.seeds.push_back(seed);
    } catch (const NonFinite& e) {
      log << "skipping synthetic trajectory " << i << " (seed " << seed << "): " << e.what() << std::endl;
    }
  }
  return ds;
}

std::vector<fs::path> cmd_distill_generate(const ExperimentConfig& cfg, const fs::path& out, const DistillOptions& opts,
                                           std::ostream& log) {
  cfg.validate();
  const auto ds = distill_dataset(cfg, opts, log);
  const fs::path dir = out / "distill";
  auto files = io::write_dataset(dir, "synthetic", ds);
  write_manifest(dir / "manifest.txt", config::hash(cfg), dir, files);
  log << "wrote " << ds.trajectories.size() << " synthetic trajectories of " << ds.snapshots_per_trajectory()
      << " snapshots" << std::endl;
  return files;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const fs::path& out, const SweepSpec& spec,
                                std::ostream& log) {
  cfg.validate();
  const bool data_sweep = !spec.n_traj.empty();
  if (!data_sweep && (spec.C.empty() || spec.K.empty()))
    throw ValidationError("sweep needs --n-traj or both --C and --K");

  ExperimentConfig gen = cfg;
  if (data_sweep) {
    for (auto n : spec.n_traj)
      if (n < 1) throw ValidationError("n_traj values must be >= 1");
    gen.n_train = std::max(cfg.n_train, *std::max_element(spec.n_traj.begin(), spec.n_traj.end()));
  }
  const auto data = ensure_data(gen, out, log);

  std::vector<ExperimentConfig> points;
  std::vector<std::string> labels;
  if (data_sweep) {
    for (auto n : spec.n_traj) {
      if (n > data.train.trajectories.size())
        throw ValidationError("sweep asks for " + std::to_string(n) + " training trajectories, data has " +
                              std::to_string(data.train.trajectories.size()));
      ExperimentConfig p = cfg;
      p.n_train = n;
      points.push_back(p);
      labels.push_back("n_traj" + std::to_string(n));
    }
  } else {
    for (int c : spec.C)
      for (int k : spec.K) {
        ExperimentConfig p = cfg;
        p.model.C = c;
        p.model.K = k;
        points.push_back(p);
        labels.push_back("C" + std::to_string(c) + "_K" + std::to_string(k));
      }
  }

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    SweepRow row;
    row.point = labels[i];
    row.n_train = p.n_train;
    row.C = p.model.C;
    row.K = p.model.K;
    row.best_val = row.test_rel_l2 = kNaN;
    try {
      p.validate();
      row.config_hash = config::hash(p);
      solver::TrajectoryDataset subset = data.train;
      subset.trajectories.resize(p.n_train);
      subset.meta.seeds.resize(std::min(subset.meta.seeds.size(), p.n_train));
      log << "== sweep point " << row.point << std::endl;
      const auto o = train_into(p, subset, data.val, out / "sweep" / row.point, {}, log);
      row.best_val = std::isfinite(o.state.best_val) ? o.state.best_val : kNaN;
      const auto rep = eval::evaluate_rollout(o.state.best, p.model, data.test, p.eval_horizon, p.solver.t_end);
      row.test_rel_l2 = rep.failures > 0 ? kNaN : rep.rel_l2;
      row.status = rep.failures > 0 ? std::to_string(rep.failures) + " test rollouts non-finite" : "ok";
    } catch (const Error& e) {
      row.status = e.what();
    }
    log << "   " << row.point << " test rel_l2 " << eval::format_double(row.test_rel_l2) << " (" << row.status << ")"
        << std::endl;
    rows.push_back(row);
  }
  std::ostringstream os;
  os << "point,n_train,C,K,config_hash,best_val_rel_l2,test_rel_l2,status\n";
  for (const auto& r : rows)
    os << r.point << ',' << r.n_train << ',' << r.C << ',' << r.K << ',' << r.config_hash << ','
       << eval::format_double(r.best_val) << ',' << eval::format_double(r.test_rel_l2) << ',' << cell(r.status) << '\n';
  write_text(out / "sweep" / "summary.csv", os.str());
  return rows;
}

namespace {

struct Common {
  std::string config_path;
  std::string preset;
  bool desk = false;
  std::string out;
  std::optional<std::uint64_t> seed;
  model::Ablation ablation;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON experiment config (comments allowed); overrides the preset");
  sub->add_option("--preset", c.preset, "Paper case E1..E7")->check(CLI::IsMember({"E1", "E2", "E3", "E4", "E5", "E6", "E7"}));
  sub->add_flag("--desk", c.desk, "Use the reduced desk-scale version of the preset");
  sub->add_option("--out", c.out, "Output directory (default: the config's out)");
  sub->add_option("--seed", c.seed, "Training seed (model initialisation and curriculum)");
  sub->add_flag("--no-pi", c.ablation.no_pi, "Replace the product block by a single linear map");
  sub->add_flag("--no-filter", c.ablation.no_filter, "Drop the 2/3 low-pass after the product block");
  sub->add_flag("--no-freq2vec", c.ablation.no_freq2vec, "Learn a free multiplier table instead of the MLP");
  sub->add_flag("--no-linear", c.ablation.no_linear, "Drop the linear branch");
  sub->add_flag("--euler", c.ablation.euler_time, "Forward Euler instead of RK4");
}

ExperimentConfig build_config(const Common& c) {
  if (c.preset.empty() && c.config_path.empty()) throw ValidationError("give --preset and/or --config");
  if (c.desk && c.preset.empty()) throw ValidationError("--desk needs --preset");
  ExperimentConfig cfg = c.preset.empty() ? ExperimentConfig{} : config::preset(c.preset, c.desk);
  if (!c.config_path.empty()) cfg = config::load(c.config_path, cfg);
  if (c.seed) cfg.train.seed = *c.seed;
  auto& a = cfg.model.ablation;
  a.no_pi = a.no_pi || c.ablation.no_pi;
  a.no_filter = a.no_filter || c.ablation.no_filter;
  a.no_freq2vec = a.no_freq2vec || c.ablation.no_freq2vec;
  a.no_linear = a.no_linear || c.ablation.no_linear;
  a.euler_time = a.euler_time || c.ablation.euler_time;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral-inspired neural operator: data generation, training and evaluation", "sino"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate", "Simulate train/val/test trajectories");
  auto* trn = app.add_subcommand("train", "Train on the generated data");
  auto* evl = app.add_subcommand("evaluate", "Roll out a checkpoint on the test split");
  auto* abl = app.add_subcommand("ablate", "Train and evaluate the full model and five ablations");
  auto* dst = app.add_subcommand("distill-generate", "Synthesize a dataset by rolling out a teacher checkpoint");
  auto* swp = app.add_subcommand("sweep", "Train and evaluate over training set sizes or a C x K grid");
  for (auto* s : {gen, trn, evl, abl, dst, swp}) add_common(s, common);

  TrainOptions topts;
  trn->add_flag("--resume", topts.resume, "Continue from <out>/train/state.sinockpt if present");
  trn->add_option("--stop-after", topts.stop_after, "Stop after this many iterations (the state stays resumable)");

  EvalOptions eopts;
  std::string checkpoint;
  evl->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/train/best.sinockpt)");
  evl->add_flag("--constructed", eopts.constructed, "Evaluate hand-set parameters that reproduce the Burgers RHS");
  evl->add_option("--pattern", eopts.pattern, "Extra out-of-distribution rollout: star, smiley, ai or a PGM file");
  evl->add_flag("--dump-fields", eopts.dump_fields, "Write the predicted trajectory 0 and intermediate features");

  DistillOptions dopts;
  std::string teacher;
  dst->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  dst->add_option("--n-traj", dopts.n_traj, "Number of synthetic trajectories")->required();
  dst->add_option("--cadence", dopts.cadence, "Snapshot spacing in seconds (default: save_dt)");
  dst->add_option("--horizon", dopts.horizon, "Trajectory length in seconds (default: t_end)");

  SweepSpec sspec;
  swp->add_option("--n-traj", sspec.n_traj, "Training set sizes, e.g. 1,2,4")->delimiter(',');
  swp->add_option("--C", sspec.C, "Channel widths, e.g. 16,32")->delimiter(',');
  swp->add_option("--K", sspec.K, "Multiplier counts, e.g. 4,8")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::validation);
  }

  try {
    const ExperimentConfig cfg = build_config(common);
    const fs::path dir = cfg.out_dir;
    if (gen->parsed()) {
      const auto files = cmd_generate(cfg, dir, err);
      out << "wrote " << files.size() << " files and " << (dir / "manifest.txt").string() << '\n';
    } else if (trn->parsed()) {
      const auto o = cmd_train(cfg, dir, topts, err);
      out << (o.completed ? "finished" : "stopped") << " at iteration " << o.state.iteration << ", best val rel_l2 "
          << eval::format_double(o.state.best_val) << " (iteration " << o.state.best_iteration << ")\n";
    } else if (evl->parsed()) {
      eopts.checkpoint = checkpoint;
      const auto o = cmd_evaluate(cfg, dir, eopts, err);
      out << "rel_l2 " << eval::format_double(o.report.rel_l2) << '\n';
    } else if (abl->parsed()) {
      for (const auto& r : cmd_ablate(cfg, dir, err))
        out << r.variant << ' ' << eval::format_double(r.rel_l2) << '\n';
    } else if (dst->parsed()) {
      dopts.teacher = teacher;
      cmd_distill_generate(cfg, dir, dopts, err);
      out << "wrote " << (dir / "distill").string() << '\n';
    } else if (swp->parsed()) {
      for (const auto& r : cmd_sweep(cfg, dir, sspec, err))
        out << r.point << ' ' << eval::format_double(r.test_rel_l2) << '\n';
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::io);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sino::cli
