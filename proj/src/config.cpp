#include "sino/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "sino/error.hpp"

namespace sino::config {

using nlohmann::json;
using solver::Forcing;
using solver::PdeKind;

namespace {

std::string to_string(train::Loss l) { return l == train::Loss::mse ? "mse" : "rel_l2"; }

train::Loss loss_from_string(const std::string& s) {
  if (s == "mse") return train::Loss::mse;
  if (s == "rel_l2") return train::Loss::rel_l2;
  throw ValidationError("unknown loss '" + s + "' (mse, rel_l2)");
}

std::string to_string(model::Combine c) { return c == model::Combine::concat ? "concat" : "sum"; }

model::Combine combine_from_string(const std::string& s) {
  if (s == "concat") return model::Combine::concat;
  if (s == "sum") return model::Combine::sum;
  throw ValidationError("unknown combine '" + s + "' (concat, sum)");
}

// Lengths may be written as numbers or as multiples of pi ("2pi", "12pi", "pi").
double length_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "pi") == 0) {
    const std::string head = s.substr(0, s.size() - 2);
    if (head.empty()) return std::numbers::pi;
    std::size_t used = 0;
    double factor = 0.0;
    try {
      factor = std::stod(head, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == head.size()) return factor * std::numbers::pi;
  }
  throw ValidationError("cannot read domain length '" + s + "'");
}

json grid_json(const GridSpec& g) { return {{"points", g.points}, {"length", g.length}}; }

// A scalar point count or length means the same value on every axis.
GridSpec grid_from(const json& j, int dim) {
  GridSpec g;
  const auto& p = j.at("points");
  const auto& l = j.at("length");
  if (p.is_array()) {
    g.points = p.get<std::vector<int>>();
  } else {
    g.points.assign(dim, p.get<int>());
  }
  if (l.is_array()) {
    for (const auto& v : l) g.length.push_back(length_from(v));
  } else {
    g.length.assign(g.points.size(), length_from(l));
  }
  g.dim = static_cast<int>(g.points.size());
  return g;
}

json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"case", c.case_id},
      {"scale", c.scale},
      {"pde", {{"kind", solver::to_string(c.pde.kind)}, {"nu", c.pde.nu}, {"forcing", solver::to_string(c.pde.forcing)},
               {"dim", c.pde.dim}}},
      {"grid", {{"generation", grid_json(c.generation_grid)}, {"training", grid_json(c.training_grid)}}},
      {"solver", {{"dt", c.solver.dt}, {"t_end", c.solver.t_end}, {"test_t_end", c.test_t_end},
                  {"save_dt", c.solver.save_dt}, {"dealias", c.solver.dealias},
                  {"integrating_factor", c.solver.integrating_factor}}},
      {"grf", {{"alpha", c.grf.alpha}, {"tau", c.grf.tau}, {"scale", c.grf.scale}}},
      {"data", {{"n_train", c.n_train}, {"n_val", c.n_val}, {"n_test", c.n_test}}},
      {"model", {{"K", m.K}, {"C", m.C}, {"P", m.P}, {"mlp_hidden", m.mlp_hidden},
                 {"activation", model::to_string(m.activation)}, {"dt_model", m.dt_model},
                 {"combine", to_string(m.combine)},
                 {"ablation", {{"no_pi", m.ablation.no_pi}, {"no_filter", m.ablation.no_filter},
                               {"no_freq2vec", m.ablation.no_freq2vec}, {"no_linear", m.ablation.no_linear},
                               {"euler", m.ablation.euler_time}}}}},
      {"train", {{"iterations", t.iterations}, {"max_lr", t.max_lr}, {"n1", t.n1}, {"n2", t.n2}, {"batch", t.batch},
                 {"loss", to_string(t.loss)}, {"grad_clip", t.grad_clip}, {"seed", t.seed},
                 {"val_every", t.val_every}, {"val_frames", t.val_frames}, {"pct_start", t.pct_start},
                 {"div_factor", t.div_factor}, {"final_div_factor", t.final_div_factor},
                 {"max_nonfinite", t.max_nonfinite}}},
      {"eval", {{"horizon", c.eval_horizon}, {"superres_factor", c.superres_factor}}},
      {"out", c.out_dir},
  };
}

// Every key of `j` must exist in `schema`, recursively through objects.
void check_keys(const json& j, const json& schema, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ValidationError("unknown config key '" + here + "'");
    if (schema.at(key).is_object()) {
      if (!value.is_object()) throw ValidationError("config key '" + here + "' must be an object");
      check_keys(value, schema.at(key), here);
    }
  }
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  c.case_id = j.at("case").get<std::string>();
  c.scale = j.at("scale").get<std::string>();
  const auto& p = j.at("pde");
  c.pde.kind = solver::pde_kind_from_string(p.at("kind").get<std::string>());
  c.pde.nu = p.at("nu").get<double>();
  c.pde.forcing = solver::forcing_from_string(p.at("forcing").get<std::string>());
  c.pde.dim = p.at("dim").get<int>();
  c.generation_grid = grid_from(j.at("grid").at("generation"), c.pde.dim);
  c.training_grid = grid_from(j.at("grid").at("training"), c.pde.dim);
  const auto& s = j.at("solver");
  c.solver.dt = s.at("dt").get<double>();
  c.solver.t_end = s.at("t_end").get<double>();
  c.test_t_end = s.at("test_t_end").get<double>();
  c.solver.save_dt = s.at("save_dt").get<double>();
  c.solver.dealias = s.at("dealias").get<bool>();
  c.solver.integrating_factor = s.at("integrating_factor").get<bool>();
  const auto& g = j.at("grf");
  c.grf = {g.at("alpha").get<double>(), g.at("tau").get<double>(), g.at("scale").get<double>()};
  const auto& d = j.at("data");
  c.n_train = d.at("n_train").get<std::size_t>();
  c.n_val = d.at("n_val").get<std::size_t>();
  c.n_test = d.at("n_test").get<std::size_t>();
  const auto& m = j.at("model");
  c.model.K = m.at("K").get<int>();
  c.model.C = m.at("C").get<int>();
  c.model.P = m.at("P").get<int>();
  c.model.mlp_hidden = m.at("mlp_hidden").get<std::vector<int>>();
  c.model.activation = model::activation_from_string(m.at("activation").get<std::string>());
  c.model.dt_model = m.at("dt_model").get<double>();
  c.model.combine = combine_from_string(m.at("combine").get<std::string>());
  const auto& a = m.at("ablation");
  c.model.ablation.no_pi = a.at("no_pi").get<bool>();
  c.model.ablation.no_filter = a.at("no_filter").get<bool>();
  c.model.ablation.no_freq2vec = a.at("no_freq2vec").get<bool>();
  c.model.ablation.no_linear = a.at("no_linear").get<bool>();
  c.model.ablation.euler_time = a.at("euler").get<bool>();
  c.model.grid = c.training_grid;
  c.model.c_in = c.pde.channels();
  const auto& t = j.at("train");
  c.train.iterations = t.at("iterations").get<long>();
  c.train.max_lr = t.at("max_lr").get<double>();
  c.train.n1 = t.at("n1").get<int>();
  c.train.n2 = t.at("n2").get<int>();
  c.train.batch = t.at("batch").get<int>();
  c.train.loss = loss_from_string(t.at("loss").get<std::string>());
  c.train.grad_clip = t.at("grad_clip").get<double>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.train.val_every = t.at("val_every").get<long>();
  c.train.val_frames = t.at("val_frames").get<long>();
  c.train.pct_start = t.at("pct_start").get<double>();
  c.train.div_factor = t.at("div_factor").get<double>();
  c.train.final_div_factor = t.at("final_div_factor").get<double>();
  c.train.max_nonfinite = t.at("max_nonfinite").get<int>();
  const auto& e = j.at("eval");
  c.eval_horizon = e.at("horizon").get<double>();
  c.superres_factor = e.at("superres_factor").get<int>();
  c.out_dir = j.at("out").get<std::string>();
  return c;
}

ExperimentConfig base_case(PdeKind kind, int dim, double length) {
  ExperimentConfig c;
  c.pde.kind = kind;
  c.pde.dim = dim;
  c.pde.nu = kind == PdeKind::kse ? 0.0 : 0.01;
  c.generation_grid = GridSpec::cube(dim, 64, length);
  c.training_grid = GridSpec::cube(dim, 32, length);
  c.grf = kind == PdeKind::nse ? GrfParams{2.5, 7.0, -1.0} : GrfParams{2.0, 5.0, -1.0};
  c.model.c_in = c.pde.channels();
  return c;
}

void set_grids(ExperimentConfig& c, int gen, int train) {
  const double l = c.generation_grid.length[0];
  c.generation_grid = GridSpec::cube(c.pde.dim, gen, l);
  c.training_grid = GridSpec::cube(c.pde.dim, train, l);
}

void set_times(ExperimentConfig& c, double gen_dt, double model_dt, double t_end, double test_t_end = 0.0) {
  c.solver.dt = gen_dt;
  c.solver.save_dt = model_dt;
  c.model.dt_model = model_dt;
  c.solver.t_end = t_end;
  c.test_t_end = test_t_end;
}

}  // namespace

solver::SolverConfig ExperimentConfig::solver_for(solver::Split s) const {
  solver::SolverConfig out = solver;
  if (s == solver::Split::test) out.t_end = test_horizon();
  return out;
}

void ExperimentConfig::validate() const {
  pde.validate();
  generation_grid.validate();
  training_grid.validate();
  if (generation_grid.dim != pde.dim || training_grid.dim != pde.dim)
    throw ValidationError("grid dimension does not match pde.dim");
  if (!generation_grid.commensurate(training_grid))
    throw IncompatibleDomain("generation and training grids must share domain lengths");
  for (int a = 0; a < pde.dim; ++a)
    if (training_grid.points[a] > generation_grid.points[a])
      throw ValidationError("training grid must not be finer than the generation grid");
  solver.validate();
  if (test_t_end > 0.0 && test_t_end < solver.t_end) throw ValidationError("test_t_end must be >= t_end");
  solver_for(solver::Split::test).validate();
  if (n_train < 1) throw ValidationError("n_train must be >= 1");
  model.validate();
  if (!(model.grid == training_grid) || model.c_in != pde.channels())
    throw ValidationError("model grid and channels must follow the training grid and PDE");
  train.validate();
  train::substeps_per_frame(solver.save_dt, model.dt_model);
  if (superres_factor < 0) throw ValidationError("superres_factor must be >= 0");
  if (superres_factor > 1)
    for (int a = 0; a < pde.dim; ++a)
      if (training_grid.points[a] * superres_factor > generation_grid.points[a])
        throw ValidationError("super-resolution grid is finer than the generation grid");
  if (out_dir.empty()) throw ValidationError("out directory must be set");
}

std::vector<std::string> preset_names() { return {"E1", "E2", "E3", "E4", "E5", "E6", "E7"}; }

ExperimentConfig preset(const std::string& id, bool desk) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  ExperimentConfig c;
  if (id == "E1") {
    c = base_case(PdeKind::kse, 2, 12.0 * std::numbers::pi);
    c.n_train = 2, c.n_val = 2, c.n_test = 5;
    if (desk) {
      set_grids(c, 64, 32);
      set_times(c, 1e-3, 1e-2, 5.0);
      c.solver.integrating_factor = true;
    } else {
      set_grids(c, 108, 54);
      set_times(c, 1e-4, 1e-3, 5.0);
    }
  } else if (id == "E2" || id == "E3" || id == "E4" || id == "E5") {
    c = base_case(PdeKind::nse, 2, 1.0);
    c.pde.nu = (id == "E2" || id == "E4") ? 1e-4 : 1e-5;
    c.pde.forcing = (id == "E2" || id == "E3") ? Forcing::f1 : Forcing::f2;
    c.n_train = 5, c.n_val = 2, c.n_test = 5;
    if (desk) {
      set_grids(c, 64, 32);
      set_times(c, 1e-3, 5e-3, 10.0, 15.0);
    } else {
      set_grids(c, 256, 64);
      set_times(c, 1e-4, 5e-3, 10.0, 15.0);
    }
  } else if (id == "E6") {
    c = base_case(PdeKind::burgers, 2, two_pi);
    c.n_train = 5, c.n_val = 2, c.n_test = 5;
    if (desk) {
      set_grids(c, 64, 32);
      set_times(c, 1e-3, 5e-3, 1.0);
      c.superres_factor = 2;
    } else {
      set_grids(c, 512, 128);
      set_times(c, 1e-3, 5e-3, 2.0);
    }
  } else if (id == "E7") {
    c = base_case(PdeKind::burgers, 3, two_pi);
    c.n_train = 5, c.n_val = 2, c.n_test = 5;
    c.train.iterations = 5000;
    if (desk) {
      set_grids(c, 32, 16);
      set_times(c, 5e-3, 5e-2, 5.0);
    } else {
      set_grids(c, 128, 64);
      set_times(c, 5e-3, 5e-2, 5.0);
    }
  } else {
    throw ValidationError("unknown preset '" + id + "' (E1..E7)");
  }
  c.case_id = id;
  c.scale = desk ? "desk" : "full";
  c.model.grid = c.training_grid;
  c.model.c_in = c.pde.channels();
  if (desk) {
    c.n_train = 2;
    if (id != "E6") c.n_val = 1, c.n_test = 2;
    c.model.C = 32;
    c.train.iterations = id == "E7" ? 500 : 2000;
  } else {
    c.model.C = 64;
    c.model.K = 8;
    if (id != "E7") c.train.iterations = 20000;
  }
  c.out_dir = "runs/" + id + (desk ? "-desk" : "");
  c.validate();
  return c;
}

ExperimentConfig parse(const std::string& text, const ExperimentConfig& base, const std::string& what) {
  try {
    const json user = json::parse(text, nullptr, true, true);
    if (!user.is_object()) throw ValidationError(what + ": top level must be an object");
    const json schema = to_json(base);
    check_keys(user, schema, "");
    json merged = schema;
    merged.merge_patch(user);
    ExperimentConfig c = from_json(merged);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(what + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

ExperimentConfig load(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base, path.string());
}

// The output directory says where artifacts go, not what they are, so it is
// left out of the canonical text and the hash.
std::string canonical(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out");
  return j.dump();
}

std::string pretty(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sino::config
