#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "sino/error.hpp"
#include "sino/evaluation.hpp"
#include "sino/field_ops.hpp"

using namespace sino;
using namespace sino::eval;
using namespace sino::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sino_eval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

// Burgers trajectories from bandlimited initial states.
solver::TrajectoryDataset burgers_set(const GridSpec& g, std::size_t n, double amp, double t_end, int band) {
  solver::TrajectoryDataset ds;
  ds.grid = g;
  ds.channels = 2;
  ds.save_dt = 1e-2;
  const solver::PDESpec spec{solver::PdeKind::burgers, 0.01, solver::Forcing::none, 2};
  for (std::size_t t = 0; t < n; ++t) {
    RealField u0 = bandlimit(random_field(g, 2, 30 + t, {2.0, 5.0, -1.0}), band);
    for (double& v : u0.data) v *= amp;
    ds.trajectories.push_back(solver::integrate(spec, {1e-3, t_end, 1e-2, true, false}, u0));
  }
  return ds;
}

}  // namespace

TEST(Metrics, RelativeL2) {
  const GridSpec g = GridSpec::cube(2, 4, 1.0);
  RealField y(g, 1), yh(g, 1), z(g, 1);
  y.data[0] = 1.0;
  yh.data[1] = 1.0;
  EXPECT_DOUBLE_EQ(relative_l2(yh, y), std::sqrt(2.0));
  EXPECT_EQ(relative_l2(y, y), 0.0);
  EXPECT_EQ(relative_l2(z, y), 1.0);
  EXPECT_THROW(relative_l2(y, z), DegenerateTruth);
  const RealField a = random_field(g, 1, 1), b = random_field(g, 1, 2);
  RealField a3 = a, b3 = b;
  for (double& v : a3.data) v *= -3.0;
  for (double& v : b3.data) v *= -3.0;
  EXPECT_NEAR(relative_l2(a3, b3), relative_l2(a, b), 1e-14);
  // Pooled, not averaged.
  EXPECT_DOUBLE_EQ(relative_l2(std::vector<RealField>{yh, y}, std::vector<RealField>{y, y}), 1.0);
}

TEST(Metrics, Pcc) {
  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  const RealField y = random_field(g, 1, 3);
  RealField neg = y, affine = y, c(g, 1);
  for (double& v : neg.data) v = -v;
  for (double& v : affine.data) v = 2.5 * v + 7.0;
  EXPECT_NEAR(pcc(y, y), 1.0, 1e-15);
  EXPECT_NEAR(pcc(neg, y), -1.0, 1e-15);
  EXPECT_NEAR(pcc(affine, y), pcc(y, y), 1e-12);
  const RealField s = sample(g, [](const double* x) { return std::sin(x[0]); });
  const RealField co = sample(g, [](const double* x) { return std::cos(x[0]); });
  EXPECT_LT(std::abs(pcc(s, co)), 1e-10);
  EXPECT_THROW(pcc(c, y), ZeroVariance);
}

TEST(Rollout, ConstructedModelIsExact) {
  const GridSpec g = GridSpec::cube(2, 32, kTwoPi);
  const auto set = burgers_set(g, 2, 1.0, 0.1, 10);
  const auto cm = model::burgers_exact_model(g, 0.01, 1e-3);
  const EvalReport r = evaluate_rollout(cm.params, cm.cfg, set, 0.0, 0.05);
  EXPECT_LT(r.rel_l2, 1e-6);
  EXPECT_EQ(r.failures, 0u);
  ASSERT_EQ(r.trajectories.size(), 2u);
  for (const auto& t : r.trajectories) {
    EXPECT_EQ(t.time.size(), 11u);
    for (double p : t.pcc) EXPECT_NEAR(p, 1.0, 1e-10);
  }
  EXPECT_LT(r.rel_l2_extrapolation, 1e-6);
  EXPECT_LT(r.rel_l2_train_window, 1e-6);
}

TEST(Rollout, NoChangeBaselineAndDeterminism) {
  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  solver::TrajectoryDataset set = burgers_set(g, 1, 1.0, 0.5, 7);
  // Identical trajectories give identical per-trajectory metrics.
  set.trajectories.push_back(set.trajectories[0]);
  model::ModelConfig cfg;
  cfg.grid = g;
  cfg.c_in = 2;
  cfg.K = 2;
  cfg.C = 2;
  cfg.mlp_hidden = {4};
  cfg.dt_model = 1e-2;
  const model::SinoParams zero = model::zero_params(cfg);
  const EvalReport a = evaluate_rollout(zero, cfg, set, 0.0), b = evaluate_rollout(zero, cfg, set, 0.0);
  const auto& t0 = a.trajectories[0];
  EXPECT_EQ(t0.rel_l2_cum[0], 0.0);
  EXPECT_GT(t0.rel_l2_cum.back(), t0.rel_l2_cum[1]);
  for (double p : t0.pcc) EXPECT_TRUE(p >= -1.0 && p <= 1.0);
  EXPECT_EQ(a.trajectories[1].rel_l2, t0.rel_l2);
  EXPECT_EQ(a.trajectories[1].pcc, t0.pcc);
  EXPECT_EQ(a.rel_l2, b.rel_l2);
  EXPECT_TRUE(std::isnan(a.rel_l2_extrapolation));  // no train horizon given
  EXPECT_EQ(evaluate_rollout(zero, cfg, set, 0.2).trajectories[0].time.size(), 21u);
}

TEST(Rollout, FailureIsRecordedNotThrown) {
  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  const auto set = burgers_set(g, 2, 1.0, 0.5, 7);
  auto cm = model::burgers_exact_model(g, 0.01, 1e-2);
  for (double& v : cm.params.out.weight.data) v *= 1e6;  // explosive
  const EvalReport r = evaluate_rollout(cm.params, cm.cfg, set, 0.0);
  EXPECT_EQ(r.failures, 2u);
  EXPECT_TRUE(r.trajectories[0].failed);
  EXPECT_GE(r.trajectories[0].failed_step, 1);
}

TEST(SuperRes, SmallAmplitudeTransfersExactly) {
  // Small amplitude keeps the dynamics inside the native band, so the native
  // and fine rollouts of the exact model see the same truth.
  const GridSpec coarse = GridSpec::cube(2, 16, kTwoPi), fine = GridSpec::cube(2, 32, kTwoPi);
  const auto set = burgers_set(fine, 1, 1e-6, 0.1, 4);
  const auto cm = model::burgers_exact_model(coarse, 0.01, 1e-3);
  const SuperResResult r = superres_eval(cm.params, cm.cfg, set, 0.0);
  EXPECT_LT(r.native.rel_l2, 1e-8);
  EXPECT_LT(r.fine.rel_l2, 1e-8);
  EXPECT_LT(std::abs(r.native.rel_l2 - r.fine.rel_l2), 1e-8);
}

TEST(SuperRes, NativeGridReproducesRollout) {
  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  const auto set = burgers_set(g, 1, 1.0, 0.1, 7);
  const auto cm = model::burgers_exact_model(g, 0.01, 1e-3);
  const SuperResResult r = superres_eval(cm.params, cm.cfg, set, 0.0);
  EXPECT_EQ(r.native.rel_l2, evaluate_rollout(cm.params, cm.cfg, set, 0.0).rel_l2);
  EXPECT_EQ(r.fine.rel_l2, r.native.rel_l2);
  solver::TrajectoryDataset other = set;
  other.grid = GridSpec::cube(2, 32, 1.0);
  EXPECT_THROW(superres_eval(cm.params, cm.cfg, other, 0.0), IncompatibleDomain);
}

TEST(Pattern, UniformRasterGivesZero) {
  PatternIC p;
  p.raster = {8, 8, std::vector<double>(64, 0.6)};
  p.grid = GridSpec::cube(2, 32, 1.0);
  p.amplitude = 1.0;
  EXPECT_LT(max_abs(pattern_ic(p)), 1e-15);
}

TEST(Pattern, AmplitudeBandAndMean) {
  for (Pattern pat : {Pattern::star, Pattern::smiley, Pattern::ai}) {
    PatternIC p;
    p.raster = builtin_raster(pat, 128);
    p.grid = GridSpec::cube(2, 64, 1.0);
    p.amplitude = 0.7;
    p.cutoff = 8;
    p.channels = 2;
    const RealField f = pattern_ic(p);
    double s = 0, mean = 0;
    for (double v : f.channel(0)) s += v * v, mean += v;
    EXPECT_NEAR(std::sqrt(s / p.grid.size()), 0.7, 1e-10);
    EXPECT_LT(std::abs(mean / p.grid.size()), 1e-14);
    const SpectralField sp = forward_transform(f);
    const FreqGrid freq(p.grid);
    for (std::size_t m = 0; m < freq.modes(); ++m)
      if (freq.linf(m) > 8) EXPECT_LT(std::abs(sp.coeffs[m]), 1e-10);
    EXPECT_EQ(f.channel(0)[5], f.channel(1)[5]);
  }
  // Default amplitude: RMS of the reference GRF draw.
  PatternIC p;
  p.raster = builtin_raster(Pattern::star, 64);
  p.grid = GridSpec::cube(2, 32, 1.0);
  const RealField ref = grf_sample(p.grid, p.grf_seed, p.grf);
  double rs = 0, fs2 = 0;
  for (double v : ref.data) rs += v * v;
  for (double v : pattern_ic(p).data) fs2 += v * v;
  EXPECT_NEAR(fs2, rs, 1e-10 * rs);
}

TEST(Pattern, IndependentOfRasterResolution) {
  for (Pattern pat : {Pattern::star, Pattern::smiley, Pattern::ai}) {
    PatternIC a, b;
    a.raster = builtin_raster(pat, 256);
    b.raster = builtin_raster(pat, 512);
    a.grid = b.grid = GridSpec::cube(2, 64, 1.0);
    a.amplitude = b.amplitude = 1.0;
    const RealField fa = pattern_ic(a), fb = pattern_ic(b);
    double d = 0;
    for (std::size_t i = 0; i < fa.data.size(); ++i) d += (fa.data[i] - fb.data[i]) * (fa.data[i] - fb.data[i]);
    EXPECT_LT(std::sqrt(d / fa.data.size()), 1e-3) << static_cast<int>(pat);
  }
}

TEST(Pgm, RoundTripBothEncodings) {
  const fs::path dir = temp_dir("pgm");
  Raster r{5, 3, {}};
  for (int i = 0; i < 15; ++i) r.pixels.push_back(i / 14.0);
  write_pgm(r, dir / "a.pgm");
  const Raster back = read_pgm(dir / "a.pgm");
  ASSERT_EQ(back.width, 5);
  ASSERT_EQ(back.height, 3);
  for (int i = 0; i < 15; ++i) EXPECT_NEAR(back.pixels[i], r.pixels[i], 0.5 / 255);  // 8-bit on disk
  {
    std::ofstream out(dir / "b.pgm");
    out << "P2\n# comment\n3 2\n4\n0 1 2\n3 4 0\n";
  }
  const Raster ascii = read_pgm(dir / "b.pgm");
  EXPECT_EQ(ascii.width, 3);
  EXPECT_DOUBLE_EQ(ascii.at(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(ascii.at(0, 2), 0.5);
  {
    std::ofstream out(dir / "c.pgm");
    out << "P6\n1 1\n255\n";
  }
  EXPECT_THROW(read_pgm(dir / "c.pgm"), Error);
  EXPECT_THROW(read_pgm(dir / "missing.pgm"), IoError);
  fs::remove_all(dir);
}

TEST(Csv, SchemaRowsAndBitExactRoundTrip) {
  const fs::path dir = temp_dir("csv");
  EvalReport empty;
  export_csv(empty, dir / "empty.csv");
  EXPECT_EQ(lines(dir / "empty.csv"), std::vector<std::string>{"trajectory,time_s,pcc,rel_l2_cum"});

  const GridSpec g = GridSpec::cube(2, 16, kTwoPi);
  const auto set = burgers_set(g, 2, 1.0, 0.1, 7);
  const auto cm = model::burgers_exact_model(g, 0.01, 1e-2);
  const EvalReport r = evaluate_rollout(cm.params, cm.cfg, set, 0.0);
  export_csv(r, dir / "r.csv");
  const auto rows = lines(dir / "r.csv");
  ASSERT_EQ(rows.size(), 1 + 2 * 11u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = split(rows[i]);
    ASSERT_EQ(f.size(), 4u);
    const auto& t = r.trajectories[(i - 1) / 11];
    const std::size_t k = (i - 1) % 11;
    EXPECT_EQ(std::strtod(f[1].c_str(), nullptr), t.time[k]);
    EXPECT_EQ(std::strtod(f[2].c_str(), nullptr), t.pcc[k]);
    EXPECT_EQ(std::strtod(f[3].c_str(), nullptr), t.rel_l2_cum[k]);
  }
  std::ifstream raw(dir / "r.csv", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(raw)), {});
  EXPECT_EQ(bytes.find('\r'), std::string::npos);
  export_summary_csv(r, dir / "s.csv");
  EXPECT_EQ(lines(dir / "s.csv").size(), 1 + 2 + 3u);
  EXPECT_EQ(format_double(std::nan("")), "NaN");
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_THROW(export_csv(r, dir / "no" / "such" / "x.csv"), IoError);
  fs::remove_all(dir);
}
