#include "sino/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "sino/error.hpp"
#include "sino/field_ops.hpp"
#include "sino/training.hpp"

namespace sino::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Sums {
  double err = 0.0;
  double ref = 0.0;

  void add(const RealField& pred, const RealField& truth) {
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const double e = truth.data[i] - pred.data[i];
      err += e * e;
      ref += truth.data[i] * truth.data[i];
    }
  }
  double ratio() const { return ref > 0.0 ? std::sqrt(err / ref) : kNaN; }
};

}  // namespace

double relative_l2(const RealField& pred, const RealField& truth) {
  require_same_shape(pred, truth, "relative_l2");
  Sums s;
  s.add(pred, truth);
  if (s.ref == 0.0) throw DegenerateTruth("truth has zero norm");
  return std::sqrt(s.err / s.ref);
}

double relative_l2(const std::vector<RealField>& pred, const std::vector<RealField>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw ValidationError("relative_l2: sequence lengths differ");
  Sums s;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    require_same_shape(pred[k], truth[k], "relative_l2");
    s.add(pred[k], truth[k]);
  }
  if (s.ref == 0.0) throw DegenerateTruth("truth has zero norm");
  return std::sqrt(s.err / s.ref);
}

double pcc(const RealField& pred, const RealField& truth) {
  require_same_shape(pred, truth, "pcc");
  const std::size_t n = pred.data.size();
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += pred.data[i];
    mt += truth.data[i];
  }
  mp /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = pred.data[i] - mp, b = truth.data[i] - mt;
    cov += a * b;
    vp += a * a;
    vt += b * b;
  }
  if (vp == 0.0 || vt == 0.0) throw ZeroVariance(vp == 0.0 ? "prediction is constant" : "truth is constant");
  return std::clamp(cov / std::sqrt(vp * vt), -1.0, 1.0);
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int threads = std::max(1, std::min<int>(solver::thread_budget(), static_cast<int>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
}

TrajectoryReport evaluate_one(const model::Evaluator& ev, const std::vector<RealField>& truth, std::size_t index,
                              long frames, long substeps, double save_dt) {
  TrajectoryReport r;
  r.index = index;
  Sums cum;
  RealField u = truth.front();
  for (long f = 0; f <= frames; ++f) {
    if (f > 0) {
      try {
        for (long s = 0; s < substeps; ++s) u = ev.step(u);
      } catch (const NonFinite& e) {
        r.failed = true;
        r.failed_step = (f - 1) * substeps + 1;
        r.failure = e.what();
        break;
      }
    }
    Sums here;
    here.add(u, truth[f]);
    if (f > 0) {
      cum.err += here.err;
      cum.ref += here.ref;
    }
    r.time.push_back(static_cast<double>(f) * save_dt);
    r.err_sq.push_back(here.err);
    r.ref_sq.push_back(here.ref);
    double c = kNaN;
    try {
      c = pcc(u, truth[f]);
    } catch (const ZeroVariance&) {
    }
    r.pcc.push_back(c);
    r.rel_l2_cum.push_back(f == 0 ? 0.0 : cum.ratio());
  }
  r.rel_l2 = r.failed ? kNaN : cum.ratio();
  return r;
}

}  // namespace

EvalReport evaluate_rollout(const model::SinoParams& params, const model::ModelConfig& cfg,
                            const solver::TrajectoryDataset& test, double horizon, double train_horizon) {
  cfg.validate();
  if (test.trajectories.empty()) throw ValidationError("test set is empty");
  if (test.channels != cfg.c_in) throw ValidationError("test set channel count differs from the model");
  if (!test.grid.commensurate(cfg.grid)) throw IncompatibleDomain("test grid is not commensurate with the model grid");
  const long substeps = train::substeps_per_frame(test.save_dt, cfg.dt_model);
  const long available = static_cast<long>(test.snapshots_per_trajectory()) - 1;
  long frames = available;
  if (horizon > 0.0) {
    frames = std::lround(horizon / test.save_dt);
    if (frames > available) throw ValidationError("horizon exceeds the test trajectories");
  }
  if (frames < 1) throw ValidationError("evaluation needs at least one predicted snapshot");

  EvalReport rep;
  rep.save_dt = test.save_dt;
  rep.horizon = static_cast<double>(frames) * test.save_dt;
  rep.train_horizon = train_horizon > 0.0 ? std::min(train_horizon, rep.horizon) : rep.horizon;
  rep.trajectories.resize(test.trajectories.size());

  const model::Evaluator ev(params, cfg, test.grid);
  parallel_for(test.trajectories.size(), [&](std::size_t i) {
    rep.trajectories[i] = evaluate_one(ev, test.trajectories[i], i, frames, substeps, test.save_dt);
  });

  // Pooled in trajectory order so the result does not depend on scheduling.
  const long train_frames = std::lround(rep.train_horizon / test.save_dt);
  Sums all, inside, outside;
  for (const auto& r : rep.trajectories) {
    if (r.failed) {
      ++rep.failures;
      continue;
    }
    for (long f = 1; f <= frames; ++f) {
      Sums& bucket = f <= train_frames ? inside : outside;
      bucket.err += r.err_sq[f];
      bucket.ref += r.ref_sq[f];
      all.err += r.err_sq[f];
      all.ref += r.ref_sq[f];
    }
  }
  rep.rel_l2 = all.ratio();
  rep.rel_l2_train_window = inside.ratio();
  rep.rel_l2_extrapolation = outside.ratio();
  return rep;
}

SuperResResult superres_eval(const model::SinoParams& params, const model::ModelConfig& cfg,
                             const solver::TrajectoryDataset& fine_test, double horizon) {
  if (!fine_test.grid.commensurate(cfg.grid)) throw IncompatibleDomain("fine grid is not commensurate with the model grid");
  for (int a = 0; a < cfg.grid.dim; ++a)
    if (fine_test.grid.points[a] < cfg.grid.points[a])
      throw IncompatibleDomain("super-resolution grid is coarser than the native grid");
  solver::TrajectoryDataset native = fine_test;
  native.grid = cfg.grid;
  for (auto& traj : native.trajectories)
    for (auto& snap : traj) snap = spectral_resample(snap, cfg.grid);
  SuperResResult out;
  out.native = evaluate_rollout(params, cfg, native, horizon);
  out.fine = evaluate_rollout(params, cfg, fine_test, horizon);
  return out;
}

namespace {

void skip_pgm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

long read_pgm_int(std::istream& in, const std::string& path) {
  skip_pgm_space(in);
  long v = -1;
  if (!(in >> v) || v < 0) throw IoError("malformed PGM header in " + path);
  return v;
}

}  // namespace

Raster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P2" && magic != "P5") throw IoError(path.string() + " is not a P2/P5 graymap");
  Raster r;
  r.width = static_cast<int>(read_pgm_int(in, path.string()));
  r.height = static_cast<int>(read_pgm_int(in, path.string()));
  const long maxval = read_pgm_int(in, path.string());
  if (r.width < 1 || r.height < 1 || maxval < 1 || maxval > 65535) throw IoError("bad PGM dimensions in " + path.string());
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  r.pixels.resize(n);
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) r.pixels[i] = static_cast<double>(read_pgm_int(in, path.string())) / maxval;
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(n * bytes);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IoError("truncated PGM payload in " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      const long v = bytes == 1 ? buf[i] : (static_cast<long>(buf[2 * i]) << 8) | buf[2 * i + 1];
      r.pixels[i] = static_cast<double>(v) / maxval;
    }
  }
  for (double& v : r.pixels) v = std::clamp(v, 0.0, 1.0);
  return r;
}

void write_pgm(const Raster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << r.width << " " << r.height << "\n255\n";
  for (double v : r.pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  if (!out) throw IoError("write failed for " + path.string());
}

Pattern pattern_from_string(const std::string& s) {
  if (s == "star") return Pattern::star;
  if (s == "smiley") return Pattern::smiley;
  if (s == "ai" || s == "AI") return Pattern::ai;
  throw ValidationError("unknown pattern '" + s + "' (star, smiley, ai)");
}

namespace {

double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

// x to the right, y downwards, both in [-0.5, 0.5].
bool inside(Pattern p, double x, double y) {
  switch (p) {
    case Pattern::star: {
      static const auto poly = [] {
        std::vector<std::pair<double, double>> v;
        for (int k = 0; k < 10; ++k) {
          const double r = k % 2 == 0 ? 0.42 : 0.17;
          const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
          v.emplace_back(r * std::cos(a), r * std::sin(a));
        }
        return v;
      }();
      bool in = false;
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
      }
      return in;
    }
    case Pattern::smiley: {
      const double r = std::hypot(x, y);
      if (r > 0.42) return false;
      if (std::hypot(x + 0.15, y + 0.12) < 0.06 || std::hypot(x - 0.15, y + 0.12) < 0.06) return false;
      const double m = std::hypot(x, y + 0.02);
      if (y > 0.08 && m > 0.2 && m < 0.27) return false;
      return true;
    }
    case Pattern::ai: {
      const double w = 0.045;
      // A
      if (seg_dist(x, y, -0.40, 0.30, -0.22, -0.30) < w) return true;
      if (seg_dist(x, y, -0.22, -0.30, -0.04, 0.30) < w) return true;
      if (seg_dist(x, y, -0.33, 0.08, -0.11, 0.08) < w) return true;
      // I
      if (seg_dist(x, y, 0.25, -0.30, 0.25, 0.30) < w) return true;
      if (seg_dist(x, y, 0.13, -0.30, 0.37, -0.30) < w) return true;
      if (seg_dist(x, y, 0.13, 0.30, 0.37, 0.30) < w) return true;
      return false;
    }
  }
  return false;
}

}  // namespace

Raster builtin_raster(Pattern p, int size) {
  if (size < 1) throw ValidationError("raster size must be positive");
  Raster r;
  r.width = r.height = size;
  r.pixels.resize(static_cast<std::size_t>(size) * size);
  // Coverage per pixel: a coarse 4x4 pass, refined to 32x32 wherever a pixel
  // or one of its neighbours is not uniformly in or out. An edge can hide in
  // the margin outside the coarse samples, so the neighbour test matters.
  auto coverage = [&](int row, int col, int ss) {
    int hits = 0;
    for (int a = 0; a < ss; ++a)
      for (int b = 0; b < ss; ++b) {
        const double x = (col + (b + 0.5) / ss) / size - 0.5;
        const double y = (row + (a + 0.5) / ss) / size - 0.5;
        hits += inside(p, x, y) ? 1 : 0;
      }
    return static_cast<double>(hits) / (ss * ss);
  };
  std::vector<double> coarse(r.pixels.size());
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col) coarse[static_cast<std::size_t>(row) * size + col] = coverage(row, col, 4);
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col) {
      const double v = coarse[static_cast<std::size_t>(row) * size + col];
      bool edge = v > 0.0 && v < 1.0;
      for (int dr = -1; dr <= 1 && !edge; ++dr)
        for (int dc = -1; dc <= 1 && !edge; ++dc) {
          const int rr = row + dr, cc = col + dc;
          if (rr >= 0 && rr < size && cc >= 0 && cc < size && coarse[static_cast<std::size_t>(rr) * size + cc] != v) edge = true;
        }
      r.pixels[static_cast<std::size_t>(row) * size + col] = edge ? coverage(row, col, 32) : v;
    }
  return r;
}

RealField pattern_ic(const PatternIC& p) {
  p.grid.validate();
  if (p.grid.dim != 2) throw ValidationError("pattern initial conditions are two-dimensional");
  if (p.raster.width < 1 || p.raster.height < 1 ||
      p.raster.pixels.size() != static_cast<std::size_t>(p.raster.width) * p.raster.height)
    throw ValidationError("pattern raster is empty or malformed");
  if (p.channels < 1) throw ValidationError("pattern channels must be >= 1");
  if (p.cutoff < 1) throw ValidationError("pattern cutoff must be >= 1");

  const int n0 = p.grid.points[0], n1 = p.grid.points[1];
  RealField base(p.grid, 1);
  auto sample = [&](double r, double c) {
    r = std::clamp(r, 0.0, p.raster.height - 1.0);
    c = std::clamp(c, 0.0, p.raster.width - 1.0);
    const int r0 = static_cast<int>(std::floor(r)), c0 = static_cast<int>(std::floor(c));
    const int r1 = std::min(r0 + 1, p.raster.height - 1), c1 = std::min(c0 + 1, p.raster.width - 1);
    const double fr = r - r0, fc = c - c0;
    return (1 - fr) * ((1 - fc) * p.raster.at(r0, c0) + fc * p.raster.at(r0, c1)) +
           fr * ((1 - fc) * p.raster.at(r1, c0) + fc * p.raster.at(r1, c1));
  };
  // Each grid cell averages bilinear samples at raster density; plain point
  // sampling of a finer raster aliases edge energy into the kept modes.
  const int sr = std::max(1, (p.raster.height + n0 - 1) / n0);
  const int sc = std::max(1, (p.raster.width + n1 - 1) / n1);
  for (int i = 0; i < n0; ++i)
    for (int j = 0; j < n1; ++j) {
      double acc = 0.0;
      for (int a = 0; a < sr; ++a)
        for (int b = 0; b < sc; ++b) {
          const double r = (i + (a + 0.5) / sr) * p.raster.height / n0 - 0.5;
          const double c = (j + (b + 0.5) / sc) * p.raster.width / n1 - 0.5;
          acc += sample(r, c);
        }
      base.data[static_cast<std::size_t>(i) * n1 + j] = acc / (sr * sc);
    }

  const FreqGrid freq(p.grid);
  std::vector<double> mask(freq.modes());
  for (std::size_t m = 0; m < freq.modes(); ++m) mask[m] = (m != 0 && freq.linf(m) <= p.cutoff) ? 1.0 : 0.0;
  base = low_pass(base, mask);  // also removes the mean

  double target = p.amplitude;
  if (!(target > 0.0)) {
    const RealField ref = grf_sample(p.grid, p.grf_seed, p.grf);
    double s = 0.0;
    for (double v : ref.data) s += v * v;
    target = std::sqrt(s / static_cast<double>(ref.data.size()));
  }
  double s = 0.0;
  for (double v : base.data) s += v * v;
  const double rms = std::sqrt(s / static_cast<double>(base.data.size()));
  RealField out(p.grid, p.channels);
  for (int c = 0; c < p.channels; ++c)
    for (std::size_t k = 0; k < base.data.size(); ++k) out.channel(c)[k] = rms > 0.0 ? base.data[k] * (target / rms) : 0.0;
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void export_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "trajectory,time_s,pcc,rel_l2_cum\n";
  for (const auto& t : report.trajectories)
    for (std::size_t k = 0; k < t.time.size(); ++k)
      os << t.index << ',' << format_double(t.time[k]) << ',' << format_double(t.pcc[k]) << ','
         << format_double(t.rel_l2_cum[k]) << '\n';
  write_text(path, os.str());
}

void export_summary_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "trajectory,rel_l2,failed,failed_step,horizon_s,train_horizon_s\n";
  for (const auto& t : report.trajectories)
    os << t.index << ',' << format_double(t.rel_l2) << ',' << (t.failed ? 1 : 0) << ',' << t.failed_step << ','
       << format_double(report.horizon) << ',' << format_double(report.train_horizon) << '\n';
  os << "all," << format_double(report.rel_l2) << ',' << report.failures << ",-1," << format_double(report.horizon) << ','
     << format_double(report.train_horizon) << '\n';
  os << "train_window," << format_double(report.rel_l2_train_window) << ",,,,\n";
  os << "extrapolation," << format_double(report.rel_l2_extrapolation) << ",,,,\n";
  write_text(path, os.str());
}

}  // namespace sino::eval
