#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include "helpers.hpp"
#include "sino/cli.hpp"
#include "sino/solvers.hpp"

using namespace sino;
using namespace sino::testing;
namespace fs = std::filesystem;

namespace {

// Burgers at toy size: 32^2 simulated, 16^2 trained, 20 snapshots.
constexpr const char* kTiny = R"({
  "grid": {"generation": {"points": 32, "length": "2pi"}, "training": {"points": 16, "length": "2pi"}},
  "solver": {"dt": 1e-3, "save_dt": 5e-3, "t_end": 0.1},
  "data": {"n_train": 1, "n_val": 1, "n_test": 2},
  "model": {"C": 4, "K": 3, "mlp_hidden": [8]},
  "train": {"iterations": 24, "n1": 1, "n2": 2, "val_every": 8},
  "eval": {"superres_factor": 0}
})";

struct Dir {
  fs::path path;
  explicit Dir(const std::string& name)
      : path(fs::temp_directory_path() / ("sino_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Dir() { fs::remove_all(path); }
};

fs::path write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
  return p;
}

struct Run {
  int code;
  std::string out, err;
};

Run sino_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sino");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// relative path -> (crc, bytes)
std::map<std::string, std::string> manifest_entries(const fs::path& p, std::string* hash = nullptr) {
  std::map<std::string, std::string> m;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string a, b, c;
    ls >> a >> b >> c;
    if (a == "config_hash") {
      if (hash) *hash = b;
      continue;
    }
    EXPECT_EQ(m.count(a), 0u) << a << " listed twice";
    m[a] = b + " " + c;
  }
  return m;
}

std::string file_crc(const fs::path& p) {
  const auto bytes = io::read_file(p);
  // SINO containers: the CRC covers everything before the trailing checksum.
  const std::string s(bytes.begin(), bytes.begin() + 4);
  const std::size_t n = s == "SINO" ? bytes.size() - 4 : bytes.size();
  return io::crc_hex(io::crc32({bytes.data(), n}));
}

}  // namespace

TEST(CliGenerate, ManifestIsCompleteAndRerunsAreIdentical) {
  Dir d("gen");
  const auto cfg = write_text(d.path / "tiny.json", kTiny);
  const auto a = d.path / "a";
  const std::vector<std::string> args{"generate", "--preset", "E6", "--desk", "--config", cfg.string(), "--out", a.string()};
  ASSERT_EQ(sino_cli(args).code, 0);
  std::map<std::string, std::string> first;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) first[fs::relative(e.path(), a).generic_string()] = slurp(e.path());
  ASSERT_EQ(sino_cli(args).code, 0);
  std::string hash;
  const auto entries = manifest_entries(a / "manifest.txt", &hash);
  EXPECT_EQ(hash.size(), 16u);
  // Every written file appears exactly once, with its checksum and size.
  std::set<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().filename() != "manifest.txt")
      on_disk.insert(fs::relative(e.path(), a).generic_string());
  std::set<std::string> listed;
  for (const auto& [rel, v] : entries) {
    listed.insert(rel);
    EXPECT_EQ(v, file_crc(a / rel) + " " + std::to_string(fs::file_size(a / rel))) << rel;
  }
  EXPECT_EQ(listed, on_disk);
  EXPECT_EQ(first.size(), listed.size() + 1);
  for (const auto& [rel, bytes] : first) EXPECT_EQ(slurp(a / rel), bytes) << rel;
}

TEST(CliGenerate, PresetSplitSizes) {
  // Paper-scale E6 counts with the grids shrunk so the run stays small.
  Dir d("e6");
  const auto cfg = write_text(d.path / "small.json", R"({
    "grid": {"generation": {"points": 16, "length": "2pi"}, "training": {"points": 8, "length": "2pi"}},
    "solver": {"dt": 1e-3, "save_dt": 5e-3, "t_end": 0.01}})");
  ASSERT_EQ(sino_cli({"generate", "--preset", "E6", "--config", cfg.string(), "--out", d.path.string()}).code, 0);
  const std::map<std::string, std::size_t> want{{"train", 5}, {"val", 2}, {"test", 5}};
  for (const auto& [split, n] : want) EXPECT_EQ(io::read_dataset(d.path / "data", split).trajectories.size(), n);
}

TEST(CliTrain, ResumeMatchesUninterruptedRunAndEchoesAblations) {
  Dir d("train");
  const auto cfg = write_text(d.path / "tiny.json", kTiny);
  const auto base = std::vector<std::string>{"--preset", "E6", "--desk", "--config", cfg.string(), "--no-pi"};
  auto with = [&](std::vector<std::string> head, const fs::path& out) {
    head.insert(head.end(), base.begin(), base.end());
    head.insert(head.end(), {"--out", out.string()});
    return head;
  };
  const auto a = d.path / "a", b = d.path / "b";
  ASSERT_EQ(sino_cli(with({"generate"}, a)).code, 0);
  fs::copy(a, b, fs::copy_options::recursive);
  ASSERT_EQ(sino_cli(with({"train"}, a)).code, 0);
  auto first = sino_cli(with({"train", "--stop-after", "11"}, b));
  ASSERT_EQ(first.code, 0);
  EXPECT_NE(first.out.find("stopped at iteration 11"), std::string::npos) << first.out;
  ASSERT_EQ(sino_cli(with({"train", "--resume"}, b)).code, 0);
  EXPECT_EQ(slurp(a / "train" / "history.csv"), slurp(b / "train" / "history.csv"));
  EXPECT_EQ(slurp(a / "train" / "best.sinockpt"), slurp(b / "train" / "best.sinockpt"));
  // The checkpoint alone re-instantiates the ablated model.
  const auto m = cli::load_model(a / "train" / "best.sinockpt");
  EXPECT_TRUE(m.cfg.model.ablation.no_pi);
  EXPECT_FALSE(m.cfg.model.ablation.no_filter);
  EXPECT_NE(io::read_checkpoint(a / "train" / "best.sinockpt").config.find("\"no_pi\":true"), std::string::npos);
}

TEST(CliEvaluate, ConstructedModelAndDistillation) {
  Dir d("eval");
  // Simulated on the model grid: downsampling a finer solution would add a
  // truncation error that no 16^2 operator can remove.
  const std::string same = std::string(kTiny).replace(std::string(kTiny).find("\"points\": 32"), 12, "\"points\": 16");
  const auto cfg = write_text(d.path / "tiny.json", same);
  const std::vector<std::string> common{"--preset", "E6", "--desk", "--config", cfg.string(), "--out", d.path.string()};
  auto args = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  ASSERT_EQ(sino_cli(args({"generate"})).code, 0);
  const auto r = sino_cli(args({"evaluate", "--constructed"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rel = std::stod(r.out.substr(r.out.find("rel_l2 ") + 7));
  EXPECT_LT(rel, 1e-6);
  const std::string summary = slurp(d.path / "eval" / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')).find("rel_l2") != std::string::npos, true);

  // Distilling the constructed teacher reproduces the reference solver.
  const auto teacher = (d.path / "eval" / "constructed.sinockpt").string();
  ASSERT_EQ(sino_cli(args({"distill-generate", "--teacher", teacher, "--n-traj", "2", "--cadence", "0.01"})).code, 0);
  const auto syn = io::read_dataset(d.path / "distill", "synthetic");
  ASSERT_EQ(syn.trajectories.size(), 2u);
  EXPECT_EQ(syn.save_dt, 0.01);
  const auto ecfg = config::parse(same, config::preset("E6", true));
  solver::SolverConfig sc = ecfg.solver;
  sc.save_dt = 0.01;
  for (const auto& traj : syn.trajectories) {
    const auto ref = solver::integrate(ecfg.pde, sc, traj.front());
    ASSERT_EQ(ref.size(), traj.size());
    for (std::size_t s = 0; s < traj.size(); ++s)
      EXPECT_LT(max_abs_diff(ref[s], traj[s]), 1e-6 * max_abs(ref[s])) << "snapshot " << s;
  }
  // Cadence must be a whole number of model steps.
  EXPECT_EQ(sino_cli(args({"distill-generate", "--teacher", teacher, "--n-traj", "1", "--cadence", "0.007"})).code, 2);
  ASSERT_EQ(sino_cli(args({"distill-generate", "--teacher", teacher, "--n-traj", "0"})).code, 0);
  const auto empty = io::read_dataset(d.path / "distill", "synthetic");
  EXPECT_TRUE(empty.trajectories.empty());
  EXPECT_EQ(empty.grid, ecfg.training_grid);

  // A model on a different grid than the data.
  const auto other = write_text(d.path / "other.json", R"({
    "grid": {"generation": {"points": 8, "length": "2pi"}, "training": {"points": 8, "length": "2pi"}},
    "solver": {"dt": 1e-3, "save_dt": 5e-3, "t_end": 0.05}, "data": {"n_train": 1, "n_val": 1, "n_test": 1}, "eval": {"superres_factor": 0}})");
  const std::vector<std::string> o{"--preset", "E6", "--desk", "--config", other.string(), "--out",
                                   (d.path / "coarse").string()};
  ASSERT_EQ(sino_cli({"generate", o[0], o[1], o[2], o[3], o[4], o[5], o[6]}).code, 0);
  const auto mismatch = sino_cli({"evaluate", "--checkpoint", teacher, o[0], o[1], o[2], o[3], o[4], o[5], o[6]});
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_NE(mismatch.err.find("16x16"), std::string::npos) << mismatch.err;
}

TEST(CliSweep, GridRowsCarryTheirConfigHash) {
  Dir d("sweep");
  const auto cfg = write_text(d.path / "tiny.json", kTiny);
  const std::vector<std::string> common{"--preset", "E6", "--desk", "--config", cfg.string(), "--out", d.path.string()};
  auto args = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  ASSERT_EQ(sino_cli(args({"generate"})).code, 0);
  const auto base = config::parse(kTiny, config::preset("E6", true));
  std::ostringstream log;
  const auto rows = cli::cmd_sweep(base, d.path, {{}, {2, 4}, {2, 3}}, log);
  ASSERT_EQ(rows.size(), 4u);
  std::set<std::string> hashes;
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "ok") << r.point;
    auto c = base;
    c.model.C = r.C;
    c.model.K = r.K;
    EXPECT_EQ(r.config_hash, config::hash(c)) << r.point;
    hashes.insert(r.config_hash);
  }
  EXPECT_EQ(hashes.size(), 4u);
  const std::string csv = slurp(d.path / "sweep" / "summary.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(CliExitCodes, MapErrorKinds) {
  Dir d("codes");
  EXPECT_EQ(sino_cli({"generate", "--preset", "E9"}).code, 2);
  EXPECT_EQ(sino_cli({"generate", "--bogus"}).code, 2);
  EXPECT_EQ(sino_cli({"generate", "--preset", "E6", "--config", (d.path / "missing.json").string()}).code, 4);
  const auto bad = write_text(d.path / "bad.json", R"({"model": {"K": -1}})");
  EXPECT_EQ(sino_cli({"generate", "--preset", "E6", "--config", bad.string(), "--out", d.path.string()}).code, 2);
  // Training without generated data.
  const auto tiny = write_text(d.path / "tiny.json", kTiny);
  EXPECT_EQ(sino_cli({"train", "--preset", "E6", "--config", tiny.string(), "--out", (d.path / "none").string()}).code,
            4);
  // Explicit Euler far past its stability limit.
  const auto blow = write_text(d.path / "blow.json", R"({
    "grid": {"generation": {"points": 32, "length": "2pi"}, "training": {"points": 16, "length": "2pi"}},
    "pde": {"nu": 1.0}, "solver": {"dt": 0.5, "save_dt": 0.5, "t_end": 50},
    "data": {"n_train": 1, "n_val": 1, "n_test": 1}})");
  const auto r = sino_cli({"generate", "--preset", "E6", "--config", blow.string(), "--out", d.path.string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
}
