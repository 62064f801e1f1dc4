#include "sino/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "sino/error.hpp"

namespace sino::io {

static_assert(std::endian::native == std::endian::little, "containers are written in native little-endian order");

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw IoError("cannot size " + path.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  in.seekg(0);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), size)) throw IoError("read failed for " + path.string());
  return bytes;
}

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::span<const unsigned char> b, std::string what) : b_(b), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  [[noreturn]] void fail(const std::string& why) const { throw IoError(what_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated");
  }
  std::span<const unsigned char> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

constexpr char kDataMagic[8] = {'S', 'I', 'N', 'O', 'D', 'A', 'T', 'A'};
constexpr char kCkptMagic[8] = {'S', 'I', 'N', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void check_magic(Reader& r, const char (&magic)[8]) {
  char m[8];
  r.raw(m, 8);
  if (std::memcmp(m, magic, 8) != 0) r.fail("bad magic");
}

}  // namespace

std::vector<unsigned char> encode_fields(const FieldFile& f) {
  f.grid.validate();
  if (f.channels < 1) throw ValidationError("field container needs at least one channel");
  Writer w;
  w.raw(kDataMagic, 8);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(f.grid.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.channels));
  for (int p : f.grid.points) w.put<std::uint64_t>(static_cast<std::uint64_t>(p));
  for (double l : f.grid.length) w.put<double>(l);
  w.put<std::uint64_t>(f.snapshots.size());
  w.put<double>(f.cadence);
  const std::size_t payload_start = w.size();
  for (const auto& s : f.snapshots) {
    if (!(s.grid == f.grid) || s.channels != f.channels) throw ValidationError("snapshot shape differs from the container");
    w.raw(s.data.data(), s.data.size() * sizeof(double));
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32({bytes.data() + payload_start, bytes.size() - payload_start});
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

FieldFile decode_fields(std::span<const unsigned char> bytes, const std::string& what) {
  Reader r(bytes, what);
  check_magic(r, kDataMagic);
  if (r.get<std::uint32_t>() != kVersion) r.fail("unsupported version");
  FieldFile f;
  f.grid.dim = r.get<std::uint8_t>();
  if (f.grid.dim < 1 || f.grid.dim > 3) r.fail("bad dimension");
  f.channels = static_cast<int>(r.get<std::uint32_t>());
  for (int a = 0; a < f.grid.dim; ++a) {
    const auto p = r.get<std::uint64_t>();
    if (p > (1u << 20)) r.fail("implausible grid size");
    f.grid.points.push_back(static_cast<int>(p));
  }
  for (int a = 0; a < f.grid.dim; ++a) f.grid.length.push_back(r.get<double>());
  try {
    f.grid.validate();
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }
  const auto snapshots = r.get<std::uint64_t>();
  f.cadence = r.get<double>();
  const std::size_t per = f.grid.size() * static_cast<std::size_t>(f.channels);
  if (f.channels < 1 || per == 0) r.fail("bad channel count");
  if (snapshots > r.remaining() / (per * sizeof(double)) || r.remaining() != snapshots * per * sizeof(double) + 4)
    r.fail("payload length does not match the header");
  const std::size_t payload_start = r.pos();
  const std::uint32_t crc = crc32({bytes.data() + payload_start, snapshots * per * sizeof(double)});
  f.snapshots.reserve(snapshots);
  for (std::uint64_t s = 0; s < snapshots; ++s) {
    RealField field(f.grid, f.channels);
    r.raw(field.data.data(), per * sizeof(double));
    f.snapshots.push_back(std::move(field));
  }
  if (r.get<std::uint32_t>() != crc) r.fail("CRC mismatch");
  return f;
}

void write_fields(const std::filesystem::path& path, const FieldFile& f) {
  const auto bytes = encode_fields(f);
  write_file_atomic(path, bytes);
}

FieldFile read_fields(const std::filesystem::path& path) { return decode_fields(read_file(path), path.string()); }

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kCkptMagic, 8);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(c.config.size());
  w.raw(c.config.data(), c.config.size());
  w.put<std::uint64_t>(c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    std::size_t n = 1;
    for (auto d : t.shape) {
      w.put<std::uint64_t>(d);
      n *= d;
    }
    if (n != t.data.size()) throw ValidationError("tensor " + name + " data does not match its shape");
    w.raw(t.data.data(), t.data.size() * sizeof(double));
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32({bytes.data() + 8, bytes.size() - 8});
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::string& what) {
  if (bytes.size() < 12) throw IoError(what + ": truncated");
  {
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32({bytes.data() + 8, bytes.size() - 12}) != stored) {
      Reader probe(bytes, what);
      check_magic(probe, kCkptMagic);
      throw IoError(what + ": CRC mismatch");
    }
  }
  Reader r(bytes.first(bytes.size() - 4), what);
  check_magic(r, kCkptMagic);
  if (r.get<std::uint32_t>() != kVersion) r.fail("unsupported version");
  Checkpoint c;
  const auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) r.fail("truncated config");
  c.config.resize(len);
  r.raw(c.config.data(), len);
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto nlen = r.get<std::uint32_t>();
    if (nlen > r.remaining()) r.fail("truncated tensor name");
    std::string name(nlen, '\0');
    r.raw(name.data(), nlen);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible tensor rank");
    model::Tensor t;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<std::uint64_t>());
      n *= t.shape.back();
    }
    if (n > r.remaining() / sizeof(double)) r.fail("truncated tensor " + name);
    t.data.resize(n);
    r.raw(t.data.data(), n * sizeof(double));
    if (!c.tensors.emplace(name, std::move(t)).second) r.fail("duplicate tensor " + name);
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  write_file_atomic(path, bytes);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void put_params(Checkpoint& c, const model::SinoParams& p, const std::string& prefix) {
  model::for_each_tensor(p, [&](const std::string& name, const model::Tensor& t) { c.tensors[prefix + name] = t; });
}

model::SinoParams get_params(const Checkpoint& c, const model::ModelConfig& cfg, const std::string& prefix, bool exact) {
  model::SinoParams p = model::zero_params(cfg);
  std::size_t used = 0;
  model::for_each_tensor(p, [&](const std::string& name, model::Tensor& t) {
    const auto it = c.tensors.find(prefix + name);
    if (it == c.tensors.end()) throw ValidationError("checkpoint is missing tensor " + prefix + name);
    if (it->second.shape != t.shape) throw ValidationError("checkpoint tensor " + prefix + name + " has the wrong shape");
    t.data = it->second.data;
    ++used;
  });
  if (exact) {
    std::size_t under_prefix = 0;
    for (const auto& [name, t] : c.tensors)
      if (name.compare(0, prefix.size(), prefix) == 0) ++under_prefix;
    if (under_prefix != used) throw ValidationError("checkpoint holds tensors that the model config does not define");
  }
  model::check_shapes(p, cfg);
  return p;
}

std::string crc_hex(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

DatasetPaths dataset_paths(const std::filesystem::path& dir, const std::string& name) {
  return {dir / (name + ".sinodata"), dir / (name + ".meta.json")};
}

namespace {

using nlohmann::json;

json grid_json(const GridSpec& g) { return {{"points", g.points}, {"length", g.length}}; }

GridSpec grid_from(const json& j) {
  GridSpec g;
  g.points = j.at("points").get<std::vector<int>>();
  g.length = j.at("length").get<std::vector<double>>();
  g.dim = static_cast<int>(g.points.size());
  return g;
}

}  // namespace

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const std::string& name,
                                                 const solver::TrajectoryDataset& ds) {
  const std::size_t per = ds.snapshots_per_trajectory();
  FieldFile f{ds.grid, ds.channels, ds.save_dt, {}};
  f.snapshots.reserve(per * ds.trajectories.size());
  for (const auto& traj : ds.trajectories) {
    if (traj.size() != per) throw ValidationError("trajectories in one split must have equal length");
    f.snapshots.insert(f.snapshots.end(), traj.begin(), traj.end());
  }
  const auto& m = ds.meta;
  json meta = {
      {"split", solver::to_string(m.split)},
      {"pde", {{"kind", solver::to_string(m.pde.kind)}, {"nu", m.pde.nu}, {"forcing", solver::to_string(m.pde.forcing)},
               {"dim", m.pde.dim}}},
      {"solver", {{"dt", m.solver.dt}, {"t_end", m.solver.t_end}, {"save_dt", m.solver.save_dt},
                  {"dealias", m.solver.dealias}, {"integrating_factor", m.solver.integrating_factor}}},
      {"generation_grid", grid_json(m.generation_grid)},
      {"seeds", m.seeds},
      {"trajectories", ds.trajectories.size()},
      {"snapshots_per_trajectory", per},
  };
  const auto paths = dataset_paths(dir, name);
  write_fields(paths.container, f);
  const std::string text = meta.dump(2) + "\n";
  write_file_atomic(paths.meta, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
  return {paths.container, paths.meta};
}

solver::TrajectoryDataset read_dataset(const std::filesystem::path& dir, const std::string& name) {
  const auto paths = dataset_paths(dir, name);
  FieldFile f = read_fields(paths.container);
  const auto raw = read_file(paths.meta);
  solver::TrajectoryDataset ds;
  try {
    const json meta = json::parse(raw.begin(), raw.end());
    auto& m = ds.meta;
    m.split = solver::split_from_string(meta.at("split").get<std::string>());
    const auto& p = meta.at("pde");
    m.pde.kind = solver::pde_kind_from_string(p.at("kind").get<std::string>());
    m.pde.nu = p.at("nu").get<double>();
    m.pde.forcing = solver::forcing_from_string(p.at("forcing").get<std::string>());
    m.pde.dim = p.at("dim").get<int>();
    const auto& s = meta.at("solver");
    m.solver.dt = s.at("dt").get<double>();
    m.solver.t_end = s.at("t_end").get<double>();
    m.solver.save_dt = s.at("save_dt").get<double>();
    m.solver.dealias = s.at("dealias").get<bool>();
    m.solver.integrating_factor = s.at("integrating_factor").get<bool>();
    m.generation_grid = grid_from(meta.at("generation_grid"));
    m.seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
    const auto n_traj = meta.at("trajectories").get<std::size_t>();
    const auto per = meta.at("snapshots_per_trajectory").get<std::size_t>();
    if (n_traj * per != f.snapshots.size() || m.seeds.size() != n_traj)
      throw IoError(paths.meta.string() + ": trajectory layout does not match " + paths.container.string());
    ds.grid = f.grid;
    ds.channels = f.channels;
    ds.save_dt = f.cadence;
    ds.trajectories.resize(n_traj);
    for (std::size_t t = 0; t < n_traj; ++t)
      ds.trajectories[t].assign(std::make_move_iterator(f.snapshots.begin() + t * per),
                                std::make_move_iterator(f.snapshots.begin() + (t + 1) * per));
  } catch (const json::exception& e) {
    throw IoError(paths.meta.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace sino::io
