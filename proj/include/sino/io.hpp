#pragma once

// Binary containers for datasets and checkpoints.
//
// Field container (all integers and floats little-endian):
//   "SINODATA" | u32 version=1 | u8 ndim | u32 channels | u64 points[ndim]
//   | f64 lengths[ndim] | u64 snapshots | f64 cadence
//   | f64 payload (snapshot-major, then channel-major, then row-major)
//   | u32 CRC-32 of the payload bytes
//
// Checkpoint container:
//   "SINOCKPT" | u32 version=1 | u64 config length | config text (canonical JSON)
//   | u64 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data
//   | u32 CRC-32 of every byte after the magic and before the checksum

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sino/model.hpp"
#include "sino/solvers.hpp"
#include "sino/spectral.hpp"

namespace sino::io {

std::uint32_t crc32(std::span<const unsigned char> bytes);

/// Writes to a temporary sibling then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
std::vector<unsigned char> read_file(const std::filesystem::path& path);

struct FieldFile {
  GridSpec grid;
  int channels = 0;
  double cadence = 0.0;
  std::vector<RealField> snapshots;
};

std::vector<unsigned char> encode_fields(const FieldFile& f);
/// Throws IoError on a bad magic/version, wrong length or CRC mismatch.
FieldFile decode_fields(std::span<const unsigned char> bytes, const std::string& what = "field container");
void write_fields(const std::filesystem::path& path, const FieldFile& f);
FieldFile read_fields(const std::filesystem::path& path);

struct Checkpoint {
  std::string config;  // canonical text echo
  std::map<std::string, model::Tensor> tensors;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes, const std::string& what = "checkpoint");
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Adds every parameter tensor under `prefix` + name.
void put_params(Checkpoint& c, const model::SinoParams& p, const std::string& prefix = "");
/// Rebuilds parameters for `cfg` from tensors under `prefix`; with `exact`,
/// any other tensor under that prefix is an error.
model::SinoParams get_params(const Checkpoint& c, const model::ModelConfig& cfg, const std::string& prefix = "",
                             bool exact = true);

/// A dataset split is stored as `<name>.sinodata` (snapshots trajectory-major)
/// plus a `<name>.meta.json` sidecar with the PDE, solver, seeds and the
/// number of snapshots per trajectory.
struct DatasetPaths {
  std::filesystem::path container;
  std::filesystem::path meta;
};
DatasetPaths dataset_paths(const std::filesystem::path& dir, const std::string& name);

/// Returns the files written, container first.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const std::string& name,
                                                 const solver::TrajectoryDataset& ds);
solver::TrajectoryDataset read_dataset(const std::filesystem::path& dir, const std::string& name);

/// Lower-case hexadecimal, zero padded to 8 digits.
std::string crc_hex(std::uint32_t crc);

}  // namespace sino::io
