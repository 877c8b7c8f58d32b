#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpsm/layers.hpp"

namespace rpsm {

/// Binary checkpoint container, all integers and values little-endian:
///
///   "RPSM"                      4 bytes magic
///   u32 version                 currently 1
///   u32 record_count
///   record_count × {
///     u32 name_length, name bytes (UTF-8, no terminator)
///     u32 rank, rank × u64 extents
///     product(extents) × f64 values (IEEE-754 binary64)
///   }
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointRecord> to_records(const ParameterList& params);

/// Copies matching records into the parameters. Every parameter must have a
/// record with the same name and shape; extra records are ignored.
void assign_records(const std::vector<CheckpointRecord>& records, ParameterList& params);

}  // namespace rpsm
