#include "rpsm/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <unordered_map>

namespace rpsm {

namespace {

constexpr std::array<char, 4> kMagic{'R', 'P', 'S', 'M'};

template <typename UInt>
void put_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw CheckpointError("truncated checkpoint: " + path.string());
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& record : records) {
    if (numel(record.shape) != record.values.size()) {
      throw CheckpointError("record '" + record.name + "' has shape " + shape_string(record.shape) + " but " +
                            std::to_string(record.values.size()) + " values");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(record.name.size()));
    out.write(record.name.data(), static_cast<std::streamsize>(record.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(record.shape.size()));
    for (auto extent : record.shape) put_le<std::uint64_t>(out, extent);
    for (double v : record.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());

  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError("not an RPSM checkpoint: " + path.string());
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto count = get_le<std::uint32_t>(in, path);
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    CheckpointRecord record;
    record.name.resize(get_le<std::uint32_t>(in, path));
    if (!in.read(record.name.data(), static_cast<std::streamsize>(record.name.size()))) {
      throw CheckpointError("truncated checkpoint: " + path.string());
    }
    const auto rank = get_le<std::uint32_t>(in, path);
    for (std::uint32_t d = 0; d < rank; ++d) record.shape.push_back(get_le<std::uint64_t>(in, path));
    record.values.resize(numel(record.shape));
    for (auto& v : record.values) v = std::bit_cast<double>(get_le<std::uint64_t>(in, path));
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<CheckpointRecord> to_records(const ParameterList& params) {
  std::vector<CheckpointRecord> records;
  records.reserve(params.size());
  for (const auto& p : params) {
    records.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return records;
}

void assign_records(const std::vector<CheckpointRecord>& records, ParameterList& params) {
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint has no record for parameter '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw CheckpointError("parameter '" + p.name + "' expects " + shape_string(p.tensor.shape()) +
                            ", checkpoint holds " + shape_string(it->second->shape));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace rpsm
