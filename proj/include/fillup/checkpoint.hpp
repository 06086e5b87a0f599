#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fillup {

/// Binary container shared by model checkpoints and token files.
///
/// Layout: 8-byte magic "FILLUPCK", uint64 little-endian header length,
/// UTF-8 JSON header, then the parameter blob as little-endian float32.
/// The header always carries "version", "param_count" and "blob_checksum"
/// (FNV-1a 64 over the blob bytes, hex).
struct Checkpoint {
  nlohmann::json header;
  std::vector<float> blob;

  std::vector<double> as_doubles() const { return {blob.begin(), blob.end()}; }
};

inline constexpr int kCheckpointVersion = 1;

std::vector<std::byte> encode_checkpoint(nlohmann::json header, std::span<const double> params);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, std::span<const double> params);
/// Throws FormatError on bad magic, truncation or checksum mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Checksum of the float32 encoding of `params`, identical to the
/// "blob_checksum" a checkpoint of them would carry.
std::uint64_t blob_checksum(std::span<const double> params);

}  // namespace fillup
