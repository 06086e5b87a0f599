#pragma once

#include "fillup/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fillup::run {

/// Ordered main-pipeline stage names.
const std::vector<std::string>& stage_names();

struct StageRecord {
  bool done = false;
  /// Hash of the stage's config slice, seed and input checksums.
  std::string fingerprint;
  /// Artifact path relative to the run directory -> FNV-1a hex of its bytes.
  std::map<std::string, std::string> artifacts;
};

struct RunManifest {
  static constexpr int kVersion = 1;
  std::string run_id;
  std::uint64_t seed = 0;
  std::string config_text;
  std::map<std::string, StageRecord> stages;

  bool done(const std::string& stage) const;
  const StageRecord* find(const std::string& stage) const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);

  /// Written through a temporary file and renamed into place.
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

/// Throws ArtifactConflict naming the first artifact that is missing or whose
/// checksum differs from the record.
void verify_artifacts(const std::filesystem::path& run_dir, const StageRecord& record);

/// Exclusive advisory lock on <run_dir>/.lock, released on destruction.
/// Throws ArtifactConflict when another process holds it.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace fillup::run
