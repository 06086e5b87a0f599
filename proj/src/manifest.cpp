#include "fillup/manifest.hpp"

#include "fillup/checksum.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fillup::run {

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth-data", "train-diffusion", "invert",       "generate",
                                              "fill",       "train-stage1",    "train-stage2", "evaluate"};
  return names;
}

bool RunManifest::done(const std::string& stage) const {
  const auto* r = find(stage);
  return r && r->done;
}

const StageRecord* RunManifest::find(const std::string& stage) const {
  auto it = stages.find(stage);
  return it == stages.end() ? nullptr : &it->second;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["version"] = kVersion;
  j["run_id"] = run_id;
  j["seed"] = seed;
  j["config"] = config_text;
  j["stages"] = nlohmann::json::object();
  for (const auto& [name, r] : stages) {
    nlohmann::json s;
    s["done"] = r.done;
    s["fingerprint"] = r.fingerprint;
    s["artifacts"] = r.artifacts;
    j["stages"][name] = s;
  }
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kVersion) throw FormatError("unsupported manifest version");
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_text = j.at("config").get<std::string>();
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.done = s.at("done").get<bool>();
      r.fingerprint = s.at("fingerprint").get<std::string>();
      r.artifacts = s.at("artifacts").get<std::map<std::string, std::string>>();
      m.stages[name] = std::move(r);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

void RunManifest::save(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + tmp.string());
    out << to_json().dump(2) << "\n";
    if (!out) throw StageError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

void verify_artifacts(const std::filesystem::path& run_dir, const StageRecord& record) {
  for (const auto& [rel, hex] : record.artifacts) {
    const auto p = run_dir / rel;
    if (!std::filesystem::exists(p)) throw ArtifactConflict("recorded artifact is missing: " + rel);
    if (to_hex(file_checksum(p)) != hex) throw ArtifactConflict("artifact checksum differs from manifest: " + rel);
  }
}

RunLock::RunLock(const std::filesystem::path& run_dir) {
  const auto p = run_dir / ".lock";
  fd_ = ::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StageError("cannot open lock file " + p.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ArtifactConflict("run directory is locked by another process: " + run_dir.string());
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace fillup::run
