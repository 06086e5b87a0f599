#pragma once

#include "fillup/config.hpp"
#include "fillup/manifest.hpp"
#include "fillup/metrics.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fillup::pipeline {

enum class AblationTable { fill_strategies, stage2_variants, guidance_sweep, capacity_sweep, steps_sweep, quota_sweep };
std::string to_string(AblationTable t);
/// Throws ConfigError for an unknown name.
AblationTable ablation_from_string(const std::string& s);

/// Runs root: $FILLUP_RUNS_DIR when set, else ./runs.
std::filesystem::path default_runs_root();

struct OpenOptions {
  std::filesystem::path runs_root;
  std::optional<std::string> run_id;
  /// Explicit config; otherwise the run's stored config, otherwise defaults.
  std::optional<config::Config> config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  /// When false, opening a run without a manifest is a ConfigError.
  bool create = true;
};

/// One row of a `method,overall,many,medium,few` table. Absent groups are
/// written as empty fields.
struct ScoreRow {
  std::string method;
  metrics::GroupAccuracy scores;
};
std::string score_table_csv(const std::string& key, const std::vector<ScoreRow>& rows);

/// A run directory under the runs root with its manifest and lock. Stage
/// methods build missing prerequisites first, skip stages whose fingerprint
/// and artifacts match the manifest, and refuse to replace artifacts built
/// from different inputs unless `force` is set.
class Run {
 public:
  static std::unique_ptr<Run> open(const OpenOptions& options, std::ostream& log);
  ~Run();

  const std::filesystem::path& dir() const { return dir_; }
  const config::Config& config() const { return cfg_; }
  const run::RunManifest& manifest() const { return manifest_; }

  void synth_data();
  void train_diffusion();
  void invert();
  void generate();
  void fill();
  void train_stage1();
  void train_stage2();
  void evaluate();
  /// Every main stage in order.
  void pipeline();
  /// Writes reports/ablation_<table>.csv and returns its path.
  std::filesystem::path ablation(AblationTable table);
  /// Stage status plus headline tables; also writes plot_*.csv series.
  std::string report();
  /// Rebuilds the main stages from the stored config in <run>/.verify and
  /// compares every artifact checksum. Returns true when all match.
  bool verify();

 private:
  Run() = default;
  bool run_stage(const std::string& name, const std::string& fingerprint,
                 const std::function<std::vector<std::string>()>& body);
  std::string fingerprint(const std::string& stage, const std::vector<std::string>& sections,
                          const std::vector<std::string>& upstream) const;
  std::string artifact_sum(const std::string& stage) const;
  void persist();
  void ensure(const std::string& stage);

  std::filesystem::path dir_;
  config::Config cfg_;
  run::RunManifest manifest_;
  bool force_ = false;
  std::ostream* log_ = nullptr;
  std::unique_ptr<run::RunLock> lock_;
};

// Artifact locations relative to the run directory.
namespace paths {
inline const char* dataset_csv = "data/dataset.csv";
inline const char* dataset_json = "data/dataset.json";
inline const char* filled_csv = "data/filled.csv";
inline const char* denoiser = "diffusion/denoiser.ckpt";
inline const char* diffusion_loss = "diffusion/loss.csv";
inline const char* token_summary = "tokens/summary.csv";
inline const char* plan_json = "pools/plan.json";
inline const char* pool_csv = "pools/pool.csv";
inline const char* stage1_ckpt = "classifier/stage1.ckpt";
inline const char* stage1_history = "classifier/stage1_history.csv";
inline const char* stage2_ckpt = "classifier/stage2.ckpt";
inline const char* stage2_history = "classifier/stage2_history.csv";
inline const char* evaluation_csv = "reports/evaluation.csv";
inline const char* per_class_csv = "reports/per_class.csv";
std::string token(int class_id);
std::string ablation(AblationTable table);
}  // namespace paths

}  // namespace fillup::pipeline
