#pragma once

#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/inversion.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fillup::fill {

enum class FillStrategy { under, balance, over, addon };

/// "A", "B", "C", "D"
std::string to_string(FillStrategy s);
/// Accepts A/B/C/D as well as under/balance/over/addon.
FillStrategy strategy_from_string(const std::string& s);

struct FillPlan {
  FillStrategy strategy = FillStrategy::balance;
  int target = 0;  // unused for D
  int addon = 0;   // D only
  std::vector<int> synth_counts;

  int total() const;
};

inline constexpr double kUnderFraction = 0.5;
inline constexpr double kOverFraction = 1.3;

/// Per-class synthetic quotas. Without an explicit value the target is
/// round(0.5 max) for A, max for B and round(1.3 max) for C. D requires the
/// addon count.
FillPlan plan_fill(std::span<const int> counts_real, FillStrategy strategy, std::optional<int> target_or_addon = {});

nlohmann::json plan_to_json(const FillPlan& plan);
FillPlan plan_from_json(const nlohmann::json& j);

/// Generated samples with provenance, all tagged source=synthetic.
struct SamplePool {
  int d_x = 0;
  std::vector<dataset::Sample> samples;
  std::vector<std::string> token_kind;  // per sample
  std::vector<double> w;                // per sample

  std::vector<int> per_class(int K) const;
};

/// Exactly plan.synth_counts[i] samples of class i, drawn with
/// generate_from_snapshots at guidance w from class substreams of `seed`.
/// tokens[i] may be empty only for classes with a zero quota.
SamplePool realize_plan(const FillPlan& plan, std::span<const std::optional<inversion::ClassToken>> tokens,
                        const diffusion::NoisePredictor& model, double w, std::uint64_t seed,
                        const std::string& token_kind = "inverted");

/// Adds the pool to the train split. Real samples, counts_real and the test
/// split are left unchanged.
dataset::LongTailedDataset merge(const dataset::LongTailedDataset& real, const SamplePool& pool);

/// CSV `label,token_kind,w,x0,...`.
std::string pool_to_csv(const SamplePool& pool);
SamplePool pool_from_csv(const std::string& text);
void write_pool(const std::filesystem::path& path, const SamplePool& pool);
SamplePool read_pool(const std::filesystem::path& path);

}  // namespace fillup::fill
