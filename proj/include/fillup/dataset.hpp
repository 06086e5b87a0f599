#pragma once

#include "fillup/common.hpp"
#include "fillup/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fillup::dataset {

struct MixtureComponent {
  Vector mean;
  Vector variance;  // diagonal covariance
  double weight = 0.0;
};

/// Diagonal-Gaussian mixture standing in for one class concept.
struct ClassGenerator {
  int class_id = 0;
  int d_x = 0;
  std::vector<MixtureComponent> components;

  /// Draws one vector; optionally reports which component produced it.
  Vector sample(Rng& rng, int* component = nullptr) const;
  /// Analytic mixture mean.
  Vector mean() const;
  void validate() const;
};

struct GeneratorConfig {
  int K = 10;
  int d_x = 2;
  int components = 3;
  double ring_radius = 2.0;
  /// Component means are offset from the class anchor by up to this radius.
  double jitter = 0.35;
  double component_std = 0.25;
  /// Place class k at ring slot 2k for the first half and 2(k - K/2) + 1 for
  /// the rest, so head and tail indices alternate around the ring.
  bool interleave = true;
  int max_retries = 16;
};

/// Ring slot of class k under `config`.
int ring_slot(const GeneratorConfig& config, int k);

/// Class generators with means on a jittered ring in the first two dimensions.
/// Deterministic per seed. Throws StageError if nearest-mean accuracy on a
/// balanced 1000-per-class draw stays below 0.95 after `max_retries` attempts.
std::vector<ClassGenerator> make_generators(const GeneratorConfig& config, std::uint64_t seed);

/// Accuracy of the nearest-analytic-mean rule on a balanced draw.
double nearest_mean_accuracy(std::span<const ClassGenerator> generators, int per_class, Rng& rng);

/// n_i = round(n_max * IF^(-i/(K-1))), clamped to at least 1.
std::vector<int> longtailed_counts(int K, int n_max, double imbalance_factor);

enum class ShotGroup { many, medium, few };

struct ShotGroups {
  std::vector<ShotGroup> group_of_class;
  /// many: n > many_above; few: n < few_below; medium otherwise.
  double many_above = 100.0;
  double few_below = 20.0;

  std::vector<int> classes_in(ShotGroup g) const;
};

ShotGroups assign_shot_groups(std::span<const int> counts, double scale = 1.0);
/// Scale that puts the group boundaries at n_max/2 and n_max/10.
inline double auto_shot_scale(int n_max) { return n_max / 200.0; }

std::string to_string(ShotGroup g);

enum class Split { train, test };
enum class Source { real, synthetic };

std::string to_string(Split s);
std::string to_string(Source s);

struct Sample {
  Vector x;
  int label = 0;
  Source source = Source::real;
  Split split = Split::train;

  bool operator==(const Sample& o) const {
    return label == o.label && source == o.source && split == o.split && x == o.x;
  }
};

struct LongTailedDataset {
  int K = 0;
  int d_x = 0;
  std::vector<Sample> samples;
  /// Per-class number of (real, train) samples.
  std::vector<int> counts_real;

  /// Recomputes counts_real from the samples.
  void recount();
  /// Throws FormatError if an invariant is broken.
  void validate() const;

  std::vector<int> train_totals() const;
  std::size_t size(Split split) const;
  std::size_t count_source(Split split, Source source) const;

  /// Column matrix plus labels for one split (optionally one source).
  void select(Split split, Matrix& x, std::vector<int>& labels) const;
  void select(Split split, Source source, Matrix& x, std::vector<int>& labels) const;
  /// Train/real samples of one class, one per column.
  Matrix class_samples(int label) const;
};

/// Train split holds exactly counts[i] real samples of class i, test split
/// n_test_per_class of each class. Each class draws from its own substream.
LongTailedDataset draw_dataset(std::span<const ClassGenerator> generators, std::span<const int> counts,
                               int n_test_per_class, std::uint64_t seed);

/// CSV with header `split,source,label,x0,...`, 9 significant digits.
std::string to_csv(const LongTailedDataset& data);
LongTailedDataset from_csv(const std::string& text, int K);
void write_csv(const std::filesystem::path& path, const LongTailedDataset& data);
LongTailedDataset read_csv(const std::filesystem::path& path, int K);

nlohmann::json generators_to_json(std::span<const ClassGenerator> generators);
std::vector<ClassGenerator> generators_from_json(const nlohmann::json& j);

/// Shortest representation used by every CSV writer in the project.
std::string format_real(double v);

}  // namespace fillup::dataset
