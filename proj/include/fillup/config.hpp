#pragma once

#include "fillup/classifier.hpp"
#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/fillup.hpp"
#include "fillup/inversion.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fillup::config {

struct DatasetSection {
  int K = 10;
  int d_x = 2;
  int n_max = 200;
  double imbalance_factor = 100.0;
  int n_test_per_class = 200;
  int components = 3;
  double ring_radius = 2.0;
  double jitter = 0.35;
  double component_std = 0.25;
  bool interleave = true;
  /// Shot-group thresholds are 100*scale and 20*scale; empty means n_max/200.
  std::optional<double> shot_scale;

  bool operator==(const DatasetSection&) const = default;
};

struct DiffusionSection {
  int d_c = 16;
  int n_freq = 6;
  int hidden = 128;
  int depth = 3;
  int T = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  int epochs = 1000;
  int batch_size = 64;
  double lr = 2e-3;
  double p_uncond = 0.1;

  bool operator==(const DiffusionSection&) const = default;
};

struct InversionSection {
  double lr = 5e-2;
  int batch_size = 2;
  int multiplier = 10;
  int lo = 200;
  int hi = 1000;
  int snapshot_every = 50;
  inversion::TokenInit init = inversion::TokenInit::mean_of_learned;

  bool operator==(const InversionSection&) const = default;
};

struct FillupSection {
  fill::FillStrategy strategy = fill::FillStrategy::over;
  /// Explicit target for A/B/C; empty uses the strategy default.
  std::optional<int> target;
  /// Per-class quota for strategy D.
  int addon = 200;
  double guidance = 1.0;

  bool operator==(const FillupSection&) const = default;
};

enum class Stage2Variant { full, crt, naive, class_balanced };
std::string to_string(Stage2Variant v);
Stage2Variant stage2_variant_from_string(const std::string& s);

struct ClassifierSection {
  std::vector<int> hidden{64, 64};
  int feature_width = 32;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double jitter = 0.0;

  classifier::LossKind stage1_loss = classifier::LossKind::balanced_softmax;
  int stage1_epochs = 60;
  double stage1_lr = 0.1;
  double stage1_decay = 0.1;
  int stage1_period = 20;
  int stage1_warmup = 0;

  Stage2Variant stage2_variant = Stage2Variant::full;
  classifier::LossKind stage2_loss = classifier::LossKind::balanced_softmax;
  int stage2_epochs = 20;
  double stage2_lr = 1e-3;
  double stage2_decay = 0.1;
  int stage2_period = 7;
  int stage2_warmup = 5;

  bool operator==(const ClassifierSection&) const = default;
};

enum class FeatureSpace { raw, classifier };

struct MetricsSection {
  int k = 3;
  int n_per_class = 200;
  std::vector<double> scales{0.0, 1.0, 2.0, 5.0};
  FeatureSpace features = FeatureSpace::raw;

  bool operator==(const MetricsSection&) const = default;
};

/// Grids for the sweep tables. Sweep rows train Stage I with cross-entropy on
/// the real data plus a strategy-D pool of `quota` samples per class.
struct AblationSection {
  std::vector<int> capacity{4, 16, 64};
  std::vector<int> steps{50, 100, 200, 400};
  std::vector<int> quotas{100, 200, 400};
  int quota = 200;

  bool operator==(const AblationSection&) const = default;
};

struct Config {
  std::string run_id = "default";
  std::uint64_t seed = 0;
  DatasetSection dataset;
  DiffusionSection diffusion;
  InversionSection inversion;
  FillupSection fillup;
  ClassifierSection classifier;
  MetricsSection metrics;
  AblationSection ablation;

  void validate() const;
  bool operator==(const Config&) const = default;
};

/// INI text with sections run, dataset, diffusion, inversion, fillup,
/// classifier, metrics and ablation. Missing keys keep their defaults;
/// unknown sections or keys are a ConfigError.
Config parse(const std::string& text);
Config load(const std::filesystem::path& path);
/// Canonical form: every key in fixed order, doubles in shortest round-trip form.
std::string serialize(const Config& config);

// Module configs derived from the run config.
dataset::GeneratorConfig generator_config(const Config& c);
double shot_scale(const Config& c);
diffusion::DenoiserConfig denoiser_config(const Config& c);
diffusion::DiffusionTrainConfig diffusion_train_config(const Config& c);
inversion::InversionConfig inversion_config(const Config& c, int n_images);
classifier::ClassifierConfig classifier_config(const Config& c);
classifier::TrainRecipe stage1_recipe(const Config& c, std::vector<int> real_counts);
classifier::TrainRecipe stage2_recipe(const Config& c, std::vector<int> real_counts, Stage2Variant variant);

}  // namespace fillup::config
