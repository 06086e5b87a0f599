#pragma once

#include "fillup/classifier.hpp"
#include "fillup/common.hpp"
#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/inversion.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fillup::metrics {

struct GaussianSummary {
  Vector mean;
  Matrix cov;  // unbiased (n-1) estimator

  /// Columns of `samples` are observations.
  static GaussianSummary fit(const Matrix& samples);
};

/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}). Throws
/// StageError when a covariance has an eigenvalue below -1e-8.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);
/// Both sets need at least d+1 columns.
double frechet_distance(const Matrix& real, const Matrix& fake);

struct PrReport {
  double precision = 0.0;
  double recall = 0.0;
  int k = 3;
  int n_real = 0;
  int n_fake = 0;
};

/// Squared distance from each column to its k-th nearest neighbour in the
/// same set (self excluded).
std::vector<double> knn_radii_squared(const Matrix& set, int k);

/// k-NN manifold precision and recall; requires n_real > k and n_fake > k.
PrReport precision_recall(const Matrix& real, const Matrix& fake, int k = 3);

struct GroupAccuracy {
  double overall = 0.0;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
  std::vector<double> per_class;
};

/// Group scores are the mean per-class accuracy over the group's classes; a
/// group without classes is absent.
GroupAccuracy group_accuracy(std::span<const int> predictions, std::span<const int> labels,
                             const dataset::ShotGroups& groups);

struct SweepConfig {
  std::vector<double> scales{0.0, 1.0, 2.0, 5.0};
  int n_per_class = 200;
  int k = 3;
  std::uint64_t seed = 0;
  classifier::ClassifierConfig classifier;
  classifier::TrainRecipe recipe;  // downstream fake-only training; loss forced to CE
};

struct SweepRow {
  double w = 0.0;
  double top1 = 0.0;
  double frechet = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// One pooled generation per scale (n_per_class per class), scored against
/// `real_reference` and by a classifier trained on the pool alone and tested
/// on `test`. At w == 0 the pool is plain unconditional sampling.
/// With `feature_extractor` metrics use its penultimate features.
std::vector<SweepRow> guidance_sweep(const diffusion::NoisePredictor& model,
                                     std::span<const inversion::ClassToken> tokens, const Matrix& real_reference,
                                     const classifier::EvalSet& test, const SweepConfig& config,
                                     const classifier::ClassifierModel* feature_extractor = nullptr);

/// Samples and labels for one guidance scale, as used by guidance_sweep.
void sweep_pool(const diffusion::NoisePredictor& model, std::span<const inversion::ClassToken> tokens, double w,
                int n_per_class, std::uint64_t seed, Matrix& x, std::vector<int>& labels);

/// Header `scale,top1,frechet,precision,recall`.
std::string sweep_to_csv(std::span<const SweepRow> rows);

}  // namespace fillup::metrics
