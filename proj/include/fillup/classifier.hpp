#pragma once

#include "fillup/common.hpp"
#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/learncore.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fillup::classifier {

using diffusion::LossAndGrad;

struct ClassifierConfig {
  int d_x = 2;
  int K = 10;
  std::vector<int> hidden{64, 64};
  int feature_width = 32;
};

/// ReLU backbone (d_x -> hidden... -> feature_width) and a linear head
/// (feature_width -> K logits). Flat parameters are backbone then head.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  int classes() const { return config_.K; }
  const learn::Mlp& backbone() const { return backbone_; }
  const learn::Mlp& head() const { return head_; }

  Matrix features(const Matrix& x) const { return backbone_.forward(x); }
  Matrix logits(const Matrix& x) const { return head_.forward(backbone_.forward(x)); }

  std::size_t parameter_count() const { return backbone_.parameter_count() + head_.parameter_count(); }
  std::size_t backbone_parameter_count() const { return backbone_.parameter_count(); }
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& p);
  std::uint64_t backbone_checksum() const;
  std::uint64_t checksum() const;

  /// Header records the backbone and head parameter ranges.
  void save(const std::filesystem::path& path, std::uint64_t seed) const;
  static ClassifierModel load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_;
  learn::Mlp backbone_;
  learn::Mlp head_;
};

/// phi_j = n_j exp(eta_j) / sum_i n_i exp(eta_i), max-shifted.
Vector balanced_softmax(const Vector& logits, std::span<const double> counts);
Vector softmax(const Vector& logits);

/// Cross-entropy against log-prior-adjusted logits. An empty `counts` gives
/// plain cross-entropy. Gradient over flat_parameters().
LossAndGrad bs_loss(const ClassifierModel& model, const Matrix& x, std::span<const int> labels,
                    std::span<const double> counts);
LossAndGrad ce_loss(const ClassifierModel& model, const Matrix& x, std::span<const int> labels);

enum class Stage { stage1, stage2_full, stage2_crt, stage2_naive };
enum class LossKind { ce, balanced_softmax };
enum class SamplerKind { instance, class_balanced };

std::string to_string(Stage s);
std::string to_string(LossKind l);
std::string to_string(SamplerKind s);
LossKind loss_from_string(const std::string& s);
SamplerKind sampler_from_string(const std::string& s);

struct TrainRecipe {
  Stage stage = Stage::stage1;
  LossKind loss = LossKind::balanced_softmax;
  SamplerKind sampler = SamplerKind::instance;
  int epochs = 60;
  int batch_size = 64;
  learn::LrSchedule schedule{learn::ScheduleKind::step_decay, 0.1, 0.1, 20, 0};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Std of Gaussian input jitter; 0 disables it.
  double jitter = 0.0;
  /// Real per-class counts used as the Balanced Softmax prior.
  std::vector<int> bs_counts;

  void validate(int K) const;
};

struct EvalSet {
  Matrix x;
  std::vector<int> labels;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> test_accuracy;  // empty without an eval set
};

/// Index of the largest entry; ties go to the lowest index.
int argmax(const Vector& logits);
int predict(const ClassifierModel& model, const Vector& x);
std::vector<int> predict(const ClassifierModel& model, const Matrix& x);
double accuracy(const ClassifierModel& model, const EvalSet& eval);

/// Uniform class, then uniform sample within the class.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(std::span<const int> labels, int K);
  std::vector<std::size_t> next(int batch_size, Rng& rng) const;

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<int> nonempty_;
};

/// `n_batches` batches of sample indices from a ClassBalancedSampler.
std::vector<std::vector<std::size_t>> class_balanced_batches(std::span<const int> labels, int K, int batch_size,
                                                             int n_batches, Rng& rng);

/// Generic loop behind both stages. The whole model trains unless the
/// recipe is stage2_crt, which updates the head only.
TrainHistory train_classifier(ClassifierModel& model, const Matrix& x, std::span<const int> labels,
                              const TrainRecipe& recipe, std::uint64_t seed, const EvalSet* eval = nullptr);

/// Stage I on a filled train split (real and synthetic). With Balanced Softmax
/// the recipe's bs_counts must equal the dataset's real counts.
TrainHistory train_stage1(ClassifierModel& model, const dataset::LongTailedDataset& filled, const TrainRecipe& recipe,
                          std::uint64_t seed, const EvalSet* eval = nullptr);

/// Stage II fine-tuning on real data only; any synthetic train sample is
/// rejected with StageError.
TrainHistory train_stage2(ClassifierModel& model, const dataset::LongTailedDataset& real, const TrainRecipe& recipe,
                          std::uint64_t seed, const EvalSet* eval = nullptr);

}  // namespace fillup::classifier
